//! Conditional normalizing flows over the latent space.
//!
//! A [`FlowStack`] maps a latent `x` to a base variable `z ~ N(0, I)` through
//! K conditional layers (RealNVP coupling or MAF). Densities follow from the
//! change of variables: log p(x | h) = log N(z; 0, I) + Σ log|det J_k|.

mod coupling;
mod maf;

pub use coupling::{BoundCoupling, CouplingLayer};
pub use maf::{BoundMaf, MafLayer};

use serde::{Deserialize, Serialize};

use crate::diffmath::{ReduceKind, Tape, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::neural::Parameterized;
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    #[default]
    #[serde(rename = "realnvp")]
    RealNvp,
    Maf,
}

impl std::str::FromStr for FlowKind {
    type Err = LatteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "realnvp" | "real_nvp" | "real-nvp" => Ok(FlowKind::RealNvp),
            "maf" => Ok(FlowKind::Maf),
            other => Err(LatteError::config(format!("unknown flow kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowLayer {
    Coupling(CouplingLayer),
    Maf(MafLayer),
}

#[derive(Debug, Clone)]
pub enum BoundLayer {
    Coupling(BoundCoupling),
    Maf(BoundMaf),
}

impl BoundLayer {
    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var)> {
        match self {
            BoundLayer::Coupling(l) => l.forward(tape, x, h),
            BoundLayer::Maf(l) => l.forward(tape, x, h),
        }
    }

    pub fn inverse(&self, tape: &mut Tape, z: Var, h: Var) -> Result<Var> {
        match self {
            BoundLayer::Coupling(l) => l.inverse(tape, z, h),
            BoundLayer::Maf(l) => l.inverse(tape, z, h),
        }
    }
}

/// Ordered conditional flow layers with an isotropic standard-normal base.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    dim: usize,
    cond_dim: usize,
    layers: Vec<FlowLayer>,
}

impl FlowStack {
    /// `depth` layers of `kind` with nets of width `hidden`. Coupling layers
    /// alternate which half is transformed; MAF layers alternate ordering.
    pub fn new(
        kind: FlowKind,
        dim: usize,
        cond_dim: usize,
        depth: usize,
        hidden: usize,
        scale_clamp: Option<f64>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(LatteError::config("flow depth must be at least 1"));
        }
        let layers = (0..depth)
            .map(|k| {
                let prefix = format!("flow.{k}");
                let odd = k % 2 == 1;
                Ok(match kind {
                    FlowKind::RealNvp => FlowLayer::Coupling(CouplingLayer::new(
                        &prefix,
                        dim,
                        cond_dim,
                        hidden,
                        odd,
                        scale_clamp,
                        rng,
                    )?),
                    FlowKind::Maf => {
                        FlowLayer::Maf(MafLayer::new(&prefix, dim, cond_dim, hidden, odd, scale_clamp, rng)?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, cond_dim, layers })
    }

    pub fn from_layers(dim: usize, cond_dim: usize, layers: Vec<FlowLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LatteError::config("flow needs at least one layer"));
        }
        for l in &layers {
            let d = match l {
                FlowLayer::Coupling(c) => c.dim(),
                FlowLayer::Maf(m) => m.dim(),
            };
            if d != dim {
                return Err(LatteError::dim(format!("layer of dimension {d} in a {dim}-d flow")));
            }
        }
        Ok(Self { dim, cond_dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [FlowLayer] {
        &mut self.layers
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundFlow> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    FlowLayer::Coupling(c) => BoundLayer::Coupling(c.bind(tape)?),
                    FlowLayer::Maf(m) => BoundLayer::Maf(m.bind(tape)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundFlow { dim: self.dim, layers })
    }

    /// log p(x | h) per row, computed on a private tape.
    pub fn log_prob(&self, x: &Tensor, h: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let flow = self.bind(&mut tape)?;
        let xv = tape.constant(x.clone())?;
        let hv = tape.constant(h.clone())?;
        let lp = flow.log_prob(&mut tape, xv, hv)?;
        Ok(tape.value(lp).data().to_vec())
    }

    /// Runs the layers one by one, returning z and each layer's log-det.
    pub fn forward_layers(&self, x: &Tensor, h: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let flow = self.bind(&mut tape)?;
        let mut cur = tape.constant(x.clone())?;
        let hv = tape.constant(h.clone())?;
        let mut logdets = Vec::new();
        for l in &flow.layers {
            let (next, ld) = l.forward(&mut tape, cur, hv)?;
            logdets.push(tape.value(ld).data().to_vec());
            cur = next;
        }
        Ok((tape.value(cur).clone(), logdets))
    }

    /// Maps base noise `z` to latent samples given `h`.
    pub fn transform_noise(&self, z: &Tensor, h: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let flow = self.bind(&mut tape)?;
        let zv = tape.constant(z.clone())?;
        let hv = tape.constant(h.clone())?;
        let x = flow.inverse(&mut tape, zv, hv)?;
        Ok(tape.value(x).clone())
    }

    /// One sample per row of `h`, noise drawn from `rng` row by row.
    pub fn sample(&self, h: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        let batch = h.shape().first().copied().unwrap_or(0);
        let z = Tensor::new(vec![batch, self.dim], rng.normal_vec(batch * self.dim))?;
        self.transform_noise(&z, h)
    }
}

impl Parameterized for FlowStack {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for l in &self.layers {
            match l {
                FlowLayer::Coupling(c) => c.visit_params(f),
                FlowLayer::Maf(m) => m.visit_params(f),
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for l in &mut self.layers {
            match l {
                FlowLayer::Coupling(c) => c.visit_params_mut(f),
                FlowLayer::Maf(m) => m.visit_params_mut(f),
            }
        }
    }
}

/// A [`FlowStack`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundFlow {
    dim: usize,
    layers: Vec<BoundLayer>,
}

impl BoundFlow {
    /// x → (z, Σ log-det) through all layers.
    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var)> {
        let mut cur = x;
        let mut total: Option<Var> = None;
        for l in &self.layers {
            let (next, ld) = l.forward(tape, cur, h)?;
            total = Some(match total {
                Some(t) => tape.add(t, ld)?,
                None => ld,
            });
            cur = next;
        }
        Ok((cur, total.expect("non-empty flow")))
    }

    pub fn log_prob(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let (z, logdet) = self.forward(tape, x, h)?;
        let base = base_log_prob(tape, z)?;
        tape.add(base, logdet)
    }

    /// z → x, layers applied in reverse.
    pub fn inverse(&self, tape: &mut Tape, z: Var, h: Var) -> Result<Var> {
        let zs = tape.shape(z);
        if zs.len() != 2 || zs[1] != self.dim {
            return Err(LatteError::dim(format!(
                "flow expects [B, {}] noise, got {:?}",
                self.dim, zs
            )));
        }
        let mut cur = z;
        for l in self.layers.iter().rev() {
            cur = l.inverse(tape, cur, h)?;
        }
        Ok(cur)
    }
}

/// Standard-normal log density per row: −(D/2)·ln 2π − ½‖z‖².
pub fn base_log_prob(tape: &mut Tape, z: Var) -> Result<Var> {
    let shape = tape.shape(z);
    if shape.len() != 2 {
        return Err(LatteError::dim(format!("base density expects [B, D], got {shape:?}")));
    }
    let d = shape[1] as f64;
    let sq = tape.square(z)?;
    let norm = tape.reduce(sq, ReduceKind::Sum, Some(1))?;
    let half = tape.scale(norm, -0.5)?;
    tape.add_scalar(half, -0.5 * d * LN_2PI)
}
