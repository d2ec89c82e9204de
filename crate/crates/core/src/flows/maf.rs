use crate::diffmath::{ReduceKind, Tape, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::neural::{glorot_uniform, Parameterized};
use crate::rng::SeededRng;

/// Masked autoregressive layer with a single hidden MADE block.
///
/// For each coordinate i, (μ_i, α_i) depend only on coordinates that come
/// earlier in the layer's ordering, plus the conditioner `h`. The density
/// direction is `z_i = (x_i − μ_i) · exp(−α_i)`, so log|det J| = −Σ α_i.
///
/// Hidden unit k carries degree k mod D (0..D−1) and sees input coordinates
/// of rank ≤ degree; output coordinate of rank r sees hidden units with
/// degree < r. Degree-0 units see only `h`, so D = 1 is supported.
#[derive(Debug, Clone, PartialEq)]
pub struct MafLayer {
    prefix: String,
    dim: usize,
    cond_dim: usize,
    hidden: usize,
    /// rank (1-based) of each coordinate in the autoregressive ordering
    ranks: Vec<usize>,
    input_weight: Tensor,
    cond_weight: Tensor,
    hidden_bias: Tensor,
    shift_weight: Tensor,
    shift_bias: Tensor,
    log_scale_weight: Tensor,
    log_scale_bias: Tensor,
    input_mask: Tensor,
    output_mask: Tensor,
    scale_clamp: Option<f64>,
}

impl MafLayer {
    /// `reversed` flips the ordering so stacked layers alternate direction.
    /// Output weights start at zero, making the layer the identity.
    pub fn new(
        prefix: &str,
        dim: usize,
        cond_dim: usize,
        hidden: usize,
        reversed: bool,
        scale_clamp: Option<f64>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(LatteError::config(format!(
                "MAF layer needs positive dimension and width (dim {dim}, hidden {hidden})"
            )));
        }
        if let Some(c) = scale_clamp {
            if !(c > 0.0) {
                return Err(LatteError::config(format!("scale clamp must be positive, got {c}")));
            }
        }
        let ranks: Vec<usize> = if reversed {
            (0..dim).map(|i| dim - i).collect()
        } else {
            (1..=dim).collect()
        };
        let degrees: Vec<usize> = (0..hidden).map(|k| k % dim).collect();
        let mut input_mask = Tensor::zeros(&[dim, hidden]);
        let mut output_mask = Tensor::zeros(&[hidden, dim]);
        for i in 0..dim {
            for (k, &deg) in degrees.iter().enumerate() {
                if ranks[i] <= deg {
                    input_mask.data_mut()[i * hidden + k] = 1.0;
                }
                if deg < ranks[i] {
                    output_mask.data_mut()[k * dim + i] = 1.0;
                }
            }
        }
        Ok(Self {
            prefix: prefix.to_string(),
            dim,
            cond_dim,
            hidden,
            ranks,
            input_weight: glorot_uniform(dim, hidden, rng),
            cond_weight: glorot_uniform(cond_dim, hidden, rng),
            hidden_bias: Tensor::zeros(&[hidden]),
            shift_weight: Tensor::zeros(&[hidden, dim]),
            shift_bias: Tensor::zeros(&[dim]),
            log_scale_weight: Tensor::zeros(&[hidden, dim]),
            log_scale_bias: Tensor::zeros(&[dim]),
            input_mask,
            output_mask,
            scale_clamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates in the order they are generated when sampling.
    pub fn generation_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by_key(|&i| self.ranks[i]);
        order
    }

    fn named(&self) -> [(String, &Tensor); 7] {
        let p = &self.prefix;
        [
            (format!("{p}.input.weight"), &self.input_weight),
            (format!("{p}.cond.weight"), &self.cond_weight),
            (format!("{p}.hidden.bias"), &self.hidden_bias),
            (format!("{p}.shift.weight"), &self.shift_weight),
            (format!("{p}.shift.bias"), &self.shift_bias),
            (format!("{p}.log_scale.weight"), &self.log_scale_weight),
            (format!("{p}.log_scale.bias"), &self.log_scale_bias),
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundMaf> {
        let named = self.named();
        let mut vars = Vec::with_capacity(7);
        for (name, t) in named {
            vars.push(tape.param(name, t)?);
        }
        let input_mask = tape.constant(self.input_mask.clone())?;
        let output_mask = tape.constant(self.output_mask.clone())?;
        Ok(BoundMaf {
            dim: self.dim,
            cond_dim: self.cond_dim,
            order: self.generation_order(),
            params: vars.try_into().expect("seven params"),
            input_mask,
            output_mask,
            scale_clamp: self.scale_clamp,
        })
    }

    /// Makes every weight (including the zero-initialized output layer)
    /// random, respecting the masks. Used by tests that need a non-trivial layer.
    pub fn randomize(&mut self, scale: f64, rng: &mut SeededRng) {
        self.visit_params_mut(&mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v = scale * rng.normal());
        });
    }
}

impl Parameterized for MafLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, t) in self.named() {
            f(&name, t);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let p = self.prefix.clone();
        f(&format!("{p}.input.weight"), &mut self.input_weight);
        f(&format!("{p}.cond.weight"), &mut self.cond_weight);
        f(&format!("{p}.hidden.bias"), &mut self.hidden_bias);
        f(&format!("{p}.shift.weight"), &mut self.shift_weight);
        f(&format!("{p}.shift.bias"), &mut self.shift_bias);
        f(&format!("{p}.log_scale.weight"), &mut self.log_scale_weight);
        f(&format!("{p}.log_scale.bias"), &mut self.log_scale_bias);
    }
}

#[derive(Debug, Clone)]
pub struct BoundMaf {
    dim: usize,
    cond_dim: usize,
    order: Vec<usize>,
    params: [Var; 7],
    input_mask: Var,
    output_mask: Var,
    scale_clamp: Option<f64>,
}

impl BoundMaf {
    fn check(&self, tape: &Tape, x: Var, h: Var) -> Result<()> {
        let (xs, hs) = (tape.shape(x), tape.shape(h));
        if xs.len() != 2 || xs[1] != self.dim || hs.len() != 2 || hs[1] != self.cond_dim || hs[0] != xs[0] {
            return Err(LatteError::dim(format!(
                "MAF layer expects x [B, {}] and h [B, {}], got {:?} and {:?}",
                self.dim, self.cond_dim, xs, hs
            )));
        }
        Ok(())
    }

    /// (μ, α) for every coordinate in one masked pass.
    fn shift_log_scale(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var)> {
        let [w_in, w_cond, b_hid, w_mu, b_mu, w_alpha, b_alpha] = self.params;
        let masked_in = tape.mul(w_in, self.input_mask)?;
        let a = tape.matmul(x, masked_in)?;
        let c = tape.matmul(h, w_cond)?;
        let pre = tape.add(a, c)?;
        let pre = tape.add(pre, b_hid)?;
        let hid = tape.tanh(pre)?;
        let masked_mu = tape.mul(w_mu, self.output_mask)?;
        let mu = tape.matmul(hid, masked_mu)?;
        let mu = tape.add(mu, b_mu)?;
        let masked_alpha = tape.mul(w_alpha, self.output_mask)?;
        let alpha = tape.matmul(hid, masked_alpha)?;
        let alpha = tape.add(alpha, b_alpha)?;
        let alpha = match self.scale_clamp {
            Some(cl) => {
                let r = tape.scale(alpha, 1.0 / cl)?;
                let r = tape.tanh(r)?;
                tape.scale(r, cl)?
            }
            None => alpha,
        };
        Ok((mu, alpha))
    }

    /// x → z with per-row log|det J| = −Σ α.
    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var)> {
        self.check(tape, x, h)?;
        let (mu, alpha) = self.shift_log_scale(tape, x, h)?;
        let centered = tape.sub(x, mu)?;
        let neg_alpha = tape.neg(alpha)?;
        let scale = tape.exp(neg_alpha)?;
        let z = tape.mul(centered, scale)?;
        let logdet = tape.reduce(neg_alpha, ReduceKind::Sum, Some(1))?;
        Ok((z, logdet))
    }

    /// z → x by D sequential passes, one coordinate per pass in generation order.
    /// The result is a constant on the tape (no gradient flows through sampling).
    pub fn inverse(&self, tape: &mut Tape, z: Var, h: Var) -> Result<Var> {
        self.check(tape, z, h)?;
        let zv = tape.value(z).clone();
        let batch = zv.shape()[0];
        let mut x = Tensor::zeros(&[batch, self.dim]);
        for &i in &self.order {
            let xv = tape.constant(x.clone())?;
            let (mu, alpha) = self.shift_log_scale(tape, xv, h)?;
            let (mu, alpha) = (tape.value(mu).clone(), tape.value(alpha).clone());
            for b in 0..batch {
                let k = b * self.dim + i;
                let v = zv.data()[k] * alpha.data()[k].exp() + mu.data()[k];
                if !v.is_finite() {
                    return Err(LatteError::numeric(format!(
                        "MAF inverse overflow at row {b}, coordinate {i}"
                    )));
                }
                x.data_mut()[k] = v;
            }
        }
        tape.constant(x)
    }
}
