use crate::diffmath::{ReduceKind, Tape, Var};
use crate::error::{LatteError, Result};
use crate::neural::{Activation, BoundMlp, Mlp, Parameterized};
use crate::rng::SeededRng;

/// Affine coupling layer conditioned on an external vector `h`.
///
/// One block of coordinates passes through unchanged and, together with `h`,
/// parameterizes an elementwise affine map of the other block:
/// `c_trans = x_trans ⊙ exp(s) + t` with `s, t` evaluated on
/// `concat(x_cond, h)`. With `parity == false` the first `split` coordinates
/// are the conditioning block; with `parity == true` the roles swap.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    cond_dim: usize,
    split: usize,
    parity: bool,
    scale_net: Mlp,
    shift_net: Mlp,
    scale_clamp: Option<f64>,
}

impl CouplingLayer {
    /// Default construction: one hidden tanh layer per net, output layers
    /// zeroed so the layer starts as the identity.
    pub fn new(
        prefix: &str,
        dim: usize,
        cond_dim: usize,
        hidden: usize,
        parity: bool,
        scale_clamp: Option<f64>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (cond_len, trans_len) = Self::block_sizes(dim, parity)?;
        let dims = [cond_len + cond_dim, hidden, trans_len];
        let mut scale_net = Mlp::new(
            format!("{prefix}.s"),
            &dims,
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        let mut shift_net = Mlp::new(
            format!("{prefix}.t"),
            &dims,
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        scale_net.zero_output_layer();
        shift_net.zero_output_layer();
        Self::from_nets(dim, cond_dim, parity, scale_net, shift_net, scale_clamp)
    }

    /// Builds a layer around caller-supplied nets. Both must map
    /// `cond_len + cond_dim` inputs to `trans_len` outputs.
    pub fn from_nets(
        dim: usize,
        cond_dim: usize,
        parity: bool,
        scale_net: Mlp,
        shift_net: Mlp,
        scale_clamp: Option<f64>,
    ) -> Result<Self> {
        let (cond_len, trans_len) = Self::block_sizes(dim, parity)?;
        for net in [&scale_net, &shift_net] {
            if net.input_dim() != cond_len + cond_dim || net.output_dim() != trans_len {
                return Err(LatteError::dim(format!(
                    "coupling net maps {} -> {}, layer needs {} -> {}",
                    net.input_dim(),
                    net.output_dim(),
                    cond_len + cond_dim,
                    trans_len
                )));
            }
        }
        if let Some(c) = scale_clamp {
            if !(c > 0.0) {
                return Err(LatteError::config(format!("scale clamp must be positive, got {c}")));
            }
        }
        Ok(Self {
            dim,
            cond_dim,
            split: dim / 2,
            parity,
            scale_net,
            shift_net,
            scale_clamp,
        })
    }

    /// (conditioning block size, transformed block size)
    fn block_sizes(dim: usize, parity: bool) -> Result<(usize, usize)> {
        if dim < 2 {
            return Err(LatteError::config(format!(
                "RealNVP coupling needs latent dimension >= 2, got {dim}; use the MAF flow"
            )));
        }
        let d = dim / 2;
        Ok(if parity { (dim - d, d) } else { (d, dim - d) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn parity(&self) -> bool {
        self.parity
    }

    pub fn scale_net_mut(&mut self) -> &mut Mlp {
        &mut self.scale_net
    }

    pub fn shift_net_mut(&mut self) -> &mut Mlp {
        &mut self.shift_net
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundCoupling> {
        Ok(BoundCoupling {
            dim: self.dim,
            cond_dim: self.cond_dim,
            split: self.split,
            parity: self.parity,
            scale_net: self.scale_net.bind(tape)?,
            shift_net: self.shift_net.bind(tape)?,
            scale_clamp: self.scale_clamp,
        })
    }
}

impl Parameterized for CouplingLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &crate::diffmath::Tensor)) {
        self.scale_net.visit_params(f);
        self.shift_net.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::diffmath::Tensor)) {
        self.scale_net.visit_params_mut(f);
        self.shift_net.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BoundCoupling {
    dim: usize,
    cond_dim: usize,
    split: usize,
    parity: bool,
    scale_net: BoundMlp,
    shift_net: BoundMlp,
    scale_clamp: Option<f64>,
}

impl BoundCoupling {
    fn ranges(&self) -> ((usize, usize), (usize, usize)) {
        let (d, n) = (self.split, self.dim);
        if self.parity {
            ((d, n), (0, d))
        } else {
            ((0, d), (d, n))
        }
    }

    fn check(&self, tape: &Tape, x: Var, h: Var) -> Result<()> {
        let (xs, hs) = (tape.shape(x), tape.shape(h));
        if xs.len() != 2 || xs[1] != self.dim || hs.len() != 2 || hs[1] != self.cond_dim || hs[0] != xs[0] {
            return Err(LatteError::dim(format!(
                "coupling layer expects x [B, {}] and h [B, {}], got {:?} and {:?}",
                self.dim, self.cond_dim, xs, hs
            )));
        }
        Ok(())
    }

    /// Scale and shift evaluated on the conditioning block.
    fn scale_shift(&self, tape: &mut Tape, cond: Var, h: Var) -> Result<(Var, Var)> {
        let inp = tape.concat_last(cond, h)?;
        let raw = self.scale_net.forward(tape, inp)?;
        let s = match self.scale_clamp {
            Some(c) => {
                let r = tape.scale(raw, 1.0 / c)?;
                let r = tape.tanh(r)?;
                tape.scale(r, c)?
            }
            None => raw,
        };
        let t = self.shift_net.forward(tape, inp)?;
        Ok((s, t))
    }

    fn assemble(&self, tape: &mut Tape, cond: Var, trans: Var) -> Result<Var> {
        if self.parity {
            tape.concat_last(trans, cond)
        } else {
            tape.concat_last(cond, trans)
        }
    }

    /// x → c with per-row log|det J|.
    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var)> {
        self.check(tape, x, h)?;
        let ((c0, c1), (t0, t1)) = self.ranges();
        let cond = tape.slice_last(x, c0, c1)?;
        let trans = tape.slice_last(x, t0, t1)?;
        let (s, t) = self.scale_shift(tape, cond, h)?;
        let es = tape.exp(s)?;
        let scaled = tape.mul(trans, es)?;
        let out = tape.add(scaled, t)?;
        let c = self.assemble(tape, cond, out)?;
        let logdet = tape.reduce(s, ReduceKind::Sum, Some(1))?;
        Ok((c, logdet))
    }

    /// c → x, the exact inverse of [`forward`](Self::forward).
    pub fn inverse(&self, tape: &mut Tape, c: Var, h: Var) -> Result<Var> {
        self.check(tape, c, h)?;
        let ((c0, c1), (t0, t1)) = self.ranges();
        let cond = tape.slice_last(c, c0, c1)?;
        let trans = tape.slice_last(c, t0, t1)?;
        let (s, t) = self.scale_shift(tape, cond, h)?;
        let centered = tape.sub(trans, t)?;
        let neg_s = tape.neg(s)?;
        let inv_scale = tape.exp(neg_s)?;
        let x_trans = tape.mul(centered, inv_scale)?;
        self.assemble(tape, cond, x_trans)
    }
}
