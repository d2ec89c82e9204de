//! The latent temporal flow model.
//!
//! An encoder g maps each observation y_t ∈ ℝ^N to a latent x_t ∈ ℝ^D and a
//! decoder q maps latents back. A recurrent cell summarizes strictly past
//! latents into h_t, and a conditional flow models p(x_t | h_t). Training
//! minimizes reconstruction error plus λ times the latent negative
//! log-likelihood; forecasting samples latent paths from the flow and decodes
//! them.

mod batch;
mod checkpoint;
mod config;
mod forecast;
mod train;

pub use batch::WindowBatch;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use forecast::ForecastEnsemble;
pub use train::EpochRecord;

use crate::dataio::SeriesMatrix;
use crate::diffmath::{GradientMap, Tape, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::flows::{BoundFlow, FlowStack};
use crate::neural::{Activation, BoundMlp, BoundRnn, HiddenState, Mlp, Parameterized, Rnn};
use crate::rng::SeededRng;

const START_NAME: &str = "rnn.start";

/// Encoder, decoder, recurrent conditioner and conditional flow.
#[derive(Debug, Clone, PartialEq)]
pub struct LatteModel {
    config: ModelConfig,
    encoder: Mlp,
    decoder: Mlp,
    rnn: Rnn,
    /// Learned input fed to the cell at the first step.
    start: Tensor,
    flow: FlowStack,
    step: u64,
}

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub negll: f64,
    pub combined: f64,
}

impl LatteModel {
    /// Fresh model with parameters drawn from the config seed.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let config = config.resolved()?;
        let (n, d, h) = (config.num_series, config.latent_dim, config.hidden_size);
        let mut rng = SeededRng::stream(config.seed, 0);
        let enc_dims: Vec<usize> = std::iter::once(n)
            .chain(config.encoder_hidden.clone().unwrap_or_default())
            .chain(std::iter::once(d))
            .collect();
        let dec_dims: Vec<usize> = std::iter::once(d)
            .chain(config.decoder_hidden.clone().unwrap_or_default())
            .chain(std::iter::once(n))
            .collect();
        let encoder = Mlp::new("encoder", &enc_dims, Activation::Tanh, Activation::Identity, &mut rng)?;
        let decoder = Mlp::new("decoder", &dec_dims, Activation::Tanh, Activation::Identity, &mut rng)?;
        let rnn = Rnn::new("rnn", config.cell, d, h, config.rnn_layers, &mut rng)?;
        let flow = FlowStack::new(
            config.flow,
            d,
            h,
            config.flow_depth,
            config.coupling_hidden.expect("resolved"),
            config.scale_clamp,
            &mut rng,
        )?;
        Ok(Self {
            config,
            encoder,
            decoder,
            rnn,
            start: Tensor::zeros(&[d]),
            flow,
            step: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_series(&self) -> usize {
        self.config.num_series
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn rnn_mut(&mut self) -> &mut Rnn {
        &mut self.rnn
    }

    pub fn flow(&self) -> &FlowStack {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut FlowStack {
        &mut self.flow
    }

    /// Changes the loss weight without touching parameters.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LatteError::config(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        self.config.lambda = lambda;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        Ok(BoundModel {
            num_series: self.config.num_series,
            latent_dim: self.config.latent_dim,
            encoder: self.encoder.bind(tape)?,
            decoder: self.decoder.bind(tape)?,
            rnn: self.rnn.bind(tape)?,
            start: tape.param(START_NAME, &self.start)?,
            flow: self.flow.bind(tape)?,
        })
    }

    /// x = g(y) for `[B, N]` rows.
    pub fn encode(&self, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape)?;
        let yv = tape.constant(y.clone())?;
        let x = m.encode(&mut tape, yv)?;
        Ok(tape.value(x).clone())
    }

    /// ŷ = q(x) for `[B, D]` rows.
    pub fn decode(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape)?;
        let xv = tape.constant(x.clone())?;
        let y = m.decode(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Conditioner states for a latent path `[B, L, D]`, returned `[B, L, H]`.
    /// h_t depends on x_1..x_{t−1} only.
    pub fn unroll_states(&self, x_path: &Tensor) -> Result<Tensor> {
        let s = x_path.shape();
        if s.len() != 3 || s[2] != self.latent_dim() {
            return Err(LatteError::dim(format!(
                "latent path must be [B, L, {}], got {s:?}",
                self.latent_dim()
            )));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        if l == 0 {
            return Err(LatteError::contract("cannot unroll an empty path"));
        }
        let mut tm = vec![0.0; b * l * d];
        for bi in 0..b {
            for t in 0..l {
                let src = (bi * l + t) * d;
                let dst = (t * b + bi) * d;
                tm[dst..dst + d].copy_from_slice(&x_path.data()[src..src + d]);
            }
        }
        let mut tape = Tape::new();
        let m = self.bind(&mut tape)?;
        let xv = tape.constant(Tensor::new(vec![l * b, d], tm)?)?;
        let states = m.unroll(&mut tape, xv, b, l)?;
        let hsz = self.hidden_size();
        let mut out = vec![0.0; b * l * hsz];
        for (t, st) in states.iter().enumerate() {
            let v = tape.value(st.top());
            for bi in 0..b {
                let dst = (bi * l + t) * hsz;
                out[dst..dst + hsz].copy_from_slice(v.row(bi));
            }
        }
        Tensor::new(vec![b, l, hsz], out)
    }

    fn batch_tape(&self, batch: &WindowBatch) -> Result<(Tape, BoundModel, Var, usize, usize)> {
        if batch.num_series() != self.num_series() {
            return Err(LatteError::dim(format!(
                "batch has {} series, model expects {}",
                batch.num_series(),
                self.num_series()
            )));
        }
        let (b, l) = (batch.batch_size(), batch.window_len());
        let mut tape = Tape::new();
        let m = self.bind(&mut tape)?;
        let y = tape.constant(Tensor::new(vec![l * b, batch.num_series()], batch.time_major())?)?;
        Ok((tape, m, y, b, l))
    }

    /// Mean over windows and time steps of ‖y_t − q(g(y_t))‖².
    pub fn loss_reconstruction(&self, batch: &WindowBatch) -> Result<f64> {
        let (mut tape, m, y, b, l) = self.batch_tape(batch)?;
        let x = m.encode(&mut tape, y)?;
        let rec = m.reconstruction(&mut tape, y, x, b * l)?;
        tape.value(rec).item()
    }

    /// Teacher-forced −mean log p(x_t | h_t) over t = 2..T+τ.
    pub fn loss_negll(&self, batch: &WindowBatch) -> Result<f64> {
        let (mut tape, m, y, b, l) = self.batch_tape(batch)?;
        let x = m.encode(&mut tape, y)?;
        let nll = self.negll(&mut tape, &m, x, b, l)?;
        tape.value(nll).item()
    }

    /// Reconstruction + λ·NLL with λ from the config.
    pub fn loss_combined(&self, batch: &WindowBatch) -> Result<f64> {
        Ok(self.losses(batch)?.combined)
    }

    pub fn losses(&self, batch: &WindowBatch) -> Result<LossTerms> {
        let (tape, terms) = self.loss_graph(batch)?;
        drop(tape);
        Ok(terms.0)
    }

    /// Loss terms plus gradients of the combined loss for every parameter.
    pub fn gradients(&self, batch: &WindowBatch) -> Result<(LossTerms, GradientMap)> {
        let (tape, (terms, loss)) = self.loss_graph(batch)?;
        let grads = tape.backward(loss)?;
        Ok((terms, grads))
    }

    fn loss_graph(&self, batch: &WindowBatch) -> Result<(Tape, (LossTerms, Var))> {
        let (mut tape, m, y, b, l) = self.batch_tape(batch)?;
        let x = m.encode(&mut tape, y)?;
        let rec = m.reconstruction(&mut tape, y, x, b * l)?;
        let nll = self.negll(&mut tape, &m, x, b, l)?;
        let weighted = tape.scale(nll, self.config.lambda)?;
        let loss = tape.add(rec, weighted)?;
        let terms = LossTerms {
            reconstruction: tape.value(rec).item()?,
            negll: tape.value(nll).item()?,
            combined: tape.value(loss).item()?,
        };
        Ok((tape, (terms, loss)))
    }

    /// −mean log p(x_t | h_t) over t = 2..L for time-major latents.
    fn negll(&self, tape: &mut Tape, m: &BoundModel, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (xs, h) = m.density_inputs(tape, x, batch, len)?;
        let lp = match m.flow.log_prob(tape, xs, h) {
            Ok(lp) => lp,
            Err(e) => return Err(self.locate_density_failure(tape.value(xs), tape.value(h), batch, e)),
        };
        let mean = tape.mean(lp)?;
        tape.neg(mean)
    }

    /// Re-evaluates the density one time step at a time to report where it broke.
    fn locate_density_failure(&self, xs: &Tensor, h: &Tensor, batch: usize, err: LatteError) -> LatteError {
        let rows = |v: &Tensor, t: usize| {
            let w = v.shape()[1];
            Tensor::new(vec![batch, w], v.data()[t * batch * w..(t + 1) * batch * w].to_vec())
        };
        for t in 0..xs.shape()[0] / batch {
            let lp = rows(xs, t).and_then(|x| self.flow.log_prob(&x, &rows(h, t)?));
            let finite = matches!(&lp, Ok(v) if v.iter().all(|p| p.is_finite()));
            if !finite {
                return LatteError::numeric(format!("latent density failed at time step {}: {err}", t + 2));
            }
        }
        err
    }

    /// Latent code g(y_t) of every time step, `[T_total, D]`.
    pub fn export_latent(&self, series: &SeriesMatrix) -> Result<Tensor> {
        if series.num_series() != self.num_series() {
            return Err(LatteError::dim(format!(
                "data has {} series, model expects {}",
                series.num_series(),
                self.num_series()
            )));
        }
        if let Some(i) = series.mask().iter().position(|m| !m) {
            let t_total = series.len();
            return Err(LatteError::contract(format!(
                "cannot encode missing value of series '{}' at step {}",
                series.names()[i / t_total],
                i % t_total
            )));
        }
        let rows = series.time_major(0, series.len())?;
        self.encode(&Tensor::new(vec![series.len(), series.num_series()], rows)?)
    }
}

impl Parameterized for LatteModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
        self.rnn.visit_params(f);
        f(START_NAME, &self.start);
        self.flow.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_params_mut(f);
        self.decoder.visit_params_mut(f);
        self.rnn.visit_params_mut(f);
        f(START_NAME, &mut self.start);
        self.flow.visit_params_mut(f);
    }
}

/// A [`LatteModel`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    num_series: usize,
    latent_dim: usize,
    encoder: BoundMlp,
    decoder: BoundMlp,
    rnn: BoundRnn,
    start: Var,
    flow: BoundFlow,
}

impl BoundModel {
    pub fn encode(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        self.encoder.forward(tape, y)
    }

    pub fn decode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.decoder.forward(tape, x)
    }

    pub fn flow(&self) -> &BoundFlow {
        &self.flow
    }

    pub fn rnn(&self) -> &BoundRnn {
        &self.rnn
    }

    /// State after consuming the start input from a zero state (h_1).
    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Result<HiddenState> {
        let zeros = tape.constant(Tensor::zeros(&[batch, self.latent_dim]))?;
        let start = tape.add(zeros, self.start)?;
        let h0 = self.rnn.zero_state(tape, batch)?;
        self.rnn.step(tape, start, &h0)
    }

    /// States h_1..h_L for time-major latents `[L·B, D]`.
    pub fn unroll(&self, tape: &mut Tape, x: Var, batch: usize, len: usize) -> Result<Vec<HiddenState>> {
        if len == 0 {
            return Err(LatteError::contract("cannot unroll an empty path"));
        }
        let mut states = Vec::with_capacity(len);
        states.push(self.initial_state(tape, batch)?);
        for t in 1..len {
            let prev_x = tape.slice_rows(x, (t - 1) * batch, t * batch)?;
            let next = self.rnn.step(tape, prev_x, &states[t - 1])?;
            states.push(next);
        }
        Ok(states)
    }

    fn reconstruction(&self, tape: &mut Tape, y: Var, x: Var, rows: usize) -> Result<Var> {
        let y_hat = self.decode(tape, x)?;
        let diff = tape.sub(y, y_hat)?;
        let sq = tape.square(diff)?;
        let total = tape.sum(sq)?;
        tape.scale(total, 1.0 / rows as f64)
    }

    /// Conditioners h_2..h_L and latents x_2..x_L, both time-major.
    fn density_inputs(&self, tape: &mut Tape, x: Var, batch: usize, len: usize) -> Result<(Var, Var)> {
        if len < 2 {
            return Err(LatteError::contract("likelihood needs windows of at least 2 steps"));
        }
        let states = self.unroll(tape, x, batch, len)?;
        let tops: Vec<Var> = states[1..].iter().map(|s| s.top()).collect();
        let h = tape.concat_rows(&tops)?;
        let xs = tape.slice_rows(x, batch, len * batch)?;
        Ok((xs, h))
    }

    pub fn num_series(&self) -> usize {
        self.num_series
    }
}
