use rayon::prelude::*;

use super::LatteModel;
use crate::dataio::Scaler;
use crate::diffmath::{Tape, Tensor};
use crate::error::{LatteError, Result};
use crate::metrics::{quantile_bands, QuantileBands, DEFAULT_LEVELS};
use crate::neural::{HiddenState, LayerState};
use crate::rng::SeededRng;

/// Paths simulated together on one tape.
const PATH_CHUNK: usize = 8;

/// Sampled trajectories `[S, τ, N]`, their latents `[S, τ, D]` and bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub num_samples: usize,
    pub horizon: usize,
    pub num_series: usize,
    pub latent_dim: usize,
    pub samples: Vec<f64>,
    pub latents: Vec<f64>,
    pub bands: QuantileBands,
}

impl ForecastEnsemble {
    pub fn sample(&self, s: usize, t: usize, n: usize) -> f64 {
        self.samples[(s * self.horizon + t) * self.num_series + n]
    }

    /// Maps samples back to original units and recomputes the bands.
    pub fn descale(mut self, scaler: &Scaler) -> Result<Self> {
        scaler.invert_rows(&mut self.samples)?;
        self.bands = quantile_bands(
            &self.samples,
            self.num_samples,
            self.horizon,
            self.num_series,
            &self.bands.levels,
        )?;
        Ok(self)
    }

    /// Mean over paths, `[τ, N]`.
    pub fn mean(&self) -> Vec<f64> {
        let cell = self.horizon * self.num_series;
        let mut out = vec![0.0; cell];
        for s in 0..self.num_samples {
            for (o, v) in out.iter_mut().zip(&self.samples[s * cell..(s + 1) * cell]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.num_samples as f64);
        out
    }
}

/// Recurrent state values detached from any tape.
struct StateValues {
    layers: Vec<(Tensor, Option<Tensor>)>,
}

impl StateValues {
    fn capture(tape: &Tape, state: &HiddenState) -> Self {
        Self {
            layers: state
                .layers
                .iter()
                .map(|l| (tape.value(l.h).clone(), l.cell.map(|c| tape.value(c).clone())))
                .collect(),
        }
    }

    /// Places the single-row state on `tape`, repeated `rows` times.
    fn replicate(&self, tape: &mut Tape, rows: usize) -> Result<HiddenState> {
        let rep = |t: &Tensor| {
            let w = t.shape()[1];
            Tensor::new(vec![rows, w], t.data().repeat(rows))
        };
        let layers = self
            .layers
            .iter()
            .map(|(h, c)| {
                Ok(LayerState {
                    h: tape.constant(rep(h)?)?,
                    cell: match c {
                        Some(c) => Some(tape.constant(rep(c)?)?),
                        None => None,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HiddenState { layers })
    }
}

impl LatteModel {
    /// Samples `num_samples` future paths of `horizon` steps after the last
    /// `T` rows of `context` (`[rows, N]`, normalized units). Path `s` draws
    /// its noise from `SeededRng::stream(seed, s)`, so results do not depend
    /// on how paths are scheduled across threads.
    pub fn forecast(&self, context: &[f64], horizon: usize, num_samples: usize, seed: u64) -> Result<ForecastEnsemble> {
        let (n, d) = (self.num_series(), self.latent_dim());
        let t_ctx = self.config.context_len;
        if num_samples == 0 || horizon == 0 {
            return Err(LatteError::contract("forecast needs at least one sample and one step"));
        }
        if !context.len().is_multiple_of(n) {
            return Err(LatteError::dim(format!(
                "context of {} values is not rows of {n}",
                context.len()
            )));
        }
        let rows = context.len() / n;
        if rows < t_ctx {
            return Err(LatteError::contract(format!(
                "context has {rows} steps, model needs {t_ctx}"
            )));
        }
        if let Some(i) = context.iter().position(|v| !v.is_finite()) {
            return Err(LatteError::contract(format!(
                "context holds a missing value at step {}, series {}",
                i / n,
                i % n
            )));
        }
        let tail = context[(rows - t_ctx) * n..].to_vec();

        // Warm-up is shared by every path: h_{T+1} after reading x_1..x_T.
        let warm = {
            let mut tape = Tape::new();
            let m = self.bind(&mut tape)?;
            let y = tape.constant(Tensor::new(vec![t_ctx, n], tail)?)?;
            let x = m.encode(&mut tape, y)?;
            let mut state = m.initial_state(&mut tape, 1)?;
            for t in 0..t_ctx {
                let xt = tape.slice_rows(x, t, t + 1)?;
                state = m.rnn().step(&mut tape, xt, &state)?;
            }
            StateValues::capture(&tape, &state)
        };

        let starts: Vec<usize> = (0..num_samples).step_by(PATH_CHUNK).collect();
        let chunks = starts
            .par_iter()
            .map(|&first| {
                let count = PATH_CHUNK.min(num_samples - first);
                self.simulate_paths(&warm, first, count, horizon, seed)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut samples = Vec::with_capacity(num_samples * horizon * n);
        let mut latents = Vec::with_capacity(num_samples * horizon * d);
        for (ys, xs) in chunks {
            samples.extend(ys);
            latents.extend(xs);
        }
        let bands = quantile_bands(&samples, num_samples, horizon, n, &DEFAULT_LEVELS)?;
        Ok(ForecastEnsemble {
            num_samples,
            horizon,
            num_series: n,
            latent_dim: d,
            samples,
            latents,
            bands,
        })
    }

    /// Paths `first..first + count`, returned path-major.
    fn simulate_paths(
        &self,
        warm: &StateValues,
        first: usize,
        count: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, d) = (self.num_series(), self.latent_dim());
        let mut rngs: Vec<SeededRng> = (first..first + count)
            .map(|s| SeededRng::stream(seed, s as u64))
            .collect();
        let mut tape = Tape::new();
        let m = self.bind(&mut tape)?;
        let mut state = warm.replicate(&mut tape, count)?;
        let mut ys = vec![0.0; count * horizon * n];
        let mut xs = vec![0.0; count * horizon * d];
        for t in 0..horizon {
            let noise: Vec<f64> = rngs.iter_mut().flat_map(|r| r.normal_vec(d)).collect();
            let z = tape.constant(Tensor::new(vec![count, d], noise)?)?;
            let x = m.flow().inverse(&mut tape, z, state.top())?;
            let y = m.decode(&mut tape, x)?;
            for p in 0..count {
                let dst = (p * horizon + t) * n;
                ys[dst..dst + n].copy_from_slice(tape.value(y).row(p));
                let dst = (p * horizon + t) * d;
                xs[dst..dst + d].copy_from_slice(tape.value(x).row(p));
            }
            if t + 1 < horizon {
                state = m.rnn().step(&mut tape, x, &state)?;
            }
        }
        Ok((ys, xs))
    }
}
