use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SeriesMatrix;
use crate::error::{LatteError, Result};
use crate::rng::SeededRng;

const BURN_IN: usize = 200;

fn series_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn time_labels(t: usize) -> Vec<String> {
    (0..t).map(|i| i.to_string()).collect()
}

/// Parameters of the latent linear-Gaussian generator
/// x_t = A x_{t−1} + ε_t, y_t = W x_t + b + η_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarSpec {
    pub num_series: usize,
    pub latent_dim: usize,
    pub len: usize,
    /// Std of the latent innovations ε.
    #[serde(default = "default_latent_noise")]
    pub latent_noise: f64,
    /// Std of the observation noise η.
    #[serde(default = "default_obs_noise")]
    pub obs_noise: f64,
    /// A is rescaled to this spectral radius.
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
    /// Row-major D×D transition matrix used verbatim instead of a random one.
    #[serde(default)]
    pub transition: Option<Vec<f64>>,
}

fn default_latent_noise() -> f64 {
    1.0
}
fn default_obs_noise() -> f64 {
    0.1
}
fn default_radius() -> f64 {
    0.8
}

impl VarSpec {
    pub fn new(num_series: usize, latent_dim: usize, len: usize) -> Self {
        Self {
            num_series,
            latent_dim,
            len,
            latent_noise: default_latent_noise(),
            obs_noise: default_obs_noise(),
            spectral_radius: default_radius(),
            transition: None,
        }
    }
}

/// Generating parameters and latent path, enough to compute optimal forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarOracle {
    pub latent_dim: usize,
    pub num_series: usize,
    /// D×D row-major
    pub transition: Vec<f64>,
    /// N×D row-major
    pub loading: Vec<f64>,
    pub offset: Vec<f64>,
    pub latent_noise: f64,
    pub obs_noise: f64,
    /// `[T_total, D]` latent path behind the observations.
    pub latents: Vec<f64>,
}

impl VarOracle {
    fn transition_apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.latent_dim;
        (0..d)
            .map(|i| (0..d).map(|j| self.transition[i * d + j] * x[j]).sum())
            .collect()
    }

    fn observe_mean(&self, x: &[f64]) -> Vec<f64> {
        let d = self.latent_dim;
        (0..self.num_series)
            .map(|n| self.offset[n] + (0..d).map(|j| self.loading[n * d + j] * x[j]).sum::<f64>())
            .collect()
    }

    pub fn latent(&self, t: usize) -> &[f64] {
        &self.latents[t * self.latent_dim..(t + 1) * self.latent_dim]
    }

    /// E[y_{t+k} | x_t] = W A^k x_t + b.
    pub fn predictive_mean(&self, t: usize, steps: usize) -> Vec<f64> {
        let mut x = self.latent(t).to_vec();
        for _ in 0..steps {
            x = self.transition_apply(&x);
        }
        self.observe_mean(&x)
    }

    /// One-step predictive std of each series given x_t: sqrt(σ²‖W_n‖² + η²).
    pub fn one_step_std(&self) -> Vec<f64> {
        let d = self.latent_dim;
        (0..self.num_series)
            .map(|n| {
                let w2: f64 = self.loading[n * d..(n + 1) * d].iter().map(|w| w * w).sum();
                (self.latent_noise.powi(2) * w2 + self.obs_noise.powi(2)).sqrt()
            })
            .collect()
    }

    /// Draws y_{t+1} given x_t.
    pub fn simulate_next(&self, x: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        let mut next = self.transition_apply(x);
        for v in next.iter_mut() {
            *v += self.latent_noise * rng.normal();
        }
        let mut y = self.observe_mean(&next);
        for v in y.iter_mut() {
            *v += self.obs_noise * rng.normal();
        }
        y
    }

    /// Spectral radius of the transition matrix.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.transition, self.latent_dim)
    }
}

fn spectral_radius(a: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, a);
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Observations driven by a stable low-dimensional VAR(1) latent process.
pub fn gen_synthetic_latent_var(spec: &VarSpec, seed: u64) -> Result<(SeriesMatrix, VarOracle)> {
    let (n, d, len) = (spec.num_series, spec.latent_dim, spec.len);
    if d == 0 || n == 0 || len == 0 {
        return Err(LatteError::config("synthetic VAR needs positive N, D and length"));
    }
    if d >= n {
        return Err(LatteError::config(format!(
            "latent dimension {d} must be below series count {n}"
        )));
    }
    if !(spec.latent_noise >= 0.0 && spec.obs_noise >= 0.0) {
        return Err(LatteError::config("noise levels must be non-negative"));
    }
    let target = spec.spectral_radius.clamp(0.0, 0.99);
    let mut rng = SeededRng::new(seed);
    let random_a: Vec<f64> = rng.normal_vec(d * d);
    let transition = match &spec.transition {
        Some(a) if a.len() != d * d => {
            return Err(LatteError::config(format!(
                "transition has {} entries, expected {}",
                a.len(),
                d * d
            )))
        }
        Some(a) => {
            let r = spectral_radius(a, d);
            if r >= 1.0 {
                a.iter().map(|v| v * target / r).collect()
            } else {
                a.clone()
            }
        }
        None => {
            let r = spectral_radius(&random_a, d);
            if r > 1e-12 {
                random_a.iter().map(|v| v * target / r).collect()
            } else {
                random_a
            }
        }
    };
    let loading = rng.normal_vec(n * d);
    let offset: Vec<f64> = (0..n).map(|_| rng.uniform_range(1.0, 3.0)).collect();
    let mut oracle = VarOracle {
        latent_dim: d,
        num_series: n,
        transition,
        loading,
        offset,
        latent_noise: spec.latent_noise,
        obs_noise: spec.obs_noise,
        latents: Vec::with_capacity(len * d),
    };
    let mut x = vec![0.0; d];
    let mut rows = Vec::with_capacity(len * n);
    for step in 0..BURN_IN + len {
        let mut next = oracle.transition_apply(&x);
        for v in next.iter_mut() {
            *v += spec.latent_noise * rng.normal();
        }
        x = next;
        if step >= BURN_IN {
            let mut y = oracle.observe_mean(&x);
            for v in y.iter_mut() {
                *v += spec.obs_noise * rng.normal();
            }
            rows.extend(y);
            oracle.latents.extend_from_slice(&x);
        }
    }
    let m = SeriesMatrix::from_time_major(series_names(n), &rows)?;
    Ok((m, oracle))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineMixture {
    pub series: SeriesMatrix,
    /// Fundamental period of each series in steps.
    pub periods: Vec<usize>,
    /// Sum of the two amplitudes of each series.
    pub amplitude_bound: Vec<f64>,
}

/// Each series is a1·sin(2πt/P + φ1) + a2·sin(4πt/P + φ2) plus Gaussian noise.
pub fn gen_sine_mixture(num_series: usize, len: usize, noise_std: f64, seed: u64) -> Result<SineMixture> {
    if num_series == 0 {
        return Err(LatteError::config("sine mixture needs at least one series"));
    }
    let mut rng = SeededRng::new(seed);
    let tau = std::f64::consts::TAU;
    let mut values = Vec::with_capacity(num_series * len);
    let mut periods = Vec::with_capacity(num_series);
    let mut bounds = Vec::with_capacity(num_series);
    for _ in 0..num_series {
        let p = 12 + rng.below(37) as usize;
        let a1 = rng.uniform_range(0.5, 2.0);
        let a2 = rng.uniform_range(0.2, 1.0);
        let (f1, f2) = (rng.uniform() * tau, rng.uniform() * tau);
        for t in 0..len {
            let phase = tau * t as f64 / p as f64;
            values.push(a1 * (phase + f1).sin() + a2 * (2.0 * phase + f2).sin() + noise_std * rng.normal());
        }
        periods.push(p);
        bounds.push(a1 + a2);
    }
    Ok(SineMixture {
        series: SeriesMatrix::new(series_names(num_series), time_labels(len), values)?,
        periods,
        amplitude_bound: bounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoRegime {
    pub series: SeriesMatrix,
    /// Regime (0 or 1) active at each time step.
    pub labels: Vec<u8>,
}

/// Observations that switch between two mean levels in blocks of 40 to 120
/// steps, with shared low-dimensional dynamics around each level.
pub fn gen_two_regime(num_series: usize, len: usize, seed: u64) -> Result<TwoRegime> {
    if num_series < 2 {
        return Err(LatteError::config("two-regime data needs at least two series"));
    }
    let mut rng = SeededRng::new(seed);
    let d = 2;
    let loading = rng.normal_vec(num_series * d);
    let base: Vec<f64> = (0..num_series).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let shift: Vec<f64> = (0..num_series).map(|_| 1.5 + rng.uniform()).collect();
    let sign: Vec<f64> = (0..num_series)
        .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
        .collect();
    let mut labels = Vec::with_capacity(len);
    let mut regime = 0u8;
    while labels.len() < len {
        let block = 40 + rng.below(81) as usize;
        labels.extend(std::iter::repeat_n(regime, block.min(len - labels.len())));
        regime = 1 - regime;
    }
    let mut x = [0.0; 2];
    let mut rows = Vec::with_capacity(len * num_series);
    for &r in &labels {
        for v in x.iter_mut() {
            *v = 0.5 * *v + 0.3 * rng.normal();
        }
        for n in 0..num_series {
            let level = base[n] + if r == 1 { sign[n] * shift[n] } else { 0.0 };
            let dynamics: f64 = (0..d).map(|j| loading[n * d + j] * x[j]).sum();
            rows.push(level + dynamics + 0.1 * rng.normal());
        }
    }
    Ok(TwoRegime {
        series: SeriesMatrix::from_time_major(series_names(num_series), &rows)?,
        labels,
    })
}
