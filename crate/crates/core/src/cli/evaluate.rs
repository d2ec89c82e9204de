use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Scaler, SeriesMatrix, SplitPlan};
use crate::error::{LatteError, Result};
use crate::latte::LatteModel;
use crate::metrics::{CrpsSumMode, EnsembleForecast, MetricReport, PointEstimate};
use crate::rng::SeededRng;

/// Anything that turns a context block into sample paths, all in original units.
pub trait Forecaster: Sync {
    fn id(&self) -> &str;

    /// `context` is `[rows, N]`; returns samples `[S, τ, N]`.
    fn forecast(&self, context: &[f64], horizon: usize, samples: usize, seed: u64) -> Result<Vec<f64>>;
}

/// A trained model plus the normalization of its inputs.
pub struct ModelForecaster {
    pub model: LatteModel,
    pub scaler: Scaler,
    pub id: String,
}

impl Forecaster for ModelForecaster {
    fn id(&self) -> &str {
        &self.id
    }

    fn forecast(&self, context: &[f64], horizon: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
        let mut scaled = context.to_vec();
        self.scaler.apply_rows(&mut scaled)?;
        let ens = self.model.forecast(&scaled, horizon, samples, seed)?;
        Ok(ens.descale(&self.scaler)?.samples)
    }
}

/// Repeats the last observed row with zero spread.
pub struct Persistence {
    pub num_series: usize,
}

impl Forecaster for Persistence {
    fn id(&self) -> &str {
        "persistence"
    }

    fn forecast(&self, context: &[f64], horizon: usize, samples: usize, _seed: u64) -> Result<Vec<f64>> {
        let n = self.num_series;
        if context.len() < n || !context.len().is_multiple_of(n) {
            return Err(LatteError::dim(format!(
                "context of {} values is not rows of {n}",
                context.len()
            )));
        }
        let last = &context[context.len() - n..];
        Ok(last.repeat(horizon * samples))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub samples: usize,
    pub crps_sum: CrpsSumMode,
    pub point: PointEstimate,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            crps_sum: CrpsSumMode::Normalized,
            point: PointEstimate::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Mean ± std of each score across evaluated windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model_id: String,
    pub windows: usize,
    pub crps_sum_mode: CrpsSumMode,
    /// Headline CRPS-Sum in the configured mode.
    pub crps_sum: MeanStd,
    pub crps_sum_normalized: MeanStd,
    pub crps_sum_raw: MeanStd,
    /// Per-window mean NMSE over series.
    pub nmse: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub windows: Vec<MetricReport>,
    /// Windows left out because their context or horizon has missing cells.
    pub skipped: Vec<usize>,
    pub aggregate: Aggregate,
}

/// Forecasts every window of `plan` (in parallel) and scores it against the
/// realized values. Window `w` uses sampling seed `stream(seed, w)`.
pub fn rolling_evaluate(
    forecaster: &dyn Forecaster,
    series: &SeriesMatrix,
    plan: &SplitPlan,
    options: &MetricOptions,
    seed: u64,
) -> Result<EvaluationReport> {
    if options.samples < 2 {
        return Err(LatteError::config("evaluation needs at least 2 samples per window"));
    }
    let outcomes = plan
        .windows
        .par_iter()
        .enumerate()
        .map(|(w, win)| {
            let ctx_len = win.context_end - win.context_start;
            let horizon = win.horizon_end - win.context_end;
            if !series.span_observed(win.context_start, ctx_len + horizon) {
                return Ok(None);
            }
            let context = series.time_major(win.context_start, ctx_len)?;
            let truth = series.time_major(win.context_end, horizon)?;
            let window_seed = SeededRng::stream(seed, w as u64).next_u64();
            let samples = forecaster.forecast(&context, horizon, options.samples, window_seed)?;
            let f = EnsembleForecast::new(samples, truth, options.samples, horizon, series.names().to_vec())?;
            MetricReport::score(&f, w, forecaster.id(), options.point).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for (w, o) in outcomes.into_iter().enumerate() {
        match o {
            Some(r) => windows.push(r),
            None => skipped.push(w),
        }
    }
    if !skipped.is_empty() {
        log::warn!(
            "skipped {} evaluation windows with missing values: {skipped:?}",
            skipped.len()
        );
    }
    let norm: Vec<f64> = windows.iter().map(|r| r.crps_sum).collect();
    let raw: Vec<f64> = windows.iter().map(|r| r.crps_sum_raw).collect();
    let nmse: Vec<f64> = windows.iter().map(MetricReport::mean_nmse).collect();
    let headline = match options.crps_sum {
        CrpsSumMode::Normalized => MeanStd::of(&norm),
        CrpsSumMode::Raw => MeanStd::of(&raw),
    };
    Ok(EvaluationReport {
        aggregate: Aggregate {
            model_id: forecaster.id().to_string(),
            windows: windows.len(),
            crps_sum_mode: options.crps_sum,
            crps_sum: headline,
            crps_sum_normalized: MeanStd::of(&norm),
            crps_sum_raw: MeanStd::of(&raw),
            nmse: MeanStd::of(&nmse),
        },
        windows,
        skipped,
    })
}
