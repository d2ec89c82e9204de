//! Command implementations behind the `latte` binary.
//!
//! Every command reads a [`RunConfig`] (or a checkpoint), does its work and
//! writes CSV/JSON outputs atomically into the output directory.

mod evaluate;

pub use evaluate::{
    rolling_evaluate, Aggregate, EvaluationReport, Forecaster, MeanStd, MetricOptions, ModelForecaster, Persistence,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{
    gen_sine_mixture, gen_synthetic_latent_var, gen_two_regime, load_csv, rolling_splits, write_atomic, write_csv,
    CsvLayout, Scaler, SeriesMatrix, VarSpec,
};
use crate::error::{LatteError, Result};
use crate::latte::{load_checkpoint, save_checkpoint, EpochRecord, ForecastEnsemble, LatteModel, ModelConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub layout: CsvLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Number of rolling test windows W; each spans the model horizon.
    pub windows: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { windows: 7 }
    }
}

/// Everything a run needs. The persisted copy has every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub metrics: MetricOptions,
    pub out_dir: PathBuf,
    /// Seeds model initialization, window sampling and forecast noise;
    /// copied into the model config.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            metrics: MetricOptions::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LatteError::config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fills in data-dependent and derived defaults.
    pub fn materialize(&self, num_series: usize) -> Result<Self> {
        let mut c = self.clone();
        if c.model.num_series != 0 && c.model.num_series != num_series {
            return Err(LatteError::config(format!(
                "config declares {} series, data has {num_series}",
                c.model.num_series
            )));
        }
        c.model.num_series = num_series;
        c.model.seed = c.seed;
        c.model = c.model.resolved()?;
        if c.split.windows == 0 {
            return Err(LatteError::config("at least one evaluation window is required"));
        }
        if c.metrics.samples == 0 {
            return Err(LatteError::config("at least one sample is required"));
        }
        Ok(c)
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .path
            .as_deref()
            .ok_or_else(|| LatteError::config("dataset.path is required"))
    }
}

fn float(v: f64) -> String {
    v.to_string()
}

pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,rec_loss,negll,combined\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.epoch,
            float(r.rec_loss),
            float(r.negll),
            float(r.combined)
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: RunConfig,
    pub history: Vec<EpochRecord>,
    pub train_end: usize,
    pub checkpoint: PathBuf,
}

/// Trains on everything before the first rolling test window and writes the
/// checkpoint, the loss history and the materialized config.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let series = load_csv(config.dataset_path()?, config.dataset.layout)?;
    let config = config.materialize(series.num_series())?;
    let m = &config.model;
    let plan = rolling_splits(series.len(), config.split.windows, m.horizon, m.context_len)?;
    let scaler = Scaler::fit(&series, m.scaler, plan.train_end)?;
    let scaled = scaler.apply(&series)?;
    let mut model = LatteModel::new(m)?;
    log::info!(
        "training on {} series, steps [0, {}), {} epochs",
        series.num_series(),
        plan.train_end,
        m.epochs
    );
    let history = model.train_with(&scaled, plan.train_end, |r| {
        log::info!(
            "epoch {:>4}  reconstruction {:.5}  negll {:.5}  combined {:.5}",
            r.epoch,
            r.rec_loss,
            r.negll,
            r.combined
        )
    })?;
    let out = &config.out_dir;
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &model, &scaler)?;
    write_atomic(&out.join(HISTORY_FILE), loss_history_csv(&history).as_bytes())?;
    write_atomic(&out.join(CONFIG_FILE), config.to_pretty_json()?.as_bytes())?;
    Ok(TrainOutcome {
        config,
        history,
        train_end: plan.train_end,
        checkpoint,
    })
}

pub fn samples_csv(ens: &ForecastEnsemble, names: &[String]) -> String {
    let mut s = String::from("path,t,series,value\n");
    for p in 0..ens.num_samples {
        for t in 0..ens.horizon {
            for (n, name) in names.iter().enumerate() {
                let _ = writeln!(s, "{p},{},{},{}", t + 1, csv_field(name), float(ens.sample(p, t, n)));
            }
        }
    }
    s
}

pub fn bands_csv(ens: &ForecastEnsemble, names: &[String]) -> String {
    let b = &ens.bands;
    let mut s = String::from("t,series");
    for l in &b.levels {
        let _ = write!(s, ",q{:02}", (l * 100.0).round() as u32);
    }
    s.push('\n');
    for t in 0..ens.horizon {
        for (n, name) in names.iter().enumerate() {
            let _ = write!(s, "{},{}", t + 1, csv_field(name));
            for l in 0..b.levels.len() {
                let _ = write!(s, ",{}", float(b.get(l, t, n)));
            }
            s.push('\n');
        }
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ForecastRequest {
    pub checkpoint: PathBuf,
    pub context: PathBuf,
    pub layout: CsvLayout,
    pub horizon: Option<usize>,
    pub samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Samples paths after the end of the context file and writes `samples.csv`
/// and `bands.csv` in original units.
pub fn cmd_forecast(req: &ForecastRequest) -> Result<ForecastEnsemble> {
    let (model, scaler) = load_checkpoint(&req.checkpoint)?;
    let context = load_csv(&req.context, req.layout)?;
    if context.num_series() != model.num_series() {
        return Err(LatteError::config(format!(
            "context has {} series, checkpoint expects {}",
            context.num_series(),
            model.num_series()
        )));
    }
    let horizon = req.horizon.unwrap_or(model.config().horizon);
    let mut rows = context.time_major(0, context.len())?;
    scaler.apply_rows(&mut rows)?;
    let ens = model
        .forecast(&rows, horizon, req.samples, req.seed)?
        .descale(&scaler)?;
    write_atomic(
        &req.out_dir.join("samples.csv"),
        samples_csv(&ens, context.names()).as_bytes(),
    )?;
    write_atomic(
        &req.out_dir.join("bands.csv"),
        bands_csv(&ens, context.names()).as_bytes(),
    )?;
    Ok(ens)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: Aggregate,
    pub baseline: Aggregate,
    pub skipped_windows: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowReports {
    pub model: Vec<crate::metrics::MetricReport>,
    pub baseline: Vec<crate::metrics::MetricReport>,
}

/// Rolling evaluation of a checkpoint and of the persistence baseline over
/// the last `split.windows` horizons of the dataset.
pub fn cmd_evaluate(checkpoint: &Path, config: &RunConfig) -> Result<EvaluationSummary> {
    let (model, scaler) = load_checkpoint(checkpoint)?;
    let series = load_csv(config.dataset_path()?, config.dataset.layout)?;
    if series.num_series() != model.num_series() {
        return Err(LatteError::config(format!(
            "dataset has {} series, checkpoint expects {}",
            series.num_series(),
            model.num_series()
        )));
    }
    let mc = model.config().clone();
    let plan = rolling_splits(series.len(), config.split.windows, mc.horizon, mc.context_len)?;
    let n = series.num_series();
    let forecaster = ModelForecaster {
        model,
        scaler,
        id: "latte".into(),
    };
    let report = rolling_evaluate(&forecaster, &series, &plan, &config.metrics, config.seed)?;
    let baseline = rolling_evaluate(
        &Persistence { num_series: n },
        &series,
        &plan,
        &config.metrics,
        config.seed,
    )?;
    let summary = EvaluationSummary {
        model: report.aggregate.clone(),
        baseline: baseline.aggregate.clone(),
        skipped_windows: report.skipped.clone(),
    };
    let windows = WindowReports {
        model: report.windows,
        baseline: baseline.windows,
    };
    let out = &config.out_dir;
    write_atomic(
        &out.join("metrics_windows.json"),
        serde_json::to_string_pretty(&windows)?.as_bytes(),
    )?;
    write_atomic(
        &out.join("metrics_summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

pub fn latent_csv(codes: &crate::diffmath::Tensor, series: &SeriesMatrix) -> String {
    let d = codes.shape()[1];
    let mut s = String::from("t");
    for j in 1..=d {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (t, label) in series.times().iter().enumerate() {
        s.push_str(&csv_field(label));
        for v in codes.row(t) {
            let _ = write!(s, ",{}", float(*v));
        }
        s.push('\n');
    }
    s
}

/// Writes the latent code of every time step to `latent.csv`.
pub fn cmd_export_latent(checkpoint: &Path, data: &Path, layout: CsvLayout, out_dir: &Path) -> Result<PathBuf> {
    let (model, scaler) = load_checkpoint(checkpoint)?;
    let series = load_csv(data, layout)?;
    if series.num_series() != model.num_series() {
        return Err(LatteError::config(format!(
            "dataset has {} series, checkpoint expects {}",
            series.num_series(),
            model.num_series()
        )));
    }
    let codes = model.export_latent(&scaler.apply(&series)?)?;
    let path = out_dir.join("latent.csv");
    write_atomic(&path, latent_csv(&codes, &series).as_bytes())?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Observations of a latent VAR(1) process; also writes `oracle.json`.
    Var,
    /// Two-harmonic sinusoids; also writes `periods.json`.
    Sine,
    /// Mean-switching series; also writes `labels.csv`.
    TwoRegime,
}

impl std::str::FromStr for SyntheticKind {
    type Err = LatteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "var" => Ok(SyntheticKind::Var),
            "sine" => Ok(SyntheticKind::Sine),
            "two-regime" => Ok(SyntheticKind::TwoRegime),
            other => Err(LatteError::config(format!("unknown synthetic dataset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenRequest {
    pub kind: SyntheticKind,
    pub num_series: usize,
    pub latent_dim: usize,
    pub len: usize,
    pub noise: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Writes a synthetic dataset as `data.csv` (wide layout) plus its generating
/// information.
pub fn cmd_gen_data(req: &GenRequest) -> Result<PathBuf> {
    let data_path = req.out_dir.join("data.csv");
    match req.kind {
        SyntheticKind::Var => {
            let (m, oracle) =
                gen_synthetic_latent_var(&VarSpec::new(req.num_series, req.latent_dim, req.len), req.seed)?;
            write_csv(&m, &data_path, CsvLayout::Wide)?;
            write_atomic(
                &req.out_dir.join("oracle.json"),
                serde_json::to_string(&oracle)?.as_bytes(),
            )?;
        }
        SyntheticKind::Sine => {
            let s = gen_sine_mixture(req.num_series, req.len, req.noise, req.seed)?;
            write_csv(&s.series, &data_path, CsvLayout::Wide)?;
            write_atomic(
                &req.out_dir.join("periods.json"),
                serde_json::to_string(&s.periods)?.as_bytes(),
            )?;
        }
        SyntheticKind::TwoRegime => {
            let r = gen_two_regime(req.num_series, req.len, req.seed)?;
            write_csv(&r.series, &data_path, CsvLayout::Wide)?;
            let mut s = String::from("t,regime\n");
            for (t, l) in r.labels.iter().enumerate() {
                let _ = writeln!(s, "{t},{l}");
            }
            write_atomic(&req.out_dir.join("labels.csv"), s.as_bytes())?;
        }
    }
    Ok(data_path)
}

/// Machine-readable error report printed on failure.
pub fn error_json(err: &LatteError) -> String {
    serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    })
    .to_string()
}
