//! Dataset ingestion, scaling, window sampling, evaluation splits and
//! synthetic generators.

mod csvio;
mod scaler;
mod synthetic;
mod windows;

pub use csvio::{load_csv, parse_csv, write_csv, write_csv_string, CsvLayout};
pub use scaler::{Scaler, ScalerKind};
pub use synthetic::{
    gen_sine_mixture, gen_synthetic_latent_var, gen_two_regime, SineMixture, TwoRegime, VarOracle, VarSpec,
};
pub use windows::{rolling_splits, sample_training_windows, SplitPlan, SplitWindow, MAX_WINDOW_RETRIES};

use std::io::Write;
use std::path::Path;

use crate::error::{LatteError, Result};

/// N series over T_total time steps, stored series-major.
/// Missing cells hold NaN and are flagged in `mask` (true = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    names: Vec<String>,
    times: Vec<String>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl SeriesMatrix {
    /// `values[n * T + t]`; non-finite entries are treated as missing.
    pub fn new(names: Vec<String>, times: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(LatteError::dim("series matrix needs at least one series"));
        }
        if values.len() != names.len() * times.len() {
            return Err(LatteError::dim(format!(
                "{} values do not fill {} series x {} steps",
                values.len(),
                names.len(),
                times.len()
            )));
        }
        let mask = values.iter().map(|v| v.is_finite()).collect();
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { f64::NAN })
            .collect();
        Ok(Self {
            names,
            times,
            values,
            mask,
        })
    }

    /// Builds from rows of `N` values per time step, with integer time labels.
    pub fn from_time_major(names: Vec<String>, rows: &[f64]) -> Result<Self> {
        let n = names.len();
        if n == 0 || !rows.len().is_multiple_of(n) {
            return Err(LatteError::dim(format!(
                "{} values are not whole rows of {n} series",
                rows.len()
            )));
        }
        let t_total = rows.len() / n;
        let mut values = vec![0.0; rows.len()];
        for t in 0..t_total {
            for j in 0..n {
                values[j * t_total + t] = rows[t * n + j];
            }
        }
        Self::new(names, (0..t_total).map(|t| t.to_string()).collect(), values)
    }

    pub fn num_series(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, n: usize, t: usize) -> f64 {
        self.values[n * self.len() + t]
    }

    pub fn is_observed(&self, n: usize, t: usize) -> bool {
        self.mask[n * self.len() + t]
    }

    pub fn series(&self, n: usize) -> &[f64] {
        let t = self.len();
        &self.values[n * t..(n + 1) * t]
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|m| !m)
    }

    /// True when every cell in time steps `[start, start + len)` is observed.
    pub fn span_observed(&self, start: usize, len: usize) -> bool {
        let t_total = self.len();
        (0..self.num_series()).all(|n| {
            self.mask[n * t_total + start..n * t_total + start + len]
                .iter()
                .all(|&m| m)
        })
    }

    /// Time steps `[start, start + len)` as `[len, N]` rows.
    pub fn time_major(&self, start: usize, len: usize) -> Result<Vec<f64>> {
        if start + len > self.len() {
            return Err(LatteError::dim(format!(
                "slice [{start}, {}) exceeds {} time steps",
                start + len,
                self.len()
            )));
        }
        let n = self.num_series();
        let mut out = Vec::with_capacity(len * n);
        for t in start..start + len {
            for j in 0..n {
                out.push(self.get(j, t));
            }
        }
        Ok(out)
    }

    /// Sub-matrix over time steps `[start, end)`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(LatteError::dim(format!(
                "time slice [{start}, {end}) outside 0..{}",
                self.len()
            )));
        }
        let t_total = self.len();
        let mut values = Vec::with_capacity(self.num_series() * (end - start));
        let mut mask = Vec::with_capacity(values.capacity());
        for n in 0..self.num_series() {
            values.extend_from_slice(&self.values[n * t_total + start..n * t_total + end]);
            mask.extend_from_slice(&self.mask[n * t_total + start..n * t_total + end]);
        }
        Ok(Self {
            names: self.names.clone(),
            times: self.times[start..end].to_vec(),
            values,
            mask,
        })
    }

    /// Same shape and labels, new values (series-major).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.names.clone(), self.times.clone(), values)
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| LatteError::Io(e.error))?;
    Ok(())
}
