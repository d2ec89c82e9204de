use serde::{Deserialize, Serialize};

use super::SeriesMatrix;
use crate::error::{LatteError, Result};

const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    /// (y − mean) / std
    #[default]
    Standard,
    /// y / mean|y|
    MeanAbs,
    None,
}

/// Per-series affine normalization `(y − shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Statistics from observed cells in time steps `[0, train_end)` only.
    pub fn fit(series: &SeriesMatrix, kind: ScalerKind, train_end: usize) -> Result<Self> {
        if train_end < 2 || train_end > series.len() {
            return Err(LatteError::contract(format!(
                "scaler fit range [0, {train_end}) must hold at least 2 of {} steps",
                series.len()
            )));
        }
        let n_series = series.num_series();
        if kind == ScalerKind::None {
            return Ok(Self::identity(n_series));
        }
        let mut shift = Vec::with_capacity(n_series);
        let mut scale = Vec::with_capacity(n_series);
        for n in 0..n_series {
            let seen: Vec<f64> = (0..train_end)
                .filter(|&t| series.is_observed(n, t))
                .map(|t| series.get(n, t))
                .collect();
            if seen.is_empty() {
                return Err(LatteError::contract(format!(
                    "series '{}' has no observed values before step {train_end}",
                    series.names()[n]
                )));
            }
            let count = seen.len() as f64;
            let (s, mut c) = match kind {
                ScalerKind::Standard => {
                    let mean = seen.iter().sum::<f64>() / count;
                    let var = seen.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
                    (mean, var.sqrt())
                }
                ScalerKind::MeanAbs => (0.0, seen.iter().map(|v| v.abs()).sum::<f64>() / count),
                ScalerKind::None => unreachable!(),
            };
            if !(c >= MIN_SCALE) {
                log::warn!(
                    "series '{}' is constant over the training range; using scale 1",
                    series.names()[n]
                );
                c = 1.0;
            }
            shift.push(s);
            scale.push(c);
        }
        Ok(Self { shift, scale })
    }

    pub fn num_series(&self) -> usize {
        self.shift.len()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.num_series() {
            return Err(LatteError::dim(format!(
                "scaler fit on {} series applied to {n}",
                self.num_series()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, series: &SeriesMatrix) -> Result<SeriesMatrix> {
        self.check(series.num_series())?;
        let t_total = series.len();
        let values = series
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let n = i / t_total.max(1);
                (v - self.shift[n]) / self.scale[n]
            })
            .collect();
        series.with_values(values)
    }

    pub fn invert(&self, series: &SeriesMatrix) -> Result<SeriesMatrix> {
        self.check(series.num_series())?;
        let t_total = series.len();
        let values = series
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let n = i / t_total.max(1);
                v * self.scale[n] + self.shift[n]
            })
            .collect();
        series.with_values(values)
    }

    /// Normalizes rows laid out with the series index last.
    pub fn apply_rows(&self, rows: &mut [f64]) -> Result<()> {
        let n = self.num_series();
        if !rows.len().is_multiple_of(n) {
            return Err(LatteError::dim(format!("{} values are not rows of {n}", rows.len())));
        }
        for (i, v) in rows.iter_mut().enumerate() {
            *v = (*v - self.shift[i % n]) / self.scale[i % n];
        }
        Ok(())
    }

    /// Maps normalized rows (series index last) back to original units.
    pub fn invert_rows(&self, rows: &mut [f64]) -> Result<()> {
        let n = self.num_series();
        if !rows.len().is_multiple_of(n) {
            return Err(LatteError::dim(format!("{} values are not rows of {n}", rows.len())));
        }
        for (i, v) in rows.iter_mut().enumerate() {
            *v = *v * self.scale[i % n] + self.shift[i % n];
        }
        Ok(())
    }
}
