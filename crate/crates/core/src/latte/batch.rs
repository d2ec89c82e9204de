use crate::error::{LatteError, Result};

/// A batch of time-contiguous windows, each `T` context steps followed by
/// `τ` target steps, stored `[B, T + τ, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    context_len: usize,
    horizon: usize,
    num_series: usize,
    starts: Vec<usize>,
    values: Vec<f64>,
}

impl WindowBatch {
    pub fn new(
        context_len: usize,
        horizon: usize,
        num_series: usize,
        starts: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let len = context_len + horizon;
        if starts.is_empty() || len == 0 || num_series == 0 {
            return Err(LatteError::contract("window batch must be non-empty"));
        }
        if values.len() != starts.len() * len * num_series {
            return Err(LatteError::dim(format!(
                "{} values do not fill {} windows of {len}x{num_series}",
                values.len(),
                starts.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LatteError::contract(format!(
                "window batch holds a missing or non-finite value at flat index {i}"
            )));
        }
        Ok(Self {
            context_len,
            horizon,
            num_series,
            starts,
            values,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.starts.len()
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn window_len(&self) -> usize {
        self.context_len + self.horizon
    }

    pub fn num_series(&self) -> usize {
        self.num_series
    }

    /// Start offset of each window in the source series.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Window `b` as `[T + τ, N]` rows.
    pub fn window(&self, b: usize) -> &[f64] {
        let w = self.window_len() * self.num_series;
        &self.values[b * w..(b + 1) * w]
    }

    pub fn context(&self, b: usize) -> &[f64] {
        &self.window(b)[..self.context_len * self.num_series]
    }

    pub fn target(&self, b: usize) -> &[f64] {
        &self.window(b)[self.context_len * self.num_series..]
    }

    /// Values reordered so that row `t·B + b` holds step `t` of window `b`.
    pub fn time_major(&self) -> Vec<f64> {
        let (bs, len, n) = (self.batch_size(), self.window_len(), self.num_series);
        let mut out = vec![0.0; self.values.len()];
        for b in 0..bs {
            for t in 0..len {
                let src = (b * len + t) * n;
                let dst = (t * bs + b) * n;
                out[dst..dst + n].copy_from_slice(&self.values[src..src + n]);
            }
        }
        out
    }
}
