use serde::{Deserialize, Serialize};

use super::SeriesMatrix;
use crate::error::{LatteError, Result};
use crate::latte::WindowBatch;
use crate::rng::SeededRng;

/// Draws allowed per window before giving up on finding a fully observed one.
pub const MAX_WINDOW_RETRIES: usize = 1000;

/// `batch` windows of `T + τ` steps with uniform random starts, each ending
/// at or before `train_end`. Windows touching a missing cell are redrawn.
pub fn sample_training_windows(
    series: &SeriesMatrix,
    context_len: usize,
    horizon: usize,
    batch: usize,
    train_end: usize,
    rng: &mut SeededRng,
) -> Result<WindowBatch> {
    let len = context_len + horizon;
    if batch == 0 || len == 0 {
        return Err(LatteError::contract(
            "window sampling needs batch and window length > 0",
        ));
    }
    if train_end > series.len() || train_end < len {
        return Err(LatteError::contract(format!(
            "training span of {train_end} steps cannot hold a window of {len} (series has {})",
            series.len()
        )));
    }
    let positions = (train_end - len + 1) as u64;
    let check_mask = series.has_missing();
    let mut starts = Vec::with_capacity(batch);
    let mut values = Vec::with_capacity(batch * len * series.num_series());
    for _ in 0..batch {
        let mut found = None;
        for _ in 0..MAX_WINDOW_RETRIES {
            let s = rng.below(positions) as usize;
            if !check_mask || series.span_observed(s, len) {
                found = Some(s);
                break;
            }
        }
        let s = found.ok_or_else(|| {
            LatteError::contract(format!(
                "no fully observed window of {len} steps found in {MAX_WINDOW_RETRIES} draws"
            ))
        })?;
        starts.push(s);
        values.extend(series.time_major(s, len)?);
    }
    WindowBatch::new(context_len, horizon, series.num_series(), starts, values)
}

/// One rolling test window: context `[context_start, context_end)`,
/// horizon `[context_end, horizon_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWindow {
    pub context_start: usize,
    pub context_end: usize,
    pub horizon_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_end: usize,
    pub context_len: usize,
    pub horizon: usize,
    pub windows: Vec<SplitWindow>,
}

/// `num_windows` back-to-back horizons tiled backward from the end of a
/// series of `total_len` steps, each preceded by `context_len` context steps.
pub fn rolling_splits(total_len: usize, num_windows: usize, horizon: usize, context_len: usize) -> Result<SplitPlan> {
    if num_windows == 0 || horizon == 0 || context_len == 0 {
        return Err(LatteError::contract("rolling splits need W, τ and T all positive"));
    }
    let required = context_len + num_windows * horizon;
    if total_len < required {
        return Err(LatteError::contract(format!(
            "series of {total_len} steps is too short: {num_windows} windows of {horizon} with context {context_len} need at least {required}"
        )));
    }
    let train_end = total_len - num_windows * horizon;
    let windows = (0..num_windows)
        .map(|w| {
            let context_end = train_end + w * horizon;
            SplitWindow {
                context_start: context_end - context_len,
                context_end,
                horizon_end: context_end + horizon,
            }
        })
        .collect();
    Ok(SplitPlan {
        train_end,
        context_len,
        horizon,
        windows,
    })
}
