use serde::{Deserialize, Serialize};

use super::LatteModel;
use crate::dataio::{sample_training_windows, SeriesMatrix};
use crate::error::{LatteError, Result};
use crate::neural::AdamState;
use crate::rng::SeededRng;

/// Mean losses over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec_loss: f64,
    pub negll: f64,
    pub combined: f64,
}

impl LatteModel {
    /// Trains on random windows drawn from time steps `[0, train_end)` of
    /// already-normalized `series`, using the epochs, batch size, optimizer
    /// and seed of the model config.
    pub fn train(&mut self, series: &SeriesMatrix, train_end: usize) -> Result<Vec<EpochRecord>> {
        self.train_with(series, train_end, |_| {})
    }

    /// Like [`LatteModel::train`], calling `on_epoch` after every epoch.
    pub fn train_with(
        &mut self,
        series: &SeriesMatrix,
        train_end: usize,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        if series.num_series() != self.num_series() {
            return Err(LatteError::dim(format!(
                "data has {} series, model expects {}",
                series.num_series(),
                self.num_series()
            )));
        }
        let cfg = self.config.clone();
        if train_end > series.len() || train_end < cfg.window_len() {
            return Err(LatteError::contract(format!(
                "training range of {train_end} steps holds no full window of {} steps",
                cfg.window_len()
            )));
        }
        let mut adam = AdamState::new(cfg.optimizer)?;
        let mut rng = SeededRng::stream(cfg.seed, 1 + self.step);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let (mut rec, mut nll, mut comb) = (0.0, 0.0, 0.0);
            for b in 0..cfg.batches_per_epoch {
                let batch = sample_training_windows(
                    series,
                    cfg.context_len,
                    cfg.horizon,
                    cfg.batch_size,
                    train_end,
                    &mut rng,
                )?;
                let fail = |e: LatteError| match e {
                    LatteError::Numeric(m) => LatteError::numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    LatteError::Domain { op, index, value } => LatteError::numeric(format!(
                        "epoch {epoch}, batch {b}: {op} received {value} at index {index}"
                    )),
                    other => other,
                };
                let (terms, mut grads) = self.gradients(&batch).map_err(fail)?;
                if !terms.combined.is_finite() {
                    return Err(LatteError::numeric(format!(
                        "epoch {epoch}, batch {b}: loss is {}",
                        terms.combined
                    )));
                }
                if let Some(c) = cfg.grad_clip {
                    grads.clip_global_norm(c);
                }
                adam.step(self, &grads)?;
                self.step += 1;
                rec += terms.reconstruction;
                nll += terms.negll;
                comb += terms.combined;
            }
            let k = cfg.batches_per_epoch as f64;
            let record = EpochRecord {
                epoch,
                rec_loss: rec / k,
                negll: nll / k,
                combined: comb / k,
            };
            log::debug!(
                "epoch {epoch}: reconstruction {:.6}, negll {:.6}, combined {:.6}",
                record.rec_loss,
                record.negll,
                record.combined
            );
            on_epoch(&record);
            history.push(record);
        }
        Ok(history)
    }
}
