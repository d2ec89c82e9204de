use serde::{Deserialize, Serialize};

use crate::dataio::ScalerKind;
use crate::error::{LatteError, Result};
use crate::flows::FlowKind;
use crate::neural::{AdamConfig, CellKind};

/// Architecture, loss and optimization settings of a [`super::LatteModel`].
///
/// Width fields left as `None` are filled from the series and latent sizes by
/// [`ModelConfig::resolved`]; a resolved config is what checkpoints store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Observed dimension N. Zero means "take it from the data".
    pub num_series: usize,
    /// Latent dimension D.
    pub latent_dim: usize,
    /// Recurrent hidden size H.
    pub hidden_size: usize,
    pub rnn_layers: usize,
    pub cell: CellKind,
    /// Context length T.
    pub context_len: usize,
    /// Forecast horizon τ.
    pub horizon: usize,
    /// Weight of the latent negative log-likelihood in the training loss.
    pub lambda: f64,
    pub flow: FlowKind,
    pub flow_depth: usize,
    pub coupling_hidden: Option<usize>,
    pub scale_clamp: Option<f64>,
    /// Hidden widths of the encoder; an empty list makes it linear.
    pub encoder_hidden: Option<Vec<usize>>,
    pub decoder_hidden: Option<Vec<usize>>,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub grad_clip: Option<f64>,
    pub scaler: ScalerKind,
    pub seed: u64,
    /// Permits D ≥ N.
    pub allow_wide_latent: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_series: 0,
            latent_dim: 4,
            hidden_size: 40,
            rnn_layers: 1,
            cell: CellKind::Gru,
            context_len: 24,
            horizon: 24,
            lambda: 1.0,
            flow: FlowKind::RealNvp,
            flow_depth: 4,
            coupling_hidden: None,
            scale_clamp: Some(5.0),
            encoder_hidden: None,
            decoder_hidden: None,
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 200,
            batches_per_epoch: 10,
            grad_clip: Some(10.0),
            scaler: ScalerKind::Standard,
            seed: 0,
            allow_wide_latent: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LatteError::config(msg));
        if self.num_series == 0 {
            return fail("number of series must be set".into());
        }
        if self.latent_dim == 0 {
            return fail("latent dimension must be at least 1".into());
        }
        if self.latent_dim >= self.num_series && !self.allow_wide_latent {
            return fail(format!(
                "latent dimension {} must be below the number of series {} (set allow_wide_latent to override)",
                self.latent_dim, self.num_series
            ));
        }
        if self.context_len < 2 {
            return fail(format!("context length must be at least 2, got {}", self.context_len));
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.hidden_size == 0 || self.rnn_layers == 0 || self.flow_depth == 0 {
            return fail("hidden size, RNN layers and flow depth must be positive".into());
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return fail("batch size and batches per epoch must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("gradient clip must be positive, got {c}"));
            }
        }
        if let Some(c) = self.scale_clamp {
            if !(c > 0.0) {
                return fail(format!("scale clamp must be positive, got {c}"));
            }
        }
        for widths in [&self.encoder_hidden, &self.decoder_hidden].into_iter().flatten() {
            if widths.contains(&0) {
                return fail(format!("zero-width layer in {widths:?}"));
            }
        }
        if self.coupling_hidden == Some(0) {
            return fail("coupling width must be positive".into());
        }
        self.optimizer.validate()
    }

    /// Copy with every derived default filled in, validated.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.validate()?;
        let width = 32.max(2 * c.num_series);
        c.encoder_hidden.get_or_insert_with(|| vec![width, width]);
        c.decoder_hidden.get_or_insert_with(|| vec![width, width]);
        c.coupling_hidden.get_or_insert(16.max(4 * c.latent_dim));
        Ok(c)
    }

    /// Window length T + τ used in training.
    pub fn window_len(&self) -> usize {
        self.context_len + self.horizon
    }
}
