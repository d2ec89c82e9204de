//! Probabilistic multivariate forecasting with latent temporal flows.
//!
//! High-dimensional observations are embedded into a small latent space by an
//! encoder, the latent trajectory is modelled autoregressively by a recurrent
//! conditioner feeding a conditional normalizing flow, and sampled latent
//! paths are mapped back through a decoder. All networks are trained jointly
//! with a reverse-mode tape implemented in [`diffmath`].

pub mod cli;
pub mod dataio;
pub mod diffmath;
pub mod error;
pub mod flows;
pub mod latte;
pub mod metrics;
pub mod neural;
pub mod rng;

pub use error::{LatteError, Result};
