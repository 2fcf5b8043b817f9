//! Stochastic conceptual ENSO models and the tooling to learn them from data:
//! candidate-function libraries, Gaussian causation entropy, closed-form
//! maximum-likelihood fitting, ensemble Kalman smoothing, latent-variable
//! learning and the ENSO validation metric suite.

pub mod error;
pub mod estimation;
pub mod io;
pub mod assimilation;
pub mod causal;
pub mod diagnostics;
pub mod library;
pub mod latent;
pub mod model;
mod stats;

pub use error::{Error, Result};
