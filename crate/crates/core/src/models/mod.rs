//! Model families: linear, single-series SARIMA, tree ensembles and
//! recurrent networks.

use thiserror::Error;

pub mod arima;
pub mod neural;
pub mod regression;
pub mod trees;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty training input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("insufficient data: need {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite objective at {0}")]
    NonFiniteObjective(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
}

/// SplitMix64 mixing of a master seed and a stream index, so sub-seeds do
/// not depend on execution order.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
