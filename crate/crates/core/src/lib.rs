//! Multi-variable LSTM forecaster with mixture attention over variables.
//!
//! The model keeps one hidden-state row per input variable, attends over time
//! within each row, and predicts the target as a mixture with one component
//! per variable. Posterior mixture weights, averaged over a dataset, give a
//! per-variable importance score.

pub mod autodiff;
pub mod cell;
pub mod config;
pub mod data;
pub mod error;
pub mod head;
pub mod init;
pub mod interpret;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use cell::Dims;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{Model, VariantKind};
pub use tensor::Tensor;
