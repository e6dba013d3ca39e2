//! Minimal dense autodiff used by the learned components.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{sigmoid, softplus, Grads, Graph, Var};
pub use optim::{clip_grad_norm, Adam, Optimizer, OptimizerConfig, SgdMomentum};
pub use params::{Init, ParamBuilder, ParamId, ParamSet, ParamShape};
pub use tensor::Tensor;

/// Relative error used by the finite-difference checks:
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss} vs initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}
