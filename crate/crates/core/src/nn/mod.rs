//! Minimal differentiable network engine.

mod arch;
mod checkpoint;
mod layer;
mod linalg;
mod loss;
mod model;
mod train;

pub use arch::Architecture;
pub use layer::{softplus, Layer, ParamSpec};
pub use loss::{log_softmax, loss, loss_and_grad, softmax, LossKind};
pub use model::{ActivationMode, Gradients, Model, DEFAULT_SOFTPLUS_BETA};
pub use train::{accuracy, train, EpochStats, TrainConfig, TrainHistory};
