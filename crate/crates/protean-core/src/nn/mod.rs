//! A minimal differentiable network: the fixed CNN detector (and a small MLP),
//! forward/backward propagation, the training objective and plain SGD.

mod loss;
mod model;
mod network;

pub use loss::{embedding_objective, input_gradient, loss_and_gradient, loss_value, Alignment, LossBreakdown, LossSpec, Proximal};
pub use model::{build_model, build_model_with, sgd_step, sgd_step_in_place, Architecture, CnnConfig, LayerDesc, LayerKind, ModelParams, Shape};
pub use network::{backward, forward, forward_embedding, log_softmax_in_place, ForwardResult, Mode};

#[cfg(test)]
mod tests;
