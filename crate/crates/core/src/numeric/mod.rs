//! Dense tensors, a reverse-mode tape, and the layers built on it.

mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, GradCheck, GRADCHECK_FLOOR};
pub use graph::{Graph, Var};
pub use layers::{glorot_bound, Embedding, Linear, LstmCell, LstmState};
pub use optim::{adam_step, clip_grad_norm, Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::{softmax, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumericError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
}
