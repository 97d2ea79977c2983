pub mod autograd;
pub mod checkpoint;
pub mod complexity;
pub mod data;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scc;
pub mod tensor;
pub mod train;
pub mod windowing;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{HitNetwork, ModelConfig};
pub use tensor::Tensor;
