//! Minimal differentiable machinery: dense networks, losses, gradients,
//! Jacobians, the Adam optimizer and JSON checkpoints.

mod adam;
pub mod checkpoint;
mod loss;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use loss::{loss_and_grads, Loss};
pub use mlp::{Activation, GradientSet, Mlp, OutputGrad, Trace};
pub(crate) use mlp::rows;
