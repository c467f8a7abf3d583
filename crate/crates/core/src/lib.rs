pub mod algebra;
pub mod data;
pub mod diffcore;
mod error;
pub mod field;
pub mod flow;
pub mod image;
pub mod latent;
pub mod oracle;
pub mod symmetry;
mod train;

pub use error::{Error, Result};
pub use train::TrainConfig;
