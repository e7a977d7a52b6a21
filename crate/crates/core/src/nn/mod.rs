//! Minimal dense neural-network toolkit: matrices, a gradient tape,
//! perceptrons and the Adam optimizer.

mod adam;
mod matrix;
mod mlp;
mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use mlp::{BoundLinear, BoundMlp, Linear, Mlp, Parameters};
pub use tape::{sigmoid, softplus, Csr, Gradients, Tape, Var};
