//! Graph construction as a Markov decision process: a message-passing
//! encoder, a soft actor-critic agent over latent node-selection actions and
//! a reward fitted by maximum-entropy inverse optimal control.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod encoder;
pub mod env;
pub mod eval;
mod error;
pub mod graph;
pub mod irl;
pub mod nn;
pub mod policy;
pub mod sac;
pub mod train;

pub use error::{Error, Result};
