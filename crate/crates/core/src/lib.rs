pub mod attr_denoise;
pub mod attr_encoder;
pub mod attr_report;
pub mod corpus;
pub mod damsm;
pub mod error;
pub mod evalkit;
pub mod gan;
pub mod gradcheck;
pub mod graph;
pub mod mask_prior;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
