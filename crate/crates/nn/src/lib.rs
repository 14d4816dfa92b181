//! Neural beam policy for full-duplex probing and serving: a small reverse-mode autograd
//! engine, transformer blocks, the differentiable link-model ops and AdamW.

pub mod beamops;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod policy;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use policy::{ModelConfig, Policy, ProbeSource};
pub use tensor::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("no projection registered for a {0}x{1} array pair")]
    UnsupportedArray(usize, usize),
    #[error("probing budget {0} outside the supported range (max {1})")]
    ProbingBudget(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] fdbeam_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub type Policy32 = Policy<f32>;
pub type Policy64 = Policy<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
