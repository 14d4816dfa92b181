//! Experiment layer: training schedules and loop, method evaluation, sweeps and plots.

pub mod eval;
pub mod plot;
pub mod schedule;
pub mod train;

pub use eval::{evaluate_method, run_sweep, EvalConfig, EvalRow, Method, SweepAxis, SweepSpec};
pub use schedule::LrSchedule;
pub use train::{finetune, pretrain, GroupConfig, SceneBank, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("{0} requires a trained checkpoint")]
    MissingCheckpoint(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error(transparent)]
    Core(#[from] fdbeam_core::Error),
    #[error(transparent)]
    Nn(#[from] fdbeam_nn::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
