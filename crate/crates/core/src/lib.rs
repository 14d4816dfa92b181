//! Simulation core for full-duplex massive-MIMO beamforming: array geometry, site-specific
//! channels, link metrics, the self-interference probing model and classical baselines.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); channel generation and
//! calibration run in `f64`.

pub mod arraygeom;
pub mod baselines;
pub mod channelsim;
pub mod cmat;
pub mod dataset;
pub mod linkmetrics;
pub mod probing;
pub mod scalar;

pub use scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("degenerate beam: {0}")]
    DegenerateBeam(String),
    #[error("empty calibration sample")]
    EmptySample,
    #[error("no calibration for kappa = {0} dB")]
    Uncalibrated(f64),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub type CMat64 = cmat::CMat<f64>;
pub type CMat32 = cmat::CMat<f32>;
pub type Scene64 = channelsim::SceneRealization<f64>;
pub type Scene32 = channelsim::SceneRealization<f32>;
pub type BeamPair64 = linkmetrics::BeamPair<f64>;
pub type BeamPair32 = linkmetrics::BeamPair<f32>;
pub type LinkReport64 = linkmetrics::LinkReport<f64>;
pub type LinkReport32 = linkmetrics::LinkReport<f32>;
pub type Budget64 = channelsim::LinkBudget<f64>;
