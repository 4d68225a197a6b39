//! Benchmark tooling for the stereodc codec: quality metrics, Bjontegaard
//! deltas, rate-distortion sweeps with CSV reports, and a procedural stereo
//! scene generator.

pub mod bd;
pub mod csv;
pub mod metrics;
pub mod sweep;
pub mod synth;

pub use bd::{bd_metrics, bd_psnr, bd_rate, RDCurve};
pub use metrics::{ms_ssim, psnr};
pub use sweep::{load_dataset, rd_sweep, AllocationRow, Dataset, StereoPair, SweepConfig, SweepReport};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Codec(#[from] stereodc::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("insufficient overlap: {0}")]
    InsufficientOverlap(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("decoder mismatch on {0}")]
    DecoderMismatch(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
