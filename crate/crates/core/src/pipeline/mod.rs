//! Experiment configuration, dataset handling, protocols and reports.

pub mod bench;
pub mod config;
pub mod data;
pub mod frames;
pub mod protocols;
pub mod report;

use thiserror::Error;

pub use config::{Arm, DatasetConfig, ExperimentConfig, FeatureMode, ProtocolConfig};
pub use protocols::{fit_model, run, Experiment};
pub use report::Report;

/// Pipeline failures split into configuration problems and data problems,
/// which the command line maps to distinct exit codes.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Surface(#[from] crate::surface::SurfaceError),
    #[error(transparent)]
    Track(#[from] crate::tracker::TrackError),
    #[error(transparent)]
    Skan(#[from] crate::skan::SkanError),
    #[error(transparent)]
    Pool(#[from] crate::pool::PoolError),
    #[error(transparent)]
    Classify(#[from] crate::classify::ClassifyError),
    #[error(transparent)]
    Aer(#[from] crate::aer::AerError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}
