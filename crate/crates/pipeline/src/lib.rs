//! Stage runner, run manifest and labeling service for techradar.
//!
//! Each stage reads artifacts from the data directory, writes new ones and
//! records the sha256 of everything it touched in `manifest.json`. The
//! labeling store and its HTTP API live in [`labeling`].

pub mod config;
pub mod labeling;
pub mod manifest;
pub mod stages;

use std::path::{Path, PathBuf};

pub use config::Config;
pub use stages::{Pipeline, StageOutcome, StageStatus};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage} requires {file} (produced by {producer})")]
    MissingInput { stage: &'static str, file: String, producer: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> PipelineError {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}
