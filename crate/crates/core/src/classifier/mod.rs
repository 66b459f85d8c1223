//! Bagged ensemble of small neural classifiers over semantic vectors.

mod ensemble;
mod metrics;
mod model;
pub mod synthetic;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{FinalLabel, InitialLabel};

pub use ensemble::{
    derive_seed, train_ensemble, Ensemble, EnsembleConfig, EnsembleMetadata, Prediction, PredictError, SearchSpace,
    ENSEMBLE_FORMAT, ENSEMBLE_SIZE, TIE_BREAK,
};
pub use metrics::{evaluate, EvalError, EvalReport, LabelMetrics, CONFIDENCE_BINS};
pub use model::{softmax_rows, Architecture, ConstituentModel, Dense, Matrix, Params, N_CLASSES};
pub use train::{fit, train_single, TrainConfig, TrainingSet, LOSS_TOLERANCE};

/// A labeled data point as consumed by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub point_id: String,
    pub vector: Vec<f64>,
    pub initial_label: InitialLabel,
    pub final_label: FinalLabel,
    pub annotator_id: String,
    pub round: u32,
}

impl LabeledPoint {
    /// Builds a point from an annotator's label. `Others` has no final label
    /// and yields `None`.
    pub fn new(
        point_id: impl Into<String>,
        vector: Vec<f64>,
        initial_label: InitialLabel,
        annotator_id: impl Into<String>,
        round: u32,
    ) -> Option<LabeledPoint> {
        Some(LabeledPoint {
            point_id: point_id.into(),
            vector,
            initial_label,
            final_label: initial_label.to_final()?,
            annotator_id: annotator_id.into(),
            round,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("no training data")]
    Empty,
    #[error("training data covers fewer than two labels")]
    SingleClass,
    #[error("point {point_id} has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize, point_id: String },
    #[error("point {0} has a non-finite vector component")]
    NonFiniteInput(String),
    #[error("loss became non-finite in epoch {epoch} (step size {learning_rate}, last finite loss {last_loss})")]
    NonFiniteLoss { epoch: usize, learning_rate: f64, last_loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}
