//! Held-out evaluation of an ensemble.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ensemble::{Ensemble, PredictError, Prediction};
use super::model::N_CLASSES;
use super::LabeledPoint;
use crate::exec::Execution;
use crate::labels::FinalLabel;

/// One histogram bin per possible winning vote count, 0 through 10.
pub const CONFIDENCE_BINS: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    /// `None` when the label was never predicted.
    pub precision: Option<f64>,
    /// `None` when the label does not occur in the test set.
    pub recall: Option<f64>,
    pub support: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub per_label: BTreeMap<FinalLabel, LabelMetrics>,
    /// `confusion[truth][predicted]`, indexed by label rank order.
    pub confusion: [[u32; N_CLASSES]; N_CLASSES],
    /// `confidence_histogram[k]` counts predictions with confidence k/10.
    pub confidence_histogram: [u32; CONFIDENCE_BINS],
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty test set")]
    Empty,
    #[error("{count} test points were used in training (e.g. {example})")]
    Overlap { count: usize, example: String },
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Predicts every test point and scores the result.
///
/// Test points whose ids appear in the ensemble's training ids are rejected,
/// so a held-out score cannot silently include training data.
pub fn evaluate(e: &Ensemble, test: &[LabeledPoint], exec: Execution) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let trained: HashSet<&str> = e.metadata.training_ids.iter().map(String::as_str).collect();
    let overlap: Vec<&str> = test.iter().map(|p| p.point_id.as_str()).filter(|id| trained.contains(id)).collect();
    if let Some(first) = overlap.first() {
        return Err(EvalError::Overlap { count: overlap.len(), example: first.to_string() });
    }
    let dim = e.input_dim;
    if let Some(p) = test.iter().find(|p| p.vector.len() != dim) {
        return Err(PredictError::Dimension { expected: dim, got: p.vector.len() }.into());
    }
    let mut x = Array2::zeros((test.len(), dim));
    for (mut row, p) in x.rows_mut().into_iter().zip(test) {
        row.assign(&ndarray::ArrayView1::from(&p.vector));
    }
    let ids: Vec<String> = test.iter().map(|p| p.point_id.clone()).collect();
    let preds = e.predict_batch(&ids, x.view(), exec)?;
    let pairs: Vec<(FinalLabel, Prediction)> = test.iter().map(|p| p.final_label).zip(preds).collect();
    Ok(EvalReport::from_pairs(&pairs))
}

impl EvalReport {
    /// Scores `(truth, prediction)` pairs.
    pub fn from_pairs(pairs: &[(FinalLabel, Prediction)]) -> EvalReport {
        let mut confusion = [[0u32; N_CLASSES]; N_CLASSES];
        let mut histogram = [0u32; CONFIDENCE_BINS];
        for (truth, p) in pairs {
            confusion[truth.index()][p.label.index()] += 1;
            let winning = p.votes.get(&p.label).copied().unwrap_or(0) as usize;
            histogram[winning.min(CONFIDENCE_BINS - 1)] += 1;
        }
        let correct: u32 = (0..N_CLASSES).map(|i| confusion[i][i]).sum();
        let per_label = FinalLabel::ALL
            .iter()
            .map(|l| {
                let i = l.index();
                let tp = f64::from(confusion[i][i]);
                let support: u32 = confusion[i].iter().sum();
                let predicted: u32 = (0..N_CLASSES).map(|t| confusion[t][i]).sum();
                let m = LabelMetrics {
                    precision: (predicted > 0).then(|| tp / f64::from(predicted)),
                    recall: (support > 0).then(|| tp / f64::from(support)),
                    support,
                };
                (*l, m)
            })
            .collect();
        EvalReport {
            n: pairs.len(),
            accuracy: if pairs.is_empty() { 0.0 } else { f64::from(correct) / pairs.len() as f64 },
            per_label,
            confusion,
            confidence_histogram: histogram,
        }
    }
}
