//! Bagging, per-model architecture search, and voting.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::model::{Architecture, ConstituentModel};
use super::train::{fit, TrainConfig, TrainingSet};
use super::{LabeledPoint, TrainError};
use crate::exec::Execution;
use crate::labels::FinalLabel;

pub const ENSEMBLE_SIZE: usize = 10;
pub const ENSEMBLE_FORMAT: &str = "techradar-ensemble/1";
/// Equal vote counts resolve to the higher-ranked final label.
pub const TIE_BREAK: &str = "label-rank";

/// Candidate grid for the per-model random search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub hidden: Vec<usize>,
    pub learning_rates: Vec<f64>,
    /// Grid points tried per model; 1 skips scoring.
    pub trials: usize,
    /// Epochs used when scoring a candidate on out-of-bag points.
    pub epochs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { hidden: vec![0, 32, 64, 128], learning_rates: vec![1e-2, 1e-3], trials: 3, epochs: 10 }
    }
}

impl SearchSpace {
    fn candidates(&self) -> Vec<Architecture> {
        let mut out = Vec::new();
        for &hidden in &self.hidden {
            for &learning_rate in &self.learning_rates {
                out.push(Architecture { hidden, learning_rate });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub train: TrainConfig,
    pub search: SearchSpace,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.search.hidden.is_empty() || self.search.learning_rates.is_empty() {
            return bad("search grid is empty");
        }
        if self.search.learning_rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.search.trials == 0 {
            return bad("search.trials must be at least 1");
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// SplitMix64 step over `(seed, stream)`; used to give each model and each
/// search trial its own independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub trained_at: String,
    pub master_seed: u64,
    /// Digest over all training point ids.
    pub data_fingerprint: String,
    /// Sorted, deduplicated training point ids, used to reject test overlap.
    pub training_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub format: String,
    pub input_dim: usize,
    pub labels: Vec<FinalLabel>,
    pub tie_break: String,
    pub models: Vec<ConstituentModel>,
    pub metadata: EnsembleMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub point_id: String,
    pub label: FinalLabel,
    pub confidence: f64,
    pub votes: BTreeMap<FinalLabel, u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("vector has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("ensemble has {0} models, expected {ENSEMBLE_SIZE}")]
    ModelCount(usize),
    #[error("model {index} has input dimension {got}, ensemble declares {expected}")]
    Inconsistent { index: usize, expected: usize, got: usize },
    #[error("unsupported ensemble format {0:?}")]
    Format(String),
    #[error("{0} point ids but {1} vectors")]
    Length(usize, usize),
}

/// Trains ten models on independent bootstrap resamples.
///
/// Each model draws `|data|` rows with replacement using a seed derived from
/// the master seed, picks an architecture by scoring a few random grid points
/// on its out-of-bag rows, then trains that architecture on the full resample.
pub fn train_ensemble(data: &[LabeledPoint], cfg: &EnsembleConfig, exec: Execution) -> Result<Ensemble, TrainError> {
    cfg.validate()?;
    let set = TrainingSet::from_points(data)?;
    if set.distinct_labels(&(0..set.len()).collect::<Vec<_>>()) < 2 {
        return Err(TrainError::SingleClass);
    }
    let results = exec.map_range(ENSEMBLE_SIZE, |i| train_member(&set, cfg, i));
    let models = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let training_ids: Vec<String> = set.ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    Ok(Ensemble {
        format: ENSEMBLE_FORMAT.to_string(),
        input_dim: set.dim(),
        labels: FinalLabel::ALL.to_vec(),
        tie_break: TIE_BREAK.to_string(),
        models,
        metadata: EnsembleMetadata {
            trained_at: chrono::Utc::now().to_rfc3339(),
            master_seed: cfg.master_seed,
            data_fingerprint: set.fingerprint(&(0..set.len()).collect::<Vec<_>>()),
            training_ids,
        },
    })
}

fn train_member(set: &TrainingSet, cfg: &EnsembleConfig, index: usize) -> Result<ConstituentModel, TrainError> {
    let seed = derive_seed(cfg.master_seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = set.len();
    let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    rows.sort_unstable();
    // A resample can, rarely, miss every point of all but one label.
    if set.distinct_labels(&rows) < 2 {
        for _ in 0..16 {
            rows = (0..n).map(|_| rng.random_range(0..n)).collect();
            rows.sort_unstable();
            if set.distinct_labels(&rows) >= 2 {
                break;
            }
        }
    }
    let mut in_bag = vec![false; n];
    rows.iter().for_each(|&r| in_bag[r] = true);
    let mut oob: Vec<usize> = (0..n).filter(|&r| !in_bag[r]).collect();
    if oob.is_empty() {
        oob = rows.clone();
    }

    let mut candidates = cfg.search.candidates();
    let trials = cfg.search.trials.min(candidates.len());
    candidates.partial_shuffle(&mut rng, trials);
    let tried = &candidates[..trials];
    let arch = if trials == 1 {
        tried[0]
    } else {
        let search_cfg = TrainConfig { epochs: cfg.search.epochs, batch_size: cfg.train.batch_size };
        let mut best: Option<(usize, Architecture)> = None;
        for (t, &arch) in tried.iter().enumerate() {
            let probe = fit(set, &rows, arch, &search_cfg, derive_seed(seed, 1 + t as u64))?;
            let x = set.x.select(Axis(0), &oob);
            let correct = probe
                .votes(x.view())
                .iter()
                .zip(&oob)
                .filter(|(v, &r)| v.index() == set.y[r])
                .count();
            if best.is_none_or(|(c, _)| correct > c) {
                best = Some((correct, arch));
            }
        }
        best.expect("at least one trial").1
    };
    fit(set, &rows, arch, &cfg.train, seed)
}

/// Tallies votes into a prediction; ties go to the higher-ranked label.
pub fn tally(point_id: &str, votes: impl IntoIterator<Item = FinalLabel>) -> Prediction {
    let mut counts: BTreeMap<FinalLabel, u32> = FinalLabel::ALL.iter().map(|l| (*l, 0)).collect();
    let mut total = 0u32;
    for v in votes {
        *counts.get_mut(&v).expect("all labels present") += 1;
        total += 1;
    }
    // ALL is in rank order and max_by keeps the last maximum, so iterate in reverse.
    let (label, max) = FinalLabel::ALL
        .iter()
        .rev()
        .map(|l| (*l, counts[l]))
        .max_by_key(|(_, c)| *c)
        .expect("non-empty label set");
    Prediction {
        point_id: point_id.to_string(),
        label,
        confidence: if total == 0 { 0.0 } else { f64::from(max) / f64::from(total) },
        votes: counts,
    }
}

impl Ensemble {
    /// Checks structural invariants, e.g. after loading from disk.
    pub fn validate(&self) -> Result<(), PredictError> {
        if self.format != ENSEMBLE_FORMAT {
            return Err(PredictError::Format(self.format.clone()));
        }
        if self.models.len() != ENSEMBLE_SIZE {
            return Err(PredictError::ModelCount(self.models.len()));
        }
        for (index, m) in self.models.iter().enumerate() {
            if m.input_dim() != self.input_dim {
                return Err(PredictError::Inconsistent { index, expected: self.input_dim, got: m.input_dim() });
            }
        }
        Ok(())
    }

    /// Assembles an ensemble from already-built models (used for stubs).
    pub fn from_models(models: Vec<ConstituentModel>) -> Result<Ensemble, PredictError> {
        let input_dim = models.first().map(|m| m.input_dim()).unwrap_or(0);
        let e = Ensemble {
            format: ENSEMBLE_FORMAT.to_string(),
            input_dim,
            labels: FinalLabel::ALL.to_vec(),
            tie_break: TIE_BREAK.to_string(),
            models,
            metadata: EnsembleMetadata {
                trained_at: String::new(),
                master_seed: 0,
                data_fingerprint: String::new(),
                training_ids: Vec::new(),
            },
        };
        e.validate()?;
        Ok(e)
    }

    pub fn predict(&self, point_id: &str, v: &[f64]) -> Result<Prediction, PredictError> {
        if v.len() != self.input_dim {
            return Err(PredictError::Dimension { expected: self.input_dim, got: v.len() });
        }
        let x = ArrayView1::from(v);
        Ok(tally(point_id, self.models.iter().map(|m| m.vote(x))))
    }

    /// Predicts every row of `x`; rows are split across threads in chunks.
    pub fn predict_batch(
        &self,
        point_ids: &[String],
        x: ArrayView2<f64>,
        exec: Execution,
    ) -> Result<Vec<Prediction>, PredictError> {
        if x.ncols() != self.input_dim {
            return Err(PredictError::Dimension { expected: self.input_dim, got: x.ncols() });
        }
        if point_ids.len() != x.nrows() {
            return Err(PredictError::Length(point_ids.len(), x.nrows()));
        }
        const CHUNK: usize = 256;
        let chunks = x.nrows().div_ceil(CHUNK);
        let parts = exec.map_range(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(x.nrows());
            let block = x.slice(ndarray::s![lo..hi, ..]);
            let votes: Vec<Vec<FinalLabel>> = self.models.iter().map(|m| m.votes(block)).collect();
            (lo..hi)
                .map(|r| tally(&point_ids[r], votes.iter().map(|v| v[r - lo])))
                .collect::<Vec<_>>()
        });
        Ok(parts.into_iter().flatten().collect())
    }

    /// Digest of the model weights, independent of training metadata.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.models {
            for w in m.params.flatten() {
                h.update(w.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_examples() {
        use FinalLabel::*;
        let p = tally("a", [Service; 10]);
        assert_eq!((p.label, p.confidence), (Service, 1.0));

        let p = tally("b", [[Manufacturer; 5], [Service; 5]].concat());
        assert_eq!(p.label, Manufacturer);
        assert_eq!(p.confidence, 0.5);

        let votes = [vec![Information; 4], vec![Retail; 3], vec![Service; 3]].concat();
        let p = tally("c", votes);
        assert_eq!((p.label, p.confidence), (Information, 0.4));
        assert_eq!(p.votes.values().sum::<u32>(), 10);
    }

    #[test]
    fn tie_between_lower_ranks_goes_to_higher() {
        use FinalLabel::*;
        let votes = [vec![Information; 4], vec![Retail; 4], vec![Manufacturer; 2]].concat();
        assert_eq!(tally("x", votes).label, Retail);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }
}
