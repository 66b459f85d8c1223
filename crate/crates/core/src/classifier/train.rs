//! Mini-batch SGD for a single constituent model.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Architecture, ConstituentModel, Params};
use super::{LabeledPoint, TrainError};

/// An epoch whose full-data loss rises by more than this is rolled back.
pub const LOSS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, batch_size: 32 }
    }
}

/// Labeled vectors in canonical order (point id, then label, then vector bits),
/// so that training never depends on the order data arrived in.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub ids: Vec<String>,
}

impl TrainingSet {
    pub fn from_points(points: &[LabeledPoint]) -> Result<TrainingSet, TrainError> {
        let Some(first) = points.first() else {
            return Err(TrainError::Empty);
        };
        let dim = first.vector.len();
        if let Some(p) = points.iter().find(|p| p.vector.len() != dim) {
            return Err(TrainError::Dimension { expected: dim, got: p.vector.len(), point_id: p.point_id.clone() });
        }
        if let Some(p) = points.iter().find(|p| p.vector.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFiniteInput(p.point_id.clone()));
        }
        let mut order: Vec<&LabeledPoint> = points.iter().collect();
        order.sort_by(|a, b| {
            a.point_id
                .cmp(&b.point_id)
                .then(a.final_label.cmp(&b.final_label))
                .then_with(|| {
                    let ka = a.vector.iter().map(|v| v.to_bits());
                    let kb = b.vector.iter().map(|v| v.to_bits());
                    ka.cmp(kb)
                })
        });
        let mut x = Array2::zeros((order.len(), dim));
        for (mut row, p) in x.rows_mut().into_iter().zip(&order) {
            row.assign(&ndarray::ArrayView1::from(&p.vector));
        }
        Ok(TrainingSet {
            x,
            y: order.iter().map(|p| p.final_label.index()).collect(),
            ids: order.iter().map(|p| p.point_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn distinct_labels(&self, rows: &[usize]) -> usize {
        let mut seen = [false; super::model::N_CLASSES];
        rows.iter().for_each(|&r| seen[self.y[r]] = true);
        seen.iter().filter(|s| **s).count()
    }

    /// Digest of the multiset of point ids at `rows`.
    pub fn fingerprint(&self, rows: &[usize]) -> String {
        let mut ids: Vec<&str> = rows.iter().map(|&r| self.ids[r].as_str()).collect();
        ids.sort_unstable();
        let mut h = Sha256::new();
        for id in ids {
            h.update(id.as_bytes());
            h.update([0x1e]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Trains on `rows` of `set` (repeats allowed, as in a bootstrap resample).
///
/// Rows are sorted first, then consumed in a seeded shuffle each epoch. After
/// each epoch the full-data loss is checked; an epoch that increases it by
/// more than [`LOSS_TOLERANCE`] is rolled back and the step size halved, so
/// the recorded loss history never increases.
pub fn fit(
    set: &TrainingSet,
    rows: &[usize],
    arch: Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ConstituentModel, TrainError> {
    if set.distinct_labels(rows) < 2 {
        return Err(TrainError::SingleClass);
    }
    let mut rows = rows.to_vec();
    rows.sort_unstable();
    let x = set.x.select(Axis(0), &rows);
    let y: Vec<usize> = rows.iter().map(|&r| set.y[r]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::init(set.dim(), arch.hidden, &mut rng);
    let mut step = arch.learning_rate;
    let mut prev = params.loss(x.view(), &y);
    if !prev.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: 0, learning_rate: step, last_loss: prev });
    }
    let mut history = vec![prev];
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut yb = Vec::with_capacity(batch);
    for epoch in 1..=cfg.epochs {
        let snapshot = params.clone();
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            yb.clear();
            yb.extend(chunk.iter().map(|&i| y[i]));
            let (_, grad) = params.loss_and_grad(xb.view(), &yb);
            params.descend(&grad, step);
        }
        let loss = params.loss(x.view(), &y);
        if !loss.is_finite() || !params.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, learning_rate: step, last_loss: prev });
        }
        if loss > prev + LOSS_TOLERANCE {
            params = snapshot;
            step *= 0.5;
        } else {
            prev = loss;
        }
        history.push(prev);
    }
    Ok(ConstituentModel {
        architecture: arch,
        params,
        seed,
        fingerprint: set.fingerprint(&rows),
        loss_history: history,
    })
}

/// Trains one model on all of `data`.
pub fn train_single(
    data: &[LabeledPoint],
    arch: Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ConstituentModel, TrainError> {
    let set = TrainingSet::from_points(data)?;
    let rows: Vec<usize> = (0..set.len()).collect();
    fit(&set, &rows, arch, cfg, seed)
}
