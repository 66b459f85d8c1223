//! Constituent learner: softmax regression with an optional ReLU hidden layer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::FinalLabel;

pub const N_CLASSES: usize = 4;

/// Hidden width (0 = plain softmax regression) and SGD step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub learning_rate: f64,
}

/// Row-major matrix with explicit shape, the on-disk form of a weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Array2<f64>> for Matrix {
    fn from(a: &Array2<f64>) -> Self {
        Matrix { rows: a.nrows(), cols: a.ncols(), data: a.iter().copied().collect() }
    }
}

impl TryFrom<Matrix> for Array2<f64> {
    type Error = String;
    fn try_from(m: Matrix) -> Result<Self, Self::Error> {
        Array2::from_shape_vec((m.rows, m.cols), m.data).map_err(|e| format!("bad matrix shape: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Matrix,
    bias: Vec<f64>,
}

impl From<Dense> for LayerRepr {
    fn from(d: Dense) -> Self {
        LayerRepr { weights: Matrix::from(&d.weights), bias: d.bias.to_vec() }
    }
}

impl TryFrom<LayerRepr> for Dense {
    type Error = String;
    fn try_from(r: LayerRepr) -> Result<Self, Self::Error> {
        let weights: Array2<f64> = r.weights.try_into()?;
        if weights.ncols() != r.bias.len() {
            return Err(format!("bias length {} != {} columns", r.bias.len(), weights.ncols()));
        }
        Ok(Dense { weights, bias: Array1::from(r.bias) })
    }
}

impl Dense {
    fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Dense {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a));
        Dense { weights, bias: Array1::zeros(fan_out) }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Trainable parameters. `hidden` is `None` for softmax regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl Params {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Params {
        if hidden == 0 {
            Params { hidden: None, output: Dense::glorot(rng, input_dim, N_CLASSES) }
        } else {
            Params {
                hidden: Some(Dense::glorot(rng, input_dim, hidden)),
                output: Dense::glorot(rng, hidden, N_CLASSES),
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).weights.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.output.is_finite() && self.hidden.as_ref().is_none_or(Dense::is_finite)
    }

    /// Raw class scores for each row of `x`.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match &self.hidden {
            None => self.output.forward(x),
            Some(h) => {
                let a = h.forward(x).mapv_into(relu);
                self.output.forward(a.view())
            }
        }
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let p = softmax_rows(self.logits(x));
        let n = y.len().max(1) as f64;
        y.iter().enumerate().map(|(i, &c)| -p[[i, c]].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n
    }

    /// Mean cross-entropy and its gradient by backpropagation.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: &[usize]) -> (f64, Params) {
        let n = y.len().max(1) as f64;
        let (z1, a1) = match &self.hidden {
            Some(h) => {
                let z = h.forward(x);
                let a = z.mapv(relu);
                (Some(z), Some(a))
            }
            None => (None, None),
        };
        let top_in = a1.as_ref().map_or(x, |a| a.view());
        let mut delta = softmax_rows(self.output.forward(top_in));
        let mut loss = 0.0;
        for (i, &c) in y.iter().enumerate() {
            loss -= delta[[i, c]].max(f64::MIN_POSITIVE).ln();
            delta[[i, c]] -= 1.0;
        }
        delta /= n;
        let output = Dense { weights: top_in.t().dot(&delta), bias: delta.sum_axis(Axis(0)) };
        let hidden = match (&self.hidden, z1) {
            (Some(_), Some(z)) => {
                let mut back = delta.dot(&self.output.weights.t());
                back.zip_mut_with(&z, |g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0
                    }
                });
                Some(Dense { weights: x.t().dot(&back), bias: back.sum_axis(Axis(0)) })
            }
            _ => None,
        };
        (loss / n, Params { hidden, output })
    }

    /// `self -= step * grad`
    pub fn descend(&mut self, grad: &Params, step: f64) {
        fn apply(p: &mut Dense, g: &Dense, step: f64) {
            p.weights.scaled_add(-step, &g.weights);
            p.bias.scaled_add(-step, &g.bias);
        }
        apply(&mut self.output, &grad.output, step);
        if let (Some(p), Some(g)) = (self.hidden.as_mut(), grad.hidden.as_ref()) {
            apply(p, g, step);
        }
    }

    /// All parameters in a fixed order: hidden W, hidden b, output W, output b.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some(h) = &self.hidden {
            v.extend(h.weights.iter());
            v.extend(h.bias.iter());
        }
        v.extend(self.output.weights.iter());
        v.extend(self.output.bias.iter());
        v
    }

    /// Inverse of [`Params::flatten`] for a parameter vector of the same shape.
    pub fn with_flat(&self, flat: &[f64]) -> Params {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        if let Some(h) = out.hidden.as_mut() {
            h.weights.iter_mut().for_each(|w| *w = it.next().expect("flat length"));
            h.bias.iter_mut().for_each(|w| *w = it.next().expect("flat length"));
        }
        out.output.weights.iter_mut().for_each(|w| *w = it.next().expect("flat length"));
        out.output.bias.iter_mut().for_each(|w| *w = it.next().expect("flat length"));
        out
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

/// One trained member of the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstituentModel {
    pub architecture: Architecture,
    pub params: Params,
    pub seed: u64,
    /// Digest of the (sorted) training multiset of point ids.
    pub fingerprint: String,
    /// Full-data training loss after each accepted epoch.
    pub loss_history: Vec<f64>,
}

impl ConstituentModel {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn vote(&self, x: ArrayView1<f64>) -> FinalLabel {
        let row = x.insert_axis(Axis(0));
        self.votes(row)[0]
    }

    /// Argmax class per row. Equal scores resolve to the higher-ranked label.
    pub fn votes(&self, x: ArrayView2<f64>) -> Vec<FinalLabel> {
        self.params
            .logits(x)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for c in 1..N_CLASSES {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                FinalLabel::from_index(best).expect("class index < 4")
            })
            .collect()
    }

    /// A constant voter: zero weights, bias favouring `label`. Useful for tests.
    pub fn constant(input_dim: usize, label: FinalLabel) -> ConstituentModel {
        let mut bias = Array1::zeros(N_CLASSES);
        bias[label.index()] = 1.0;
        ConstituentModel {
            architecture: Architecture { hidden: 0, learning_rate: 0.0 },
            params: Params { hidden: None, output: Dense { weights: Array2::zeros((input_dim, N_CLASSES)), bias } },
            seed: 0,
            fingerprint: format!("constant-{label}"),
            loss_history: Vec::new(),
        }
    }
}
