//! Gaussian-blob generator for benchmarks and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LabeledPoint;
use crate::labels::{FinalLabel, InitialLabel};

/// Four classes in `dim` dimensions. Class `c` has mean `separation` on
/// informative dimensions `c*k .. (c+1)*k` (with `k = informative / 4`) and
/// zero elsewhere; all coordinates carry unit Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub dim: usize,
    pub informative: usize,
    pub separation: f64,
    pub per_class: usize,
    pub seed: u64,
}

fn initial_for(label: FinalLabel) -> InitialLabel {
    match label {
        FinalLabel::Manufacturer => InitialLabel::Manufacturer,
        FinalLabel::Service => InitialLabel::Service,
        FinalLabel::Retail => InitialLabel::Retail,
        FinalLabel::Information => InitialLabel::Information,
    }
}

/// Points are emitted class-interleaved with ids `"{prefix}-{n:06}"`.
pub fn blobs(p: &BlobSpec, id_prefix: &str) -> Vec<LabeledPoint> {
    assert!(p.informative >= 4 && p.informative <= p.dim);
    let k = p.informative / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = Vec::with_capacity(p.per_class * 4);
    for n in 0..p.per_class * 4 {
        let label = FinalLabel::ALL[n % 4];
        let c = label.index();
        let vector: Vec<f64> = (0..p.dim)
            .map(|d| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let mean = if d / k == c && d < 4 * k { p.separation } else { 0.0 };
                mean + noise
            })
            .collect();
        out.push(
            LabeledPoint::new(format!("{id_prefix}-{n:06}"), vector, initial_for(label), "synthetic", 0)
                .expect("final-label initial"),
        );
    }
    out
}
