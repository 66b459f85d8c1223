use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use techradar_core::classifier::synthetic::{blobs, BlobSpec};
use techradar_core::classifier::*;
use techradar_core::{Execution, FinalLabel, InitialLabel};

/// Loop-based forward pass and mean cross-entropy, written without ndarray
/// linear algebra so it can serve as an oracle for the backprop code.
fn naive_loss(p: &Params, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let dense = |d: &Dense, input: &[f64]| -> Vec<f64> {
        (0..d.weights.ncols())
            .map(|j| d.bias[j] + (0..input.len()).map(|i| input[i] * d.weights[[i, j]]).sum::<f64>())
            .collect()
    };
    let mut total = 0.0;
    for (row, &c) in x.iter().zip(y) {
        let top = match &p.hidden {
            Some(h) => dense(h, row).into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect(),
            None => row.clone(),
        };
        let z = dense(&p.output, &top);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[c];
    }
    total / y.len() as f64
}

fn to_array(x: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((x.len(), x[0].len()), |(i, j)| x[i][j])
}

fn hidden_near_kink(p: &Params, x: &[Vec<f64>]) -> bool {
    let Some(h) = &p.hidden else { return false };
    let z = to_array(x).dot(&h.weights) + &h.bias;
    z.iter().any(|v| v.abs() < 1e-3)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut probes = 0;
    while probes < 120 {
        let dim = rng.random_range(2..7);
        let hidden = [0usize, 3, 5][probes % 3];
        let batch = rng.random_range(1..6);
        let mut params = Params::init(dim, hidden, &mut rng);
        // Move biases off zero so the probe is not a special point.
        let flat: Vec<f64> = params.flatten().iter().map(|w| w + rng.random_range(-0.3..0.3)).collect();
        params = params.with_flat(&flat);
        let x: Vec<Vec<f64>> = (0..batch).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..N_CLASSES)).collect();
        if hidden_near_kink(&params, &x) {
            continue;
        }
        let xa = to_array(&x);
        let (loss, grad) = params.loss_and_grad(xa.view(), &y);
        assert!((loss - naive_loss(&params, &x, &y)).abs() < 1e-10);
        let analytic = grad.flatten();
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let numeric =
                (naive_loss(&params.with_flat(&plus), &x, &y) - naive_loss(&params.with_flat(&minus), &x, &y)) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic[k] - numeric).abs() / scale;
            assert!(rel < 1e-4, "probe {probes} param {k}: analytic {} numeric {numeric}", analytic[k]);
        }
        probes += 1;
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..20)) {
        let z = Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i][j]);
        let p = softmax_rows(z);
        for r in p.rows() {
            prop_assert!((r.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(r.iter().all(|v| *v > 0.0));
        }
    }
}

fn small_blobs(per_class: usize, seed: u64) -> Vec<LabeledPoint> {
    blobs(&BlobSpec { dim: 16, informative: 16, separation: 3.0, per_class, seed }, &format!("b{seed}"))
}

fn accuracy(m: &ConstituentModel, data: &[LabeledPoint]) -> f64 {
    let x = to_array(&data.iter().map(|p| p.vector.clone()).collect::<Vec<_>>());
    let votes = m.votes(x.view());
    votes.iter().zip(data).filter(|(v, p)| **v == p.final_label).count() as f64 / data.len() as f64
}

fn logits(m: &ConstituentModel, data: &[LabeledPoint]) -> Array2<f64> {
    let x = to_array(&data.iter().map(|p| p.vector.clone()).collect::<Vec<_>>());
    m.params.logits(ArrayView2::from(&x))
}

#[test]
fn separated_blobs_are_learned() {
    let data = small_blobs(200, 1);
    let arch = Architecture { hidden: 0, learning_rate: 1e-2 };
    let m = train_single(&data, arch, &TrainConfig { epochs: 40, batch_size: 32 }, 5).unwrap();
    assert!(accuracy(&m, &data) >= 0.99, "{}", accuracy(&m, &data));
    assert_eq!(m.input_dim(), 16);
    assert!(m.params.is_finite());
}

#[test]
fn loss_history_never_increases() {
    let data = small_blobs(50, 2);
    // A deliberately large step size forces rejected epochs.
    for arch in [Architecture { hidden: 8, learning_rate: 5.0 }, Architecture { hidden: 0, learning_rate: 1e-2 }] {
        let m = train_single(&data, arch, &TrainConfig { epochs: 30, batch_size: 8 }, 3).unwrap();
        assert_eq!(m.loss_history.len(), 31);
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + LOSS_TOLERANCE, "{w:?}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let data = small_blobs(40, 3);
    let arch = Architecture { hidden: 6, learning_rate: 1e-2 };
    let cfg = TrainConfig { epochs: 10, batch_size: 16 };
    let a = train_single(&data, arch, &cfg, 9).unwrap();
    let b = train_single(&data, arch, &cfg, 9).unwrap();
    assert_eq!(a.params.flatten(), b.params.flatten());
    let c = train_single(&data, arch, &cfg, 10).unwrap();
    assert_ne!(a.params.flatten(), c.params.flatten());
}

#[test]
fn input_order_does_not_matter() {
    let data = small_blobs(30, 4);
    let arch = Architecture { hidden: 4, learning_rate: 1e-2 };
    let cfg = TrainConfig { epochs: 8, batch_size: 7 };
    let reference = train_single(&data, arch, &cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut rng);
        let m = train_single(&shuffled, arch, &cfg, 1).unwrap();
        let same = m.params.flatten().iter().zip(reference.params.flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }
}

#[test]
fn duplicated_data_gives_same_decision_function() {
    // Full-batch descent: the mean loss over a doubled set equals the original.
    let data = small_blobs(25, 5);
    let mut doubled = data.clone();
    doubled.extend(data.iter().cloned());
    let arch = Architecture { hidden: 0, learning_rate: 5e-2 };
    let cfg = TrainConfig { epochs: 20, batch_size: 1_000 };
    let a = train_single(&data, arch, &cfg, 2).unwrap();
    let b = train_single(&doubled, arch, &cfg, 2).unwrap();
    let (la, lb) = (logits(&a, &data), logits(&b, &data));
    let diff = (&la - &lb).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-6, "max logit difference {diff}");
}

#[test]
fn single_class_and_bad_input_are_rejected() {
    let one: Vec<LabeledPoint> = small_blobs(10, 6).into_iter().filter(|p| p.final_label == FinalLabel::Retail).collect();
    let arch = Architecture { hidden: 0, learning_rate: 1e-2 };
    let cfg = TrainConfig::default();
    assert_eq!(train_single(&one, arch, &cfg, 0).unwrap_err(), TrainError::SingleClass);
    assert_eq!(train_single(&[], arch, &cfg, 0).unwrap_err(), TrainError::Empty);

    let mut data = small_blobs(5, 7);
    data[3].vector.pop();
    assert!(matches!(train_single(&data, arch, &cfg, 0), Err(TrainError::Dimension { .. })));
    let mut data = small_blobs(5, 7);
    data[2].vector[0] = f64::NAN;
    assert!(matches!(train_single(&data, arch, &cfg, 0), Err(TrainError::NonFiniteInput(_))));
}

#[test]
fn others_never_becomes_a_training_point() {
    assert!(LabeledPoint::new("p", vec![0.0], InitialLabel::Others, "a", 1).is_none());
    let p = LabeledPoint::new("p", vec![0.0], InitialLabel::ConsultingEducation, "a", 1).unwrap();
    assert_eq!(p.final_label, FinalLabel::Service);
}

fn fast_config(seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        master_seed: seed,
        train: TrainConfig { epochs: 15, batch_size: 32 },
        search: SearchSpace { hidden: vec![0, 8], learning_rates: vec![1e-2, 1e-3], trials: 2, epochs: 3 },
    }
}

#[test]
fn ensemble_is_reproducible_and_bagged() {
    let data = small_blobs(40, 8);
    let a = train_ensemble(&data, &fast_config(4), Execution::Parallel).unwrap();
    let b = train_ensemble(&data, &fast_config(4), Execution::Sequential).unwrap();
    assert_eq!(a.models, b.models);
    assert_eq!(a.models.len(), ENSEMBLE_SIZE);
    let fingerprints: std::collections::BTreeSet<&str> = a.models.iter().map(|m| m.fingerprint.as_str()).collect();
    assert!(fingerprints.len() >= 9);
    let c = train_ensemble(&data, &fast_config(5), Execution::Parallel).unwrap();
    assert_ne!(a.weights_digest(), c.weights_digest());
}

#[test]
fn ensemble_is_no_worse_than_its_members() {
    let params = |per_class, seed| BlobSpec { dim: 64, informative: 16, separation: 1.0, per_class, seed };
    let train = blobs(&params(100, 20), "tr");
    let test = blobs(&params(100, 21), "te");
    let e = train_ensemble(&train, &fast_config(1), Execution::Parallel).unwrap();
    let report = evaluate(&e, &test, Execution::Parallel).unwrap();
    let mean = e.models.iter().map(|m| accuracy(m, &test)).sum::<f64>() / ENSEMBLE_SIZE as f64;
    assert!(report.accuracy >= mean - 0.02, "ensemble {} vs mean {mean}", report.accuracy);
}

#[test]
fn json_round_trip_preserves_predictions() {
    let data = small_blobs(20, 9);
    let e = train_ensemble(&data, &fast_config(2), Execution::Parallel).unwrap();
    let text = serde_json::to_string(&e).unwrap();
    let back: Ensemble = serde_json::from_str(&text).unwrap();
    back.validate().unwrap();
    assert_eq!(back.weights_digest(), e.weights_digest());
    for p in &data {
        assert_eq!(e.predict(&p.point_id, &p.vector).unwrap(), back.predict(&p.point_id, &p.vector).unwrap());
    }
}

fn stub(labels: &[FinalLabel]) -> Ensemble {
    Ensemble::from_models(labels.iter().map(|l| ConstituentModel::constant(3, *l)).collect()).unwrap()
}

#[test]
fn stub_votes_follow_rank_tie_break() {
    use FinalLabel::*;
    let e = stub(&[Service, Manufacturer, Service, Manufacturer, Service, Manufacturer, Service, Manufacturer, Service, Manufacturer]);
    let p = e.predict("x", &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!((p.label, p.confidence), (Manufacturer, 0.5));
    assert_eq!(p.votes[&Service], 5);

    let e = stub(&[Service; 10]);
    let p = e.predict("x", &[0.0; 3]).unwrap();
    assert_eq!((p.label, p.confidence), (Service, 1.0));

    assert_eq!(e.predict("x", &[0.0; 4]).unwrap_err(), PredictError::Dimension { expected: 3, got: 4 });
    assert!(matches!(
        Ensemble::from_models(vec![ConstituentModel::constant(3, Service); 9]),
        Err(PredictError::ModelCount(9))
    ));
}

proptest! {
    #[test]
    fn model_order_and_vote_accounting(labels in prop::collection::vec(0usize..4, 10), seed in any::<u64>()) {
        let labels: Vec<FinalLabel> = labels.iter().map(|i| FinalLabel::from_index(*i).unwrap()).collect();
        let e = stub(&labels);
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = stub(&shuffled);
        let v = [1.0, -2.0, 0.5];
        let p = e.predict("x", &v).unwrap();
        prop_assert_eq!(&p, &f.predict("x", &v).unwrap());
        prop_assert_eq!(p.votes.values().sum::<u32>(), 10);
        let max = *p.votes.values().max().unwrap();
        prop_assert_eq!(p.votes[&p.label], max);
        prop_assert_eq!(p.confidence, f64::from(max) / 10.0);
        prop_assert!(p.confidence >= 0.3);
        // Labels with the winning count never outrank the winner.
        for (l, c) in &p.votes {
            if *c == max { prop_assert!(p.label <= *l); }
        }
    }
}

#[test]
fn evaluation_metrics() {
    use FinalLabel::*;
    let data = small_blobs(5, 12);
    // Constant predictor on a balanced test set.
    let e = stub(&[Retail; 10]);
    let constant = Ensemble::from_models(vec![ConstituentModel::constant(16, Retail); 10]).unwrap();
    let r = evaluate(&constant, &data, Execution::Sequential).unwrap();
    assert_eq!(r.accuracy, 0.25);
    assert_eq!(r.per_label[&Retail].recall, Some(1.0));
    assert_eq!(r.per_label[&Retail].precision, Some(0.25));
    assert_eq!(r.per_label[&Service].precision, None);
    assert_eq!(r.confidence_histogram[10], 20);

    // Perfect predictor via explicit pairs.
    let pairs: Vec<(FinalLabel, Prediction)> = data
        .iter()
        .map(|p| {
            let pred = e.predict(&p.point_id, &[0.0; 3]).unwrap();
            (p.final_label, Prediction { label: p.final_label, ..pred })
        })
        .collect();
    let r = EvalReport::from_pairs(&pairs);
    assert_eq!(r.accuracy, 1.0);
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(r.confusion[i][j] > 0, i == j);
        }
    }
}

#[test]
fn evaluation_rejects_training_overlap() {
    let data = small_blobs(20, 13);
    let e = train_ensemble(&data, &fast_config(3), Execution::Parallel).unwrap();
    let err = evaluate(&e, &data[..5], Execution::Parallel).unwrap_err();
    assert!(matches!(err, EvalError::Overlap { count: 5, .. }));
}
