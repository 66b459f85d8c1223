//! Sequential vs data-parallel execution of the batch-heavy stages.

use chrono::{DateTime, NaiveDate};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use techradar_core::classifier::synthetic::{blobs, BlobSpec};
use techradar_core::classifier::{train_ensemble, EnsembleConfig, SearchSpace, TrainConfig};
use techradar_core::embedder::{EmbedderConfig, Encoder};
use techradar_core::extractor::{extract_all, KeywordMatcher, Lexicon};
use techradar_core::fetcher::WebPage;
use techradar_core::geo::{heat_grid, BBox};
use techradar_core::registry::{CompanyRecord, FirmClassifier};
use techradar_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn pages(n: usize) -> Vec<WebPage> {
    (0..n)
        .map(|i| WebPage {
            company_id: format!("c{i}"),
            page_url: format!("https://firm{i}.de/leistungen").parse().unwrap(),
            fetched_at: DateTime::UNIX_EPOCH,
            status: 200,
            body: format!(
                "<nav><li>Start</li><li>3D-Druck</li></nav><main>{}</main><footer>Impressum</footer>",
                "<p>Wir bieten Lasersintern, SLS und additive Fertigung fuer Prototypen und Kleinserien an.</p>".repeat(20)
            ),
            depth: 1,
        })
        .collect()
}

fn bench_extraction(c: &mut Criterion) {
    let pages = pages(200);
    let matcher = KeywordMatcher::new(&Lexicon::builtin());
    let mut g = c.benchmark_group("extract_all");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(extract_all(&pages, &matcher, exec)))
        });
    }
    g.finish();
}

fn bench_embedding(c: &mut Criterion) {
    let pages = pages(20);
    let points = extract_all(&pages, &KeywordMatcher::new(&Lexicon::builtin()), Execution::Sequential);
    let company = CompanyRecord {
        company_id: "c".into(),
        url: "https://firm.de/".parse().unwrap(),
        employees: Some(12),
        incorporated: NaiveDate::from_ymd_opt(2010, 1, 1),
        nace: Some("C25.6".into()),
        region_id: None,
        lat: None,
        lon: None,
        inno_score: None,
    };
    let firms = FirmClassifier::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
    let encoder = Encoder::new(EmbedderConfig::default(), firms).unwrap();
    let items: Vec<_> = points.iter().map(|p| (p, &company)).collect();
    let mut g = c.benchmark_group("encode_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(encoder.encode_batch(&items, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_heat_grid(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<(f64, f64)> = (0..5_000).map(|_| (rng.random_range(48.0..48.3), rng.random_range(11.3..11.8))).collect();
    let bbox = BBox { min_lat: 48.0, min_lon: 11.3, max_lat: 48.3, max_lon: 11.8 };
    let mut g = c.benchmark_group("heat_grid");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(heat_grid(&pts, bbox, 0.005, 0.01, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_ensemble(c: &mut Criterion) {
    let data = blobs(&BlobSpec { dim: 256, informative: 16, separation: 2.0, per_class: 100, seed: 3 }, "b");
    let cfg = EnsembleConfig {
        master_seed: 1,
        train: TrainConfig { epochs: 5, batch_size: 32 },
        search: SearchSpace { trials: 1, ..Default::default() },
    };
    let mut g = c.benchmark_group("train_ensemble");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(train_ensemble(&data, &cfg, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_extraction, bench_embedding, bench_heat_grid, bench_ensemble);
criterion_main!(benches);
