//! The pipeline stages and the bookkeeping shared by all of them.
//!
//! A stage declares its inputs (each with the stage that produces it),
//! runs, and reports the files it wrote. The runner digests both sides and
//! upserts the stage's record in the manifest. With `resume` set, a stage
//! whose parameters, input digests and output digests all match its last
//! record is skipped.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::Utc;
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use techradar_core::aggregator::{
    classify_companies, cross_tab, innovation_validation, type_shares, write_cross_tab, write_innovation,
    write_share_table, Attribute, CompanyLabel, PointPrediction,
};
use techradar_core::classifier::{evaluate, train_ensemble, Ensemble, LabeledPoint};
use techradar_core::embedder::{EmbeddingCache, Encoder};
use techradar_core::extractor::{extract_all, filter_data_points, DataPoint, KeywordMatcher, Lexicon};
use techradar_core::fetcher::{crawl_all, ArchiveTransport, CrawlPolicy, LiveTransport, Transport, WebPage};
use techradar_core::geo::{
    heat_grid, hotspots_geojson, load_region_geometries, regional_stats, regions_geojson, top_k_hotspots,
    type_layer_geojson, write_heatmap_csv, BBox, RegionGeometries, UNASSIGNED_REGION,
};
use techradar_core::registry::{load_registry, CompanyRecord, CsvFormat};
use techradar_core::{ndjson, FinalLabel};

use crate::config::Config;
use crate::labeling::{LabelStore, EVENTS_FILE};
use crate::manifest::{digest_path, digest_value, display_path, write_atomic, ArtifactDigest, RunManifest, StageRecord, MANIFEST_FILE};
use crate::PipelineError;

/// Artifact file names inside the data directory.
pub mod artifacts {
    pub const COMPANIES: &str = "companies.ndjson";
    pub const INGEST_ERRORS: &str = "ingest_errors.ndjson";
    pub const PAGES: &str = "pages.ndjson";
    pub const CRAWL_LOG: &str = "crawl_log.ndjson";
    pub const POINTS: &str = "points.ndjson";
    pub const DROPPED: &str = "dropped_points.ndjson";
    pub const FILTER_REPORT: &str = "filter_report.json";
    pub const LABELING_DIR: &str = "labeling";
    pub const LABELS: &str = "labels.ndjson";
    pub const VECTORS: &str = "vectors.ndjson";
    pub const VECTORS_META: &str = "vectors.meta.json";
    pub const MODEL: &str = "model.json";
    pub const EVAL_REPORT: &str = "eval_report.json";
    pub const PREDICTIONS: &str = "predictions.ndjson";
    pub const COMPANY_LABELS: &str = "company_labels.ndjson";
    pub const TABLES_DIR: &str = "tables";
    pub const MAPS_DIR: &str = "maps";
    pub const REPORT: &str = "report.md";
}

use artifacts as a;

const USER_INPUT: &str = "user input";

/// Stages executed by [`Pipeline::run_all`], in order.
pub const RUN_ALL_STAGES: [&str; 7] = ["ingest", "fetch", "extract", "train", "predict", "aggregate", "geo"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub status: StageStatus,
    pub summary: Value,
}

/// Where `fetch` gets its pages from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchSource {
    Archive(PathBuf),
    Live,
}

/// Optional path overrides for `geo`.
#[derive(Debug, Clone, Default)]
pub struct GeoArgs {
    pub labels: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Inputs for [`Pipeline::run_all`].
#[derive(Debug, Clone)]
pub struct RunAllArgs {
    pub registry: PathBuf,
    pub source: FetchSource,
    pub labels: Option<PathBuf>,
    pub regions: Option<PathBuf>,
}

struct Plan {
    stage: &'static str,
    inputs: Vec<(PathBuf, &'static str)>,
    params: Value,
    skippable: bool,
}

struct Done {
    summary: Value,
    outputs: Vec<PathBuf>,
}

fn fail<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

fn read_ndjson<T: DeserializeOwned>(stage: &'static str, path: &Path) -> Result<Vec<T>, PipelineError> {
    ndjson::read_file(path).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })
}

fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    ndjson::write(&mut buf, items).map_err(|e| PipelineError::Stage { stage: "write", message: e.to_string() })?;
    write_atomic(path, &buf)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut buf = serde_json::to_vec_pretty(v).expect("serializable");
    buf.push(b'\n');
    write_atomic(path, &buf)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

/// Deterministic holdout membership from `(seed, point_id)`.
fn in_holdout(seed: u64, point_id: &str, fraction: f64) -> bool {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(point_id.as_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (x as f64 / 18_446_744_073_709_551_616.0) < fraction
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VectorsMeta {
    provenance: String,
    dim: usize,
    count: usize,
}

pub struct Pipeline {
    pub data_dir: PathBuf,
    pub config: Config,
    pub resume: bool,
}

impl Pipeline {
    pub fn new(data_dir: impl Into<PathBuf>, config: Config) -> Pipeline {
        Pipeline { data_dir: data_dir.into(), config, resume: false }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.data_dir.join(name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path(MANIFEST_FILE)
    }

    pub fn manifest(&self) -> Result<Option<RunManifest>, PipelineError> {
        RunManifest::load(&self.manifest_path())
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("ensemble".to_string(), self.config.ensemble.master_seed),
            ("embedder_hash".to_string(), self.config.embedder.hash_seed),
            ("labeling".to_string(), self.config.labeling.seed),
        ])
    }

    fn digests(&self, paths: &[PathBuf]) -> Result<Vec<ArtifactDigest>, PipelineError> {
        paths
            .iter()
            .map(|p| Ok(ArtifactDigest { path: display_path(&self.data_dir, p), sha256: digest_path(p)? }))
            .collect()
    }

    fn up_to_date(&self, prev: &StageRecord, params_digest: &str, inputs: &[ArtifactDigest]) -> bool {
        prev.params_digest == params_digest
            && prev.inputs == inputs
            && prev.outputs.iter().all(|o| {
                let p = self.data_dir.join(&o.path);
                digest_path(&p).is_ok_and(|d| d == o.sha256)
            })
    }

    fn run(&self, plan: Plan, body: impl FnOnce() -> Result<Done, PipelineError>) -> Result<StageOutcome, PipelineError> {
        for (p, producer) in &plan.inputs {
            if !p.exists() {
                return Err(PipelineError::MissingInput { stage: plan.stage, file: file_name(p), producer });
            }
        }
        std::fs::create_dir_all(&self.data_dir).map_err(|e| PipelineError::io(&self.data_dir, e))?;
        let input_paths: Vec<PathBuf> = plan.inputs.iter().map(|(p, _)| p.clone()).collect();
        let inputs = self.digests(&input_paths)?;
        let params_digest = digest_value(&plan.params);
        let config_json = serde_json::to_value(&self.config).expect("config serializes");
        let mut manifest = self.manifest()?.unwrap_or_else(|| RunManifest::new(config_json.clone(), self.seeds()));
        if self.resume && plan.skippable {
            if let Some(prev) = manifest.stage(plan.stage) {
                if self.up_to_date(prev, &params_digest, &inputs) {
                    tracing::info!(stage = plan.stage, "inputs unchanged, skipped");
                    return Ok(StageOutcome { stage: plan.stage, status: StageStatus::Skipped, summary: prev.summary.clone() });
                }
            }
        }
        let started_at = Utc::now();
        tracing::info!(stage = plan.stage, "running");
        let done = body()?;
        let outputs = self.digests(&done.outputs)?;
        manifest.set_config(config_json, self.seeds());
        manifest.upsert(StageRecord {
            stage: plan.stage.to_string(),
            params_digest,
            inputs,
            outputs,
            started_at,
            finished_at: Utc::now(),
            summary: done.summary.clone(),
        });
        manifest.save(&self.manifest_path())?;
        Ok(StageOutcome { stage: plan.stage, status: StageStatus::Ran, summary: done.summary })
    }

    fn load_companies(&self, stage: &'static str, path: &Path) -> Result<Vec<CompanyRecord>, PipelineError> {
        read_ndjson(stage, path)
    }

    /// Registry CSV to `companies.ndjson`; rejected rows go to `ingest_errors.ndjson`.
    pub fn ingest(&self, registry: &Path) -> Result<StageOutcome, PipelineError> {
        const S: &str = "ingest";
        let reg = self.config.registry.clone();
        let plan = Plan {
            stage: S,
            inputs: vec![(registry.to_path_buf(), USER_INPUT)],
            params: json!({ "delimiter": reg.delimiter }),
            skippable: true,
        };
        self.run(plan, || {
            let f = std::fs::File::open(registry).map_err(|e| PipelineError::io(registry, e))?;
            let (records, errors) =
                load_registry(f, CsvFormat { delimiter: reg.delimiter as u8 }).map_err(fail(S))?;
            let mut by_reason: BTreeMap<&str, usize> = BTreeMap::new();
            for e in &errors {
                tracing::warn!(row = e.row, reason = e.reason.as_str(), detail = %e.detail, "registry row rejected");
                *by_reason.entry(e.reason.as_str()).or_default() += 1;
            }
            let out = self.path(a::COMPANIES);
            let err_out = self.path(a::INGEST_ERRORS);
            write_ndjson(&out, &records)?;
            write_ndjson(&err_out, &errors)?;
            Ok(Done {
                summary: json!({ "records": records.len(), "rejected": errors.len(), "rejected_by_reason": by_reason }),
                outputs: vec![out, err_out],
            })
        })
    }

    /// Crawls every company site, from an archive or live.
    pub fn fetch(&self, source: &FetchSource, policy: &CrawlPolicy) -> Result<StageOutcome, PipelineError> {
        const S: &str = "fetch";
        policy.validate().map_err(fail(S))?;
        let companies_path = self.path(a::COMPANIES);
        let mut inputs = vec![(companies_path.clone(), "ingest")];
        if let FetchSource::Archive(dir) = source {
            inputs.push((dir.clone(), USER_INPUT));
        }
        let mode = match source {
            FetchSource::Archive(_) => "archive",
            FetchSource::Live => "live",
        };
        let plan = Plan { stage: S, inputs, params: json!({ "mode": mode, "policy": policy }), skippable: true };
        self.run(plan, || {
            let companies = self.load_companies(S, &companies_path)?;
            let transport: Box<dyn Transport> = match source {
                FetchSource::Archive(dir) => Box::new(ArchiveTransport::open(dir).map_err(fail(S))?),
                FetchSource::Live => Box::new(LiveTransport::new(std::time::Duration::from_millis(policy.timeout_ms), &self.config.fetch.contact)),
            };
            let results = crawl_all(&companies, policy, transport.as_ref(), self.config.execution());
            let mut pages: Vec<WebPage> = Vec::new();
            let mut logs = Vec::new();
            let mut site_errors = 0;
            for (p, log) in results {
                if let Some(err) = &log.site_error {
                    site_errors += 1;
                    tracing::warn!(company = %log.company_id, error = %err, "site not crawled");
                }
                pages.extend(p);
                logs.push(log);
            }
            let out = self.path(a::PAGES);
            write_ndjson(&out, &pages)?;
            // Timings make the crawl log run-specific, so it is not a digested output.
            write_ndjson(&self.path(a::CRAWL_LOG), &logs)?;
            Ok(Done {
                summary: json!({ "mode": mode, "companies": companies.len(), "pages": pages.len(), "site_errors": site_errors }),
                outputs: vec![out],
            })
        })
    }

    fn lexicon(&self, stage: &'static str, path: Option<&Path>) -> Result<Lexicon, PipelineError> {
        match path {
            Some(p) => {
                let f = std::fs::File::open(p).map_err(|e| PipelineError::io(p, e))?;
                Lexicon::from_csv(f).map_err(fail(stage))
            }
            None => Ok(Lexicon::builtin()),
        }
    }

    /// Pages to keyword-in-context data points, with boilerplate removed.
    pub fn extract(&self, lexicon: Option<&Path>) -> Result<StageOutcome, PipelineError> {
        const S: &str = "extract";
        let lexicon_path = lexicon.map(Path::to_path_buf).or_else(|| self.config.extract.lexicon.clone());
        let pages_path = self.path(a::PAGES);
        let mut inputs = vec![(pages_path.clone(), "fetch")];
        if let Some(p) = &lexicon_path {
            inputs.push((p.clone(), USER_INPUT));
        }
        let plan = Plan { stage: S, inputs, params: json!({ "lexicon": lexicon_path.is_some() }), skippable: true };
        self.run(plan, || {
            let lexicon = self.lexicon(S, lexicon_path.as_deref())?;
            let pages: Vec<WebPage> = read_ndjson(S, &pages_path)?;
            let points = extract_all(&pages, &KeywordMatcher::new(&lexicon), self.config.execution());
            let outcome = filter_data_points(points, &lexicon);
            let (pts, dropped, report) = (self.path(a::POINTS), self.path(a::DROPPED), self.path(a::FILTER_REPORT));
            write_ndjson(&pts, &outcome.kept)?;
            write_ndjson(&dropped, &outcome.dropped)?;
            write_json(&report, &outcome.report)?;
            Ok(Done {
                summary: json!({ "pages": pages.len(), "kept": outcome.kept.len(), "dropped": outcome.dropped.len() }),
                outputs: vec![pts, dropped, report],
            })
        })
    }

    pub fn label_dir(&self) -> PathBuf {
        self.path(a::LABELING_DIR)
    }

    /// Opens a new labeling round over points not labeled in earlier rounds.
    pub fn round(&self, n: usize, annotators: &[String], seed: u64) -> Result<StageOutcome, PipelineError> {
        const S: &str = "round";
        let points_path = self.path(a::POINTS);
        let plan = Plan {
            stage: S,
            inputs: vec![(points_path.clone(), "extract")],
            params: json!({ "n": n, "annotators": annotators, "seed": seed }),
            skippable: false,
        };
        self.run(plan, || {
            let points: Vec<DataPoint> = read_ndjson(S, &points_path)?;
            let mut store = LabelStore::open(&self.label_dir()).map_err(fail(S))?;
            let tasks = store.create_round(&points, n, annotators, seed).map_err(fail(S))?;
            let mut per: BTreeMap<&str, usize> = BTreeMap::new();
            for t in &tasks {
                *per.entry(t.assigned_annotator.as_str()).or_default() += 1;
            }
            Ok(Done {
                summary: json!({ "round": store.current_round(), "tasks": tasks.len(), "per_annotator": per }),
                outputs: vec![store.path().to_path_buf()],
            })
        })
    }

    /// Labeled tasks of the chosen rounds (all when `None`) to `labels.ndjson`.
    pub fn export_labels(&self, out: Option<&Path>, rounds: Option<&[u32]>) -> Result<StageOutcome, PipelineError> {
        const S: &str = "export-labels";
        let log = self.label_dir().join(EVENTS_FILE);
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| self.path(a::LABELS));
        let plan = Plan { stage: S, inputs: vec![(log, "round")], params: json!({ "rounds": rounds }), skippable: true };
        self.run(plan, || {
            let store = LabelStore::open(&self.label_dir()).map_err(fail(S))?;
            let labels = store.export(rounds);
            write_ndjson(&out, &labels)?;
            let mut per: BTreeMap<&str, usize> = BTreeMap::new();
            for l in &labels {
                *per.entry(l.final_label.as_str()).or_default() += 1;
            }
            Ok(Done { summary: json!({ "exported": labels.len(), "by_final_label": per }), outputs: vec![out.clone()] })
        })
    }

    fn encoder(&self) -> Result<Encoder, PipelineError> {
        Encoder::new(self.config.embedder.clone(), self.config.firm_classifier()?).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Loads the vector cache when its provenance matches the configured
    /// embedder, else starts empty.
    fn load_cache(&self, path: &Path, encoder: &Encoder) -> EmbeddingCache {
        let meta_path = path.with_file_name(a::VECTORS_META);
        let meta: Option<VectorsMeta> = std::fs::read(&meta_path).ok().and_then(|b| serde_json::from_slice(&b).ok());
        match meta {
            Some(m) if m.provenance == encoder.config().provenance() && m.dim == encoder.dim() => {
                EmbeddingCache::load(path).ok().filter(|c| c.check_dim(encoder.dim()).is_ok()).unwrap_or_default()
            }
            _ => EmbeddingCache::default(),
        }
    }

    /// Vectors for every point, encoding only the ones missing from `cache`.
    fn fill_vectors(
        &self,
        stage: &'static str,
        encoder: &Encoder,
        mut cache: EmbeddingCache,
        points: &[DataPoint],
        companies: &[CompanyRecord],
    ) -> Result<EmbeddingCache, PipelineError> {
        let index: HashMap<&str, &CompanyRecord> = companies.iter().map(|c| (c.company_id.as_str(), c)).collect();
        let mut todo = Vec::new();
        for p in points.iter().filter(|p| cache.get(&p.point_id).is_none()) {
            let c = index.get(p.company_id.as_str()).ok_or_else(|| PipelineError::Stage {
                stage,
                message: format!("point {} belongs to company {} which is not in the registry", p.point_id, p.company_id),
            })?;
            todo.push((p, *c));
        }
        if !todo.is_empty() {
            tracing::info!(stage, count = todo.len(), "encoding data points");
            let vectors = encoder.encode_batch(&todo, self.config.execution()).map_err(fail(stage))?;
            for ((p, _), v) in todo.iter().zip(vectors) {
                cache.insert(p.point_id.clone(), v.values);
            }
        }
        let mut pruned = EmbeddingCache::default();
        for p in points {
            pruned.insert(p.point_id.clone(), cache.get(&p.point_id).expect("filled above").to_vec());
        }
        Ok(pruned)
    }

    /// Embeds all points, trains the voting ensemble on the exported labels
    /// and evaluates it on a deterministic holdout.
    pub fn train(
        &self,
        labels: Option<&Path>,
        vectors: Option<&Path>,
        out: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<StageOutcome, PipelineError> {
        const S: &str = "train";
        let labels_path = labels
            .map(Path::to_path_buf)
            .or_else(|| self.config.train.labels.clone())
            .unwrap_or_else(|| self.path(a::LABELS));
        let vectors_path = vectors.map(Path::to_path_buf).unwrap_or_else(|| self.path(a::VECTORS));
        let model_path = out.map(Path::to_path_buf).unwrap_or_else(|| self.path(a::MODEL));
        let mut ens_cfg = self.config.ensemble.clone();
        if let Some(s) = seed {
            ens_cfg.master_seed = s;
        }
        let (points_path, companies_path) = (self.path(a::POINTS), self.path(a::COMPANIES));
        let plan = Plan {
            stage: S,
            inputs: vec![(labels_path.clone(), "export-labels"), (points_path.clone(), "extract"), (companies_path.clone(), "ingest")],
            params: json!({
                "embedder": self.config.embedder,
                "ensemble": ens_cfg,
                "train": self.config.train,
                "registry": self.config.registry,
                "vectors": display_path(&self.data_dir, &vectors_path),
                "model": display_path(&self.data_dir, &model_path),
            }),
            skippable: true,
        };
        self.run(plan, || {
            let exported: Vec<crate::labeling::ExportedLabel> = read_ndjson(S, &labels_path)?;
            let points: Vec<DataPoint> = read_ndjson(S, &points_path)?;
            let companies = self.load_companies(S, &companies_path)?;
            let encoder = self.encoder()?;
            let cache = self.load_cache(&vectors_path, &encoder);
            let cache = self.fill_vectors(S, &encoder, cache, &points, &companies)?;
            cache.save(&vectors_path).map_err(fail(S))?;
            let meta_path = vectors_path.with_file_name(a::VECTORS_META);
            write_json(
                &meta_path,
                &VectorsMeta { provenance: encoder.config().provenance(), dim: encoder.dim(), count: cache.len() },
            )?;

            let missing: Vec<&str> =
                exported.iter().filter(|l| cache.get(&l.point_id).is_none()).map(|l| l.point_id.as_str()).collect();
            if let Some(first) = missing.first() {
                return Err(PipelineError::Stage {
                    stage: S,
                    message: format!("{} labeled points are not among the extracted points (first: {first})", missing.len()),
                });
            }
            let frac = self.config.train.holdout_fraction;
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for l in &exported {
                let v = cache.get(&l.point_id).expect("checked").to_vec();
                let Some(p) = LabeledPoint::new(&l.point_id, v, l.initial_label, &l.annotator_id, l.round) else {
                    continue;
                };
                if in_holdout(ens_cfg.master_seed, &l.point_id, frac) {
                    test.push(p);
                } else {
                    train.push(p);
                }
            }
            let mut ensemble = train_ensemble(&train, &ens_cfg, self.config.execution()).map_err(fail(S))?;
            ensemble.metadata.trained_at =
                self.config.train.trained_at.clone().unwrap_or_else(|| self.config.registry.reference_date.to_string());
            write_atomic(&model_path, &serde_json::to_vec(&ensemble).expect("ensemble serializes"))?;
            let mut outputs = vec![vectors_path.clone(), meta_path, model_path.clone()];
            let mut summary = json!({
                "labeled": exported.len(),
                "train": train.len(),
                "holdout": test.len(),
                "input_dim": ensemble.input_dim,
                "data_fingerprint": ensemble.metadata.data_fingerprint,
            });
            if !test.is_empty() {
                let report = evaluate(&ensemble, &test, self.config.execution()).map_err(fail(S))?;
                summary["holdout_accuracy"] = json!(report.accuracy);
                let eval_path = model_path.with_file_name(a::EVAL_REPORT);
                write_json(&eval_path, &report)?;
                outputs.push(eval_path);
            }
            Ok(Done { summary, outputs })
        })
    }

    /// Predicts every extracted point with the trained ensemble.
    pub fn predict(&self, model: Option<&Path>, input: Option<&Path>, out: Option<&Path>) -> Result<StageOutcome, PipelineError> {
        const S: &str = "predict";
        let model_path = model.map(Path::to_path_buf).unwrap_or_else(|| self.path(a::MODEL));
        let points_path = input.map(Path::to_path_buf).unwrap_or_else(|| self.path(a::POINTS));
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| self.path(a::PREDICTIONS));
        let companies_path = self.path(a::COMPANIES);
        let vectors_path = self.path(a::VECTORS);
        let mut inputs = vec![(model_path.clone(), "train"), (points_path.clone(), "extract"), (companies_path.clone(), "ingest")];
        if vectors_path.exists() {
            inputs.push((vectors_path.clone(), "train"));
        }
        let plan = Plan {
            stage: S,
            inputs,
            params: json!({ "embedder": self.config.embedder, "registry": self.config.registry }),
            skippable: true,
        };
        self.run(plan, || {
            let bytes = std::fs::read(&model_path).map_err(|e| PipelineError::io(&model_path, e))?;
            let ensemble: Ensemble = serde_json::from_slice(&bytes).map_err(fail(S))?;
            ensemble.validate().map_err(fail(S))?;
            let encoder = self.encoder()?;
            if encoder.dim() != ensemble.input_dim {
                return Err(PipelineError::Stage {
                    stage: S,
                    message: format!("model expects {}-dim vectors, embedder produces {}", ensemble.input_dim, encoder.dim()),
                });
            }
            let points: Vec<DataPoint> = read_ndjson(S, &points_path)?;
            let companies = self.load_companies(S, &companies_path)?;
            let cache = self.load_cache(&vectors_path, &encoder);
            let cache = self.fill_vectors(S, &encoder, cache, &points, &companies)?;
            let dim = encoder.dim();
            let mut x = Array2::<f64>::zeros((points.len(), dim));
            for (mut row, p) in x.rows_mut().into_iter().zip(&points) {
                row.assign(&ndarray::ArrayView1::from(cache.get(&p.point_id).expect("filled")));
            }
            let ids: Vec<String> = points.iter().map(|p| p.point_id.clone()).collect();
            let preds = ensemble.predict_batch(&ids, x.view(), self.config.execution()).map_err(fail(S))?;
            let rows: Vec<PointPrediction> = points
                .iter()
                .zip(preds)
                .map(|(p, prediction)| PointPrediction {
                    company_id: p.company_id.clone(),
                    page_url: p.page_url.to_string(),
                    prediction,
                })
                .collect();
            write_ndjson(&out, &rows)?;
            let mut per: BTreeMap<&str, usize> = BTreeMap::new();
            for r in &rows {
                *per.entry(r.prediction.label.as_str()).or_default() += 1;
            }
            Ok(Done { summary: json!({ "predictions": rows.len(), "by_label": per }), outputs: vec![out.clone()] })
        })
    }

    /// Company labels by the hierarchy rule, plus share, cross and innovation tables.
    pub fn aggregate(&self, min_confidence: Option<f64>, threshold: Option<f64>) -> Result<StageOutcome, PipelineError> {
        const S: &str = "aggregate";
        let min_conf = min_confidence.unwrap_or(self.config.aggregate.min_confidence);
        let threshold = threshold.unwrap_or(self.config.aggregate.innovation_threshold);
        if !(0.0..=1.0).contains(&min_conf) {
            return Err(PipelineError::Config(format!("min_confidence {min_conf} outside [0, 1]")));
        }
        let (preds_path, companies_path) = (self.path(a::PREDICTIONS), self.path(a::COMPANIES));
        let plan = Plan {
            stage: S,
            inputs: vec![(preds_path.clone(), "predict"), (companies_path.clone(), "ingest")],
            params: json!({ "min_confidence": min_conf, "innovation_threshold": threshold, "registry": self.config.registry }),
            skippable: true,
        };
        self.run(plan, || {
            let preds: Vec<PointPrediction> = read_ndjson(S, &preds_path)?;
            let companies = self.load_companies(S, &companies_path)?;
            let firms = self.config.firm_classifier()?;
            let labels = classify_companies(&preds, min_conf, self.config.execution());
            let labels_out = self.path(a::COMPANY_LABELS);
            write_ndjson(&labels_out, &labels)?;
            let tables = self.path(a::TABLES_DIR);
            std::fs::create_dir_all(&tables).map_err(|e| PipelineError::io(&tables, e))?;
            let mut outputs = vec![labels_out];

            let shares = type_shares(&labels);
            let mut buf = Vec::new();
            write_share_table(&shares, &mut buf).map_err(fail(S))?;
            let p = tables.join("type_shares.csv");
            write_atomic(&p, &buf)?;
            outputs.push(p);
            for attr in [Attribute::Size, Attribute::Age, Attribute::Sector] {
                let t = cross_tab(&labels, attr, &companies, &firms).map_err(fail(S))?;
                let mut buf = Vec::new();
                write_cross_tab(&t, &mut buf).map_err(fail(S))?;
                let p = tables.join(format!("by_{}.csv", attr.as_str()));
                write_atomic(&p, &buf)?;
                outputs.push(p);
            }
            let inno = innovation_validation(&labels, &companies, threshold).map_err(fail(S))?;
            let mut buf = Vec::new();
            write_innovation(&inno, &mut buf).map_err(fail(S))?;
            let p = tables.join("innovation.csv");
            write_atomic(&p, &buf)?;
            outputs.push(p);

            let share_map: BTreeMap<&str, f64> = shares.rows.iter().map(|r| (r.category.as_str(), r.share)).collect();
            Ok(Done {
                summary: json!({
                    "companies": companies.len(),
                    "engaged": labels.len(),
                    "shares": share_map,
                    "innovative_share": inno.total.share,
                }),
                outputs,
            })
        })
    }

    /// Regional intensity, hotspots, per-type layers and the heat grid.
    pub fn geo(&self, args: &GeoArgs) -> Result<StageOutcome, PipelineError> {
        const S: &str = "geo";
        let g = self.config.geo.clone();
        let labels_path = args.labels.clone().unwrap_or_else(|| self.path(a::COMPANY_LABELS));
        let registry_path = args.registry.clone().unwrap_or_else(|| self.path(a::COMPANIES));
        let regions_path = args.regions.clone().or_else(|| g.regions.clone());
        let out_dir = args.out_dir.clone().unwrap_or_else(|| self.path(a::MAPS_DIR));
        let mut inputs = vec![(labels_path.clone(), "aggregate"), (registry_path.clone(), "ingest")];
        if let Some(r) = &regions_path {
            inputs.push((r.clone(), USER_INPUT));
        }
        let plan = Plan {
            stage: S,
            inputs,
            params: json!({ "geo": g, "regions": regions_path.is_some(), "out_dir": display_path(&self.data_dir, &out_dir) }),
            skippable: true,
        };
        self.run(plan, || {
            let labels: Vec<CompanyLabel> = read_ndjson(S, &labels_path)?;
            let companies = self.load_companies(S, &registry_path)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| PipelineError::io(&out_dir, e))?;
            let stats = regional_stats(&companies, &labels).map_err(fail(S))?;
            let hotspots = top_k_hotspots(&stats, g.top_k, g.min_total).map_err(fail(S))?;
            let geoms = match &regions_path {
                Some(p) => {
                    let bytes = std::fs::read(p).map_err(|e| PipelineError::io(p, e))?;
                    let doc: Value = serde_json::from_slice(&bytes).map_err(fail(S))?;
                    load_region_geometries(&doc).map_err(fail(S))?
                }
                None => centroid_geometries(&companies),
            };
            let mut outputs = Vec::new();
            let mut skipped: Vec<String> = Vec::new();
            let (regions_fc, s1) = regions_geojson(&stats, &geoms);
            let (hot_fc, s2) = hotspots_geojson(&hotspots, &geoms);
            skipped.extend(s1.into_iter().filter(|r| r != UNASSIGNED_REGION));
            skipped.extend(s2);
            for (name, fc) in [("regions.geojson", &regions_fc), ("hotspots.geojson", &hot_fc)] {
                let p = out_dir.join(name);
                write_json(&p, fc)?;
                outputs.push(p);
            }
            let mut unlocated = 0;
            for label in FinalLabel::ALL {
                let (fc, missing) = type_layer_geojson(label, &companies, &labels);
                unlocated += missing.len();
                let p = out_dir.join(format!("type_{}.geojson", label.as_str().to_lowercase()));
                write_json(&p, &fc)?;
                outputs.push(p);
            }
            skipped.sort();
            skipped.dedup();
            for r in &skipped {
                tracing::warn!(region = %r, "no geometry for region, feature skipped");
            }

            let index: HashMap<&str, &CompanyRecord> = companies.iter().map(|c| (c.company_id.as_str(), c)).collect();
            let engaged: Vec<(f64, f64)> =
                labels.iter().filter_map(|l| index.get(l.company_id.as_str()).and_then(|c| c.location())).collect();
            let mut heat = Value::Null;
            match g.bbox.or_else(|| derived_bbox(&companies, g.bandwidth_deg)) {
                Some(bbox) => {
                    let (grid, report) = heat_grid(&engaged, bbox, g.cell_deg, g.bandwidth_deg, self.config.execution())
                        .map_err(fail(S))?;
                    let mut buf = Vec::new();
                    write_heatmap_csv(&grid, &mut buf).map_err(fail(S))?;
                    let p = out_dir.join("heatmap.csv");
                    write_atomic(&p, &buf)?;
                    outputs.push(p);
                    heat = json!({ "rows": grid.rows, "cols": grid.cols, "in_box": report.in_box, "outside": report.outside });
                }
                None => tracing::warn!("no located firms and no bbox configured; heat map not written"),
            }
            Ok(Done {
                summary: json!({
                    "regions": stats.len(),
                    "hotspots": hotspots.iter().map(|h| h.stats.region_id.as_str()).collect::<Vec<_>>(),
                    "regions_without_geometry": skipped,
                    "engaged_without_location": unlocated,
                    "heat": heat,
                }),
                outputs,
            })
        })
    }

    /// Markdown summary of shares, innovation and hotspots.
    pub fn report(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "report";
        let labels_path = self.path(a::COMPANY_LABELS);
        let companies_path = self.path(a::COMPANIES);
        let hot_path = self.path(a::MAPS_DIR).join("hotspots.geojson");
        let plan = Plan {
            stage: S,
            inputs: vec![(labels_path.clone(), "aggregate"), (companies_path.clone(), "ingest"), (hot_path.clone(), "geo")],
            params: json!({ "innovation_threshold": self.config.aggregate.innovation_threshold }),
            skippable: true,
        };
        self.run(plan, || {
            let labels: Vec<CompanyLabel> = read_ndjson(S, &labels_path)?;
            let companies = self.load_companies(S, &companies_path)?;
            let hot: Value = serde_json::from_slice(&std::fs::read(&hot_path).map_err(|e| PipelineError::io(&hot_path, e))?)
                .map_err(fail(S))?;
            let shares = type_shares(&labels);
            let inno =
                innovation_validation(&labels, &companies, self.config.aggregate.innovation_threshold).map_err(fail(S))?;
            let mut md = String::new();
            md.push_str("# techradar report\n\n");
            md.push_str(&format!("Companies in registry: {}\n\nEngaged companies: {}\n\n", companies.len(), labels.len()));
            md.push_str("## Type shares\n\n| type | count | share |\n|---|---:|---:|\n");
            for r in &shares.rows {
                md.push_str(&format!("| {} | {} | {:.1}% |\n", r.category, r.count, r.share * 100.0));
            }
            md.push_str(&format!(
                "\n## Innovation (InnoProb >= {})\n\n| type | scored | innovative | share |\n|---|---:|---:|---:|\n",
                inno.threshold
            ));
            for r in inno.rows.iter().chain([&inno.total]) {
                let share = r.share.map(|s| format!("{:.1}%", s * 100.0)).unwrap_or_else(|| "n/a".into());
                md.push_str(&format!("| {} | {} | {} | {} |\n", r.category, r.n, r.n_innovative, share));
            }
            md.push_str("\n## Hotspots\n\n| rank | region | firms | engaged | intensity |\n|---:|---|---:|---:|---:|\n");
            for f in hot["features"].as_array().map(Vec::as_slice).unwrap_or_default() {
                let p = &f["properties"];
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {:.3} |\n",
                    p["rank"], p["region_id"].as_str().unwrap_or(""), p["total_firms"], p["engaged_firms"],
                    p["intensity"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            if let Some(m) = self.manifest()? {
                md.push_str("\n## Artifacts\n\n| stage | output | sha256 |\n|---|---|---|\n");
                for s in m.stages.iter().filter(|s| s.stage != S) {
                    for o in &s.outputs {
                        md.push_str(&format!("| {} | {} | `{}` |\n", s.stage, o.path, &o.sha256[..16]));
                    }
                }
            }
            let out = self.path(a::REPORT);
            write_atomic(&out, md.as_bytes())?;
            Ok(Done { summary: json!({ "engaged": labels.len() }), outputs: vec![out] })
        })
    }

    /// ingest, fetch, extract, train, predict, aggregate and geo in order.
    pub fn run_all(&self, args: &RunAllArgs) -> Result<Vec<StageOutcome>, PipelineError> {
        let mut out = vec![self.ingest(&args.registry)?];
        out.push(self.fetch(&args.source, &self.config.crawl)?);
        out.push(self.extract(None)?);
        out.push(self.train(args.labels.as_deref(), None, None, None)?);
        out.push(self.predict(None, None, None)?);
        out.push(self.aggregate(None, None)?);
        out.push(self.geo(&GeoArgs { regions: args.regions.clone(), ..Default::default() })?);
        Ok(out)
    }
}

/// Mean location of each region's located firms, as Point geometries.
fn centroid_geometries(companies: &[CompanyRecord]) -> RegionGeometries {
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for c in companies {
        if let (Some(r), Some((lat, lon))) = (c.region_id.as_deref(), c.location()) {
            let e = sums.entry(r).or_default();
            e.0 += lat;
            e.1 += lon;
            e.2 += 1;
        }
    }
    sums.into_iter()
        .map(|(r, (lat, lon, n))| (r.to_string(), json!({ "type": "Point", "coordinates": [lon / n as f64, lat / n as f64] })))
        .collect()
}

/// Extent of all located firms, padded by `pad` degrees on each side.
fn derived_bbox(companies: &[CompanyRecord], pad: f64) -> Option<BBox> {
    let locs: Vec<(f64, f64)> = companies.iter().filter_map(CompanyRecord::location).collect();
    if locs.is_empty() {
        return None;
    }
    let (mut b, _) = (BBox { min_lat: f64::MAX, min_lon: f64::MAX, max_lat: f64::MIN, max_lon: f64::MIN }, ());
    for (lat, lon) in locs {
        b.min_lat = b.min_lat.min(lat);
        b.max_lat = b.max_lat.max(lat);
        b.min_lon = b.min_lon.min(lon);
        b.max_lon = b.max_lon.max(lon);
    }
    Some(BBox {
        min_lat: (b.min_lat - pad).max(-90.0),
        max_lat: (b.max_lat + pad).min(90.0),
        min_lon: (b.min_lon - pad).max(-180.0),
        max_lon: (b.max_lon + pad).min(180.0),
    })
}
