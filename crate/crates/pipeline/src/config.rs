//! Run configuration, loaded from a single TOML document.
//!
//! Every section and field has a default, so an empty file (or no file at
//! all) is a valid configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use techradar_core::aggregator::DEFAULT_INNOVATION_THRESHOLD;
use techradar_core::classifier::EnsembleConfig;
use techradar_core::embedder::EmbedderConfig;
use techradar_core::fetcher::CrawlPolicy;
use techradar_core::geo::{BBox, DEFAULT_MIN_TOTAL, DEFAULT_TOP_K};
use techradar_core::registry::{AgeBoundaries, FirmClassifier, SectorTable};
use techradar_core::Execution;

use crate::PipelineError;

/// Environment variable naming the artifact root.
pub const DATA_DIR_ENV: &str = "TECHRADAR_DATA_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub registry: RegistryConfig,
    pub crawl: CrawlPolicy,
    pub fetch: FetchConfig,
    pub extract: ExtractConfig,
    pub embedder: EmbedderConfig,
    pub ensemble: EnsembleConfig,
    pub train: TrainStageConfig,
    pub aggregate: AggregateConfig,
    pub geo: GeoConfig,
    pub labeling: LabelingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub execution: ExecutionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    /// Date against which firm ages are computed.
    pub reference_date: NaiveDate,
    pub delimiter: char,
    pub age_boundaries: AgeBoundaries,
    /// NACE grouping table; the built-in 31-group table when absent.
    pub sector_table: Option<PathBuf>,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            reference_date: NaiveDate::from_ymd_opt(2021, 5, 1).expect("valid date"),
            delimiter: ',',
            age_boundaries: AgeBoundaries::default(),
            sector_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    /// Contact address placed in the crawler's User-Agent.
    pub contact: String,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig { contact: "mailto:research@example.org".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Keyword CSV; the built-in lexicon when absent.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStageConfig {
    /// Exported labels used by `train` when no path is given on the command line.
    pub labels: Option<PathBuf>,
    /// Fraction of labeled points held out for evaluation.
    pub holdout_fraction: f64,
    /// Value written to the model's `trained_at`. Defaults to the registry
    /// reference date so that model files stay byte-reproducible.
    pub trained_at: Option<String>,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        TrainStageConfig { labels: None, holdout_fraction: 0.2, trained_at: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateConfig {
    pub min_confidence: f64,
    pub innovation_threshold: f64,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig { min_confidence: 0.0, innovation_threshold: DEFAULT_INNOVATION_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub top_k: usize,
    pub min_total: u64,
    pub cell_deg: f64,
    pub bandwidth_deg: f64,
    /// Heat-map extent; derived from located firms when absent.
    pub bbox: Option<BBox>,
    /// Region polygons keyed by `region_id`.
    pub regions: Option<PathBuf>,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            top_k: DEFAULT_TOP_K,
            min_total: DEFAULT_MIN_TOTAL,
            cell_deg: 0.01,
            bandwidth_deg: 0.02,
            bbox: None,
            regions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub seed: u64,
    pub round_size: usize,
    pub annotators: Vec<String>,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig { seed: 0, round_size: 750, annotators: Vec::new() }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Config::parse(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Config, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.crawl.validate().map_err(|e| format!("crawl: {e}"))?;
        self.embedder.validate().map_err(|e| format!("embedder: {e}"))?;
        self.ensemble.validate().map_err(|e| format!("ensemble: {e}"))?;
        if !self.registry.delimiter.is_ascii() {
            return Err("registry.delimiter must be a single ASCII character".into());
        }
        if !(0.0..1.0).contains(&self.train.holdout_fraction) {
            return Err("train.holdout_fraction must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.aggregate.min_confidence) {
            return Err("aggregate.min_confidence must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.aggregate.innovation_threshold) {
            return Err("aggregate.innovation_threshold must be in [0, 1]".into());
        }
        let g = &self.geo;
        if !(g.cell_deg > 0.0 && g.bandwidth_deg > 0.0) {
            return Err("geo.cell_deg and geo.bandwidth_deg must be positive".into());
        }
        if g.top_k == 0 {
            return Err("geo.top_k must be at least 1".into());
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        match self.run.execution {
            ExecutionMode::Sequential => Execution::Sequential,
            ExecutionMode::Parallel => Execution::Parallel,
        }
    }

    pub fn firm_classifier(&self) -> Result<FirmClassifier, PipelineError> {
        let mut firms = FirmClassifier::new(self.registry.reference_date);
        firms.age_bounds = self.registry.age_boundaries.clone();
        if let Some(path) = &self.registry.sector_table {
            let f = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
            firms.sectors = SectorTable::from_reader(f).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(firms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = Config::parse(
            "[ensemble]\nmaster_seed = 7\n[ensemble.train]\nepochs = 30\n[geo]\ntop_k = 5\n[run]\nexecution = \"sequential\"\n",
        )
        .unwrap();
        assert_eq!(cfg.ensemble.master_seed, 7);
        assert_eq!(cfg.ensemble.train.epochs, 30);
        assert_eq!(cfg.ensemble.train.batch_size, 32);
        assert_eq!(cfg.geo.top_k, 5);
        assert_eq!(cfg.geo.min_total, 30);
        assert_eq!(cfg.execution(), Execution::Sequential);
        assert_eq!(cfg.embedder.dim(), 1920);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::parse("[geo]\ncell_deg = 0.0\n").is_err());
        assert!(Config::parse("[crawl]\nglobal_concurrency = 0\n").is_err());
        assert!(Config::parse("[nonsense]\nx = 1\n").is_err());
        assert!(Config::parse("[aggregate]\nmin_confidence = 1.5\n").is_err());
        assert!(Config::parse("[registry]\nage_boundaries = [5, 3]\n").is_err());
    }
}
