//! Fixed-length semantic vectors: a text block followed by a metadata block.

mod external;
mod hashed;
pub mod meta;

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use external::ExternalService;
pub use hashed::hashed_ngram_vector;
pub use meta::{meta_slots, meta_vector, url_depth, META_LAYOUT_LEN};

use crate::extractor::DataPoint;
use crate::registry::{CompanyRecord, FirmClassifier};
use crate::Execution;

pub const DEFAULT_D_TEXT: usize = 1792;
pub const DEFAULT_D_META: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    HashedNgram,
    ExternalService,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub provider: ProviderKind,
    pub d_text: usize,
    pub d_meta: usize,
    pub ngram_range: (usize, usize),
    pub hash_seed: u64,
    pub endpoint: Option<String>,
    pub batch_size: usize,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            provider: ProviderKind::HashedNgram,
            d_text: DEFAULT_D_TEXT,
            d_meta: DEFAULT_D_META,
            ngram_range: (3, 5),
            hash_seed: 0,
            endpoint: None,
            batch_size: 64,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid embedder configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding service: {0}")]
    Service(String),
    #[error("non-finite value in embedding")]
    NonFinite,
}

impl EmbedderConfig {
    pub fn dim(&self) -> usize {
        self.d_text + self.d_meta
    }

    /// `d_meta` may be 0 (no metadata block); otherwise it must hold the frozen layout.
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.d_text < 8 {
            return Err(EmbedError::Config(format!("d_text must be >= 8, got {}", self.d_text)));
        }
        if self.d_meta != 0 && self.d_meta < META_LAYOUT_LEN {
            return Err(EmbedError::Config(format!(
                "d_meta {} is smaller than the {META_LAYOUT_LEN}-slot metadata layout",
                self.d_meta
            )));
        }
        let (lo, hi) = self.ngram_range;
        if lo == 0 || lo > hi {
            return Err(EmbedError::Config(format!("bad ngram_range ({lo}, {hi})")));
        }
        if self.provider == ProviderKind::ExternalService && self.endpoint.is_none() {
            return Err(EmbedError::Config("external-service provider needs an endpoint".into()));
        }
        Ok(())
    }

    pub fn provenance(&self) -> String {
        match self.provider {
            ProviderKind::HashedNgram => format!(
                "hashed-ngram/v1 d_text={} d_meta={} ngram={}-{} seed={}",
                self.d_text, self.d_meta, self.ngram_range.0, self.ngram_range.1, self.hash_seed
            ),
            ProviderKind::ExternalService => format!(
                "external-service/v1 d_text={} d_meta={} endpoint={}",
                self.d_text,
                self.d_meta,
                self.endpoint.as_deref().unwrap_or("")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    pub values: Vec<f64>,
    pub provenance: String,
}

impl SemanticVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub(crate) fn normalize_l2(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Text block only, using the hashed provider.
pub fn embed_text(text: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    hashed_ngram_vector(text, cfg.d_text, cfg.ngram_range, cfg.hash_seed)
}

pub fn embed_meta(company: &CompanyRecord, point: &DataPoint, firms: &FirmClassifier, cfg: &EmbedderConfig) -> Vec<f64> {
    meta_vector(company, point, firms, cfg.d_meta)
}

enum TextProvider {
    Hashed,
    External(ExternalService),
}

/// Encodes data points into `[text | meta]` vectors.
pub struct Encoder {
    cfg: EmbedderConfig,
    firms: FirmClassifier,
    provider: TextProvider,
}

impl Encoder {
    pub fn new(cfg: EmbedderConfig, firms: FirmClassifier) -> Result<Encoder, EmbedError> {
        cfg.validate()?;
        let provider = match cfg.provider {
            ProviderKind::HashedNgram => TextProvider::Hashed,
            ProviderKind::ExternalService => TextProvider::External(ExternalService::new(
                cfg.endpoint.as_deref().unwrap_or_default(),
                cfg.d_text,
                cfg.batch_size,
                Duration::from_millis(cfg.timeout_ms),
            )),
        };
        Ok(Encoder { cfg, firms, provider })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim()
    }

    fn texts(&self, texts: &[&str], exec: Execution) -> Result<Vec<Vec<f64>>, EmbedError> {
        match &self.provider {
            TextProvider::Hashed => Ok(exec.map(texts, |t| embed_text(t, &self.cfg))),
            TextProvider::External(svc) => svc.embed(texts),
        }
    }

    fn assemble(&self, text: Vec<f64>, company: &CompanyRecord, point: &DataPoint) -> Result<SemanticVector, EmbedError> {
        if text.len() != self.cfg.d_text {
            return Err(EmbedError::Dimension { expected: self.cfg.d_text, got: text.len() });
        }
        let mut values = text;
        values.extend(embed_meta(company, point, &self.firms, &self.cfg));
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(SemanticVector { values, provenance: self.cfg.provenance() })
    }

    pub fn encode(&self, point: &DataPoint, company: &CompanyRecord) -> Result<SemanticVector, EmbedError> {
        let mut text = self.texts(&[point.paragraph.as_str()], Execution::Sequential)?;
        self.assemble(text.remove(0), company, point)
    }

    /// Output order matches input order.
    pub fn encode_batch(
        &self,
        items: &[(&DataPoint, &CompanyRecord)],
        exec: Execution,
    ) -> Result<Vec<SemanticVector>, EmbedError> {
        let texts: Vec<&str> = items.iter().map(|(p, _)| p.paragraph.as_str()).collect();
        let blocks = self.texts(&texts, exec)?;
        blocks.into_iter().zip(items).map(|(t, (p, c))| self.assemble(t, c, p)).collect()
    }
}

/// Convenience wrapper over [`Encoder::encode`] with the given config.
pub fn encode(
    point: &DataPoint,
    company: &CompanyRecord,
    cfg: &EmbedderConfig,
    firms: &FirmClassifier,
) -> Result<SemanticVector, EmbedError> {
    Encoder::new(cfg.clone(), firms.clone())?.encode(point, company)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub point_id: String,
    pub vector: Vec<f64>,
}

/// `point_id -> vector` store persisted as NDJSON.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache {
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn load(path: &Path) -> Result<EmbeddingCache, crate::ndjson::NdjsonError> {
        let list: Vec<CacheEntry> = crate::ndjson::read_file(path)?;
        Ok(EmbeddingCache { entries: list.into_iter().map(|e| (e.point_id, e.vector)).collect() })
    }

    /// Entries are written sorted by point id.
    pub fn save(&self, path: &Path) -> Result<(), crate::ndjson::NdjsonError> {
        let mut list: Vec<CacheEntry> =
            self.entries.iter().map(|(k, v)| CacheEntry { point_id: k.clone(), vector: v.clone() }).collect();
        list.sort_by(|a, b| a.point_id.cmp(&b.point_id));
        crate::ndjson::write_file(path, &list)
    }

    pub fn get(&self, point_id: &str) -> Option<&[f64]> {
        self.entries.get(point_id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, point_id: String, vector: Vec<f64>) {
        self.entries.insert(point_id, vector);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails if any stored vector has the wrong length.
    pub fn check_dim(&self, dim: usize) -> Result<(), EmbedError> {
        match self.entries.values().find(|v| v.len() != dim) {
            Some(v) => Err(EmbedError::Dimension { expected: dim, got: v.len() }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{KeywordSource, Zone};
    use chrono::NaiveDate;
    use url::Url;

    fn firms() -> FirmClassifier {
        FirmClassifier::new(NaiveDate::from_ymd_opt(2021, 5, 1).unwrap())
    }

    fn company() -> CompanyRecord {
        CompanyRecord {
            company_id: "c1".into(),
            url: Url::parse("https://firm.de").unwrap(),
            employees: Some(5),
            incorporated: NaiveDate::from_ymd_opt(2017, 1, 1),
            nace: Some("C21".into()),
            region_id: Some("R1".into()),
            lat: None,
            lon: None,
            inno_score: None,
        }
    }

    fn point(text: &str, url: &str) -> DataPoint {
        DataPoint {
            point_id: "p1".into(),
            company_id: "c1".into(),
            page_url: Url::parse(url).unwrap(),
            keyword: "SLS".into(),
            keyword_source: KeywordSource::Research,
            paragraph: text.into(),
            ordinal: 0,
            zone: Zone::Content,
            char_offset: 0,
        }
    }

    #[test]
    fn default_dimension_is_1920() {
        let cfg = EmbedderConfig::default();
        let v = encode(&point("Wir bieten SLS an", "https://firm.de/"), &company(), &cfg, &firms()).unwrap();
        assert_eq!(v.dim(), 1920);
        let text_norm: f64 = v.values[..cfg.d_text].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((text_norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn documented_meta_indices() {
        // Micro, age 4 years (bucket 2), group 7 (Pharmaceuticals), depth 2, Research, Content.
        let cfg = EmbedderConfig::default();
        let m = embed_meta(&company(), &point("x", "https://firm.de/a/b"), &firms(), &cfg);
        let ones: Vec<usize> = m.iter().enumerate().filter(|(_, x)| **x == 1.0).map(|(i, _)| i).collect();
        assert_eq!(ones, [0, 6, 18, 46, 50, 53]);
        assert_eq!(m.len(), 128);
        assert_eq!(m.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn unknown_everything_hits_unknown_slots() {
        let mut c = company();
        c.employees = None;
        c.incorporated = None;
        c.nace = None;
        let ones = meta_slots(&c, &point("x", "https://firm.de/"), &firms());
        assert_eq!(&ones[..3], &[4, 11, 43]);
    }

    #[test]
    fn empty_text_gives_zero_text_block() {
        let cfg = EmbedderConfig::default();
        let v = encode(&point("", "https://firm.de/"), &company(), &cfg, &firms()).unwrap();
        assert!(v.values[..cfg.d_text].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn employee_change_only_touches_meta() {
        let cfg = EmbedderConfig::default();
        let p = point("3D-Druck Service", "https://firm.de/");
        let a = encode(&p, &company(), &cfg, &firms()).unwrap();
        let mut c = company();
        c.employees = Some(500);
        let b = encode(&p, &c, &cfg, &firms()).unwrap();
        let diff: Vec<usize> = (0..a.dim()).filter(|&i| a.values[i] != b.values[i]).collect();
        assert_eq!(diff, [cfg.d_text, cfg.d_text + 3]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EmbedderConfig { d_meta: 32, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(EmbedError::Config(_))));
        cfg.d_meta = 0;
        assert!(cfg.validate().is_ok());
        cfg.d_text = 4;
        assert!(cfg.validate().is_err());
        let ext = EmbedderConfig { provider: ProviderKind::ExternalService, ..Default::default() };
        assert!(ext.validate().is_err());
    }

    #[test]
    fn batch_matches_single_and_cache_checks_dims() {
        let cfg = EmbedderConfig { d_text: 64, d_meta: 64, ..Default::default() };
        let enc = Encoder::new(cfg, firms()).unwrap();
        let c = company();
        let pts = [point("a b c", "https://firm.de/"), point("SLS Druck", "https://firm.de/x")];
        let items: Vec<_> = pts.iter().map(|p| (p, &c)).collect();
        let batch = enc.encode_batch(&items, Execution::Parallel).unwrap();
        for (p, v) in pts.iter().zip(&batch) {
            assert_eq!(&enc.encode(p, &c).unwrap(), v);
        }
        let mut cache = EmbeddingCache::default();
        cache.insert("p".into(), vec![0.0; 128]);
        assert!(cache.check_dim(128).is_ok());
        assert_eq!(cache.check_dim(64), Err(EmbedError::Dimension { expected: 64, got: 128 }));
    }
}
