//! Run manifest: which stage read and wrote which artifact bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "techradar-manifest/1";

/// sha256 of a file, or of a directory tree as the digest over its sorted
/// `(relative path, file digest)` pairs.
pub fn digest_path(path: &Path) -> Result<String, PipelineError> {
    let meta = std::fs::metadata(path).map_err(|e| PipelineError::io(path, e))?;
    if !meta.is_dir() {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        return Ok(hex::encode(Sha256::digest(&bytes)));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let d = digest_path(&path.join(&rel))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(d.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), PipelineError> {
    for entry in std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walk stays below root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Digest of any serializable value through its canonical JSON text.
pub fn digest_value<T: Serialize>(v: &T) -> String {
    let text = serde_json::to_vec(v).expect("serializable");
    hex::encode(Sha256::digest(&text))
}

/// Writes `bytes` to a sibling temp file, fsyncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| PipelineError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// Relative to the data directory when the artifact lives inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Digest of the stage's effective parameters.
    pub params_digest: String,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    /// Counts and notes reported by the stage.
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    /// One record per stage, in first-run order; a rerun replaces its record.
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seeds: BTreeMap<String, u64>) -> RunManifest {
        let now = Utc::now();
        let nonce = digest_value(&(now.timestamp_nanos_opt(), std::process::id()));
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            run_id: format!("{}-{}", now.format("%Y%m%dT%H%M%SZ"), &nonce[..8]),
            created_at: now,
            updated_at: now,
            config_digest: digest_value(&config),
            config,
            seeds,
            stages: Vec::new(),
        }
    }

    /// `Ok(None)` if no manifest exists yet.
    pub fn load(path: &Path) -> Result<Option<RunManifest>, PipelineError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_vec_pretty(self).expect("serializable");
        text.push(b'\n');
        write_atomic(path, &text)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        self.updated_at = record.finished_at;
        match self.stages.iter_mut().find(|s| s.stage == record.stage) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    /// Replaces the config snapshot; stage records are kept.
    pub fn set_config(&mut self, config: serde_json::Value, seeds: BTreeMap<String, u64>) {
        self.config_digest = digest_value(&config);
        self.config = config;
        self.seeds = seeds;
    }
}

/// Path as recorded in the manifest.
pub fn display_path(data_dir: &Path, p: &Path) -> String {
    let rel: PathBuf = p.strip_prefix(data_dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    rel.to_string_lossy().replace('\\', "/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_digest_ignores_listing_order_but_not_content() {
        let a = tempfile::tempdir().unwrap();
        std::fs::create_dir(a.path().join("sub")).unwrap();
        std::fs::write(a.path().join("x.txt"), "x").unwrap();
        std::fs::write(a.path().join("sub/y.txt"), "y").unwrap();
        let b = tempfile::tempdir().unwrap();
        std::fs::write(b.path().join("x.txt"), "x").unwrap();
        std::fs::create_dir(b.path().join("sub")).unwrap();
        std::fs::write(b.path().join("sub/y.txt"), "y").unwrap();
        assert_eq!(digest_path(a.path()).unwrap(), digest_path(b.path()).unwrap());
        std::fs::write(b.path().join("sub/y.txt"), "Y").unwrap();
        assert_ne!(digest_path(a.path()).unwrap(), digest_path(b.path()).unwrap());
    }

    #[test]
    fn file_digest_is_sha256() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(digest_path(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
    }

    #[test]
    fn upsert_replaces_in_place() {
        let mut m = RunManifest::new(serde_json::json!({}), BTreeMap::new());
        let rec = |name: &str, n: u64| StageRecord {
            stage: name.into(),
            params_digest: String::new(),
            inputs: vec![],
            outputs: vec![],
            started_at: Utc::now(),
            finished_at: Utc::now(),
            summary: serde_json::json!({ "n": n }),
        };
        m.upsert(rec("ingest", 1));
        m.upsert(rec("fetch", 1));
        m.upsert(rec("ingest", 2));
        assert_eq!(m.stages.iter().map(|s| s.stage.as_str()).collect::<Vec<_>>(), ["ingest", "fetch"]);
        assert_eq!(m.stage("ingest").unwrap().summary["n"], 2);
    }
}
