//! Page transports: an offline archive and live HTTP.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

/// One raw HTTP-like exchange. Redirects are not followed by transports.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub status: u16,
    pub location: Option<String>,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("not in archive")]
    NotArchived,
    #[error("connection failed: {0}")]
    Connect(String),
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &Url) -> Result<RawResponse, TransportError>;
}

/// Key used for archive lookups: fragment removed, otherwise the parsed URL.
pub fn canonical_url(url: &Url) -> String {
    let mut u = url.clone();
    u.set_fragment(None);
    u.to_string()
}

/// One line of an archive `manifest.ndjson`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetched_at: Option<DateTime<Utc>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive manifest: {0}")]
    Manifest(#[from] crate::ndjson::NdjsonError),
    #[error("manifest url {0:?} is not a valid URL")]
    BadUrl(String),
}

/// A directory holding `manifest.ndjson` plus the stored bodies it names.
#[derive(Debug, Clone)]
pub struct ArchiveTransport {
    root: PathBuf,
    entries: HashMap<String, ManifestEntry>,
}

impl ArchiveTransport {
    pub const MANIFEST: &'static str = "manifest.ndjson";

    pub fn open(root: impl AsRef<Path>) -> Result<ArchiveTransport, ArchiveError> {
        let root = root.as_ref().to_path_buf();
        let list: Vec<ManifestEntry> = crate::ndjson::read_file(&root.join(Self::MANIFEST))?;
        let mut entries = HashMap::new();
        for e in list {
            let u = Url::parse(&e.url).map_err(|_| ArchiveError::BadUrl(e.url.clone()))?;
            entries.insert(canonical_url(&u), e);
        }
        Ok(ArchiveTransport { root, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transport for ArchiveTransport {
    fn get(&self, url: &Url) -> Result<RawResponse, TransportError> {
        let e = self.entries.get(&canonical_url(url)).ok_or(TransportError::NotArchived)?;
        let body = match &e.file {
            Some(f) => std::fs::read(self.root.join(f)).map_err(|err| TransportError::Connect(err.to_string()))?,
            None => Vec::new(),
        };
        Ok(RawResponse {
            status: e.status,
            location: e.location.clone(),
            content_type: e.content_type.clone(),
            body,
            fetched_at: e.fetched_at.unwrap_or(DateTime::UNIX_EPOCH),
        })
    }
}

pub fn user_agent(contact: &str) -> String {
    format!("techradar-crawler/{} (+{})", env!("CARGO_PKG_VERSION"), contact)
}

pub const AGENT_TOKEN: &str = "techradar-crawler";

const MAX_BODY: u64 = 8 * 1024 * 1024;

/// Blocking HTTP transport. Redirects are surfaced, not followed.
pub struct LiveTransport {
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(timeout: Duration, contact: &str) -> LiveTransport {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .max_redirects(0)
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(user_agent(contact))
            .build()
            .into();
        LiveTransport { agent }
    }
}

impl Transport for LiveTransport {
    fn get(&self, url: &Url) -> Result<RawResponse, TransportError> {
        let mut resp = self.agent.get(url.as_str()).call().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connect(other.to_string()),
        })?;
        let header = |name: &str| resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
        let location = header("location");
        let content_type = header("content-type");
        let status = resp.status().as_u16();
        let mut body = Vec::new();
        resp.body_mut()
            .as_reader()
            .take(MAX_BODY)
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(RawResponse { status, location, content_type, body, fetched_at: Utc::now() })
    }
}
