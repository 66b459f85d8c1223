//! Website retrieval: polite breadth-first crawling of one company site.

mod domain;
mod robots;
mod transport;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

pub use domain::{registrable_domain, same_site, url_domain};
pub use robots::Robots;
pub use transport::{
    canonical_url, user_agent, ArchiveError, ArchiveTransport, LiveTransport, ManifestEntry, RawResponse,
    Transport, TransportError, AGENT_TOKEN,
};

use crate::registry::CompanyRecord;
use crate::Execution;

pub const MAX_REDIRECTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebPage {
    pub company_id: String,
    pub page_url: Url,
    pub fetched_at: DateTime<Utc>,
    pub status: u16,
    pub body: String,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlPolicy {
    pub max_depth: u32,
    pub max_pages_per_site: usize,
    pub per_host_delay_ms: u64,
    pub global_concurrency: usize,
    pub obey_robots: bool,
    pub timeout_ms: u64,
}

impl Default for CrawlPolicy {
    fn default() -> Self {
        CrawlPolicy {
            max_depth: 2,
            max_pages_per_site: 50,
            per_host_delay_ms: 1000,
            global_concurrency: 8,
            obey_robots: true,
            timeout_ms: 15_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("{0} must be strictly positive")]
    NotPositive(&'static str),
}

impl CrawlPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let checks = [
            (self.max_pages_per_site as u64, "max_pages_per_site"),
            (self.per_host_delay_ms, "per_host_delay_ms"),
            (self.global_concurrency as u64, "global_concurrency"),
            (self.timeout_ms, "timeout_ms"),
        ];
        match checks.iter().find(|(v, _)| *v == 0) {
            Some((_, name)) => Err(PolicyError::NotPositive(name)),
            None => Ok(()),
        }
    }

    pub fn delay(&self) -> Duration {
        Duration::from_millis(self.per_host_delay_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FetchError {
    #[error("http status {status}")]
    Status { status: u16 },
    #[error("timeout")]
    Timeout,
    #[error("redirect to {location} leaves the site")]
    OffDomain { location: String },
    #[error("more than {MAX_REDIRECTS} redirects")]
    TooManyRedirects,
    #[error("redirect without valid location")]
    BadRedirect,
    #[error("{message}")]
    Transport { message: String },
}

impl From<TransportError> for FetchError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => FetchError::Timeout,
            other => FetchError::Transport { message: other.to_string() },
        }
    }
}

/// One request made while crawling, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchAttempt {
    pub url: String,
    pub host: String,
    pub depth: u32,
    /// Microseconds since the pacer was created; monotonic.
    pub started_us: u64,
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Ok { status: u16, final_url: String },
    Failed { error: FetchError },
    RobotsDisallowed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlLog {
    pub company_id: String,
    pub attempts: Vec<FetchAttempt>,
    pub site_error: Option<String>,
}

/// Serialises request start times per host so consecutive starts are at
/// least `delay` apart, across all threads sharing the pacer.
#[derive(Debug)]
pub struct HostPacer {
    delay: Duration,
    epoch: Instant,
    hosts: Mutex<HashMap<String, Arc<Mutex<Option<Instant>>>>>,
}

impl HostPacer {
    pub fn new(delay: Duration) -> HostPacer {
        HostPacer { delay, epoch: Instant::now(), hosts: Mutex::new(HashMap::new()) }
    }

    /// Blocks until this host may be contacted; returns the start offset in µs.
    ///
    /// The host's lock is held while waiting, and the recorded start is the
    /// measured one, so logged gaps are never shorter than the delay.
    pub fn acquire(&self, host: &str) -> u64 {
        let slot = {
            let mut hosts = self.hosts.lock().expect("pacer lock poisoned");
            Arc::clone(hosts.entry(host.to_string()).or_default())
        };
        let mut last = slot.lock().expect("pacer lock poisoned");
        if let Some(prev) = *last {
            let ready = prev + self.delay;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        let start = Instant::now();
        *last = Some(start);
        start.duration_since(self.epoch).as_micros() as u64
    }
}

/// Decodes a body using the declared or sniffed charset, UTF-8 first.
pub fn decode_body(bytes: &[u8], content_type: Option<&str>) -> String {
    let declared = content_type
        .and_then(charset_param)
        .or_else(|| sniff_meta_charset(&bytes[..bytes.len().min(2048)]));
    if let Some(enc) = declared.and_then(|l| encoding_rs::Encoding::for_label(l.as_bytes())) {
        if enc != encoding_rs::UTF_8 {
            return enc.decode(bytes).0.into_owned();
        }
    }
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => encoding_rs::WINDOWS_1252.decode(bytes).0.into_owned(),
    }
}

fn charset_param(ct: &str) -> Option<String> {
    ct.split(';').skip(1).find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim().eq_ignore_ascii_case("charset").then(|| v.trim().trim_matches('"').to_string())
    })
}

fn sniff_meta_charset(head: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(head).to_ascii_lowercase();
    let i = text.find("charset=")? + "charset=".len();
    let rest = text[i..].trim_start_matches(['"', '\'']);
    let label: String = rest.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '-' || *c == '_').collect();
    (!label.is_empty()).then_some(label)
}

fn host_key(url: &Url) -> String {
    url.host_str().unwrap_or("").to_ascii_lowercase()
}

/// Fetches one URL, following up to five same-site redirects.
///
/// The returned page has an empty `company_id` and depth 0; crawlers fill those in.
pub fn fetch_page(url: &Url, transport: &dyn Transport, pacer: &HostPacer) -> (Result<WebPage, FetchError>, Vec<u64>) {
    let mut current = url.clone();
    let mut starts = Vec::new();
    for _ in 0..=MAX_REDIRECTS {
        starts.push(pacer.acquire(&host_key(&current)));
        let resp = match transport.get(&current) {
            Ok(r) => r,
            Err(e) => return (Err(e.into()), starts),
        };
        match resp.status {
            200..=299 => {
                let body = decode_body(&resp.body, resp.content_type.as_deref());
                let mut page_url = current;
                page_url.set_fragment(None);
                let page = WebPage {
                    company_id: String::new(),
                    page_url,
                    fetched_at: resp.fetched_at,
                    status: resp.status,
                    body,
                    depth: 0,
                };
                return (Ok(page), starts);
            }
            301 | 302 | 303 | 307 | 308 => {
                let Some(next) = resp.location.as_deref().and_then(|l| current.join(l).ok()) else {
                    return (Err(FetchError::BadRedirect), starts);
                };
                if !same_site(url, &next) {
                    return (Err(FetchError::OffDomain { location: next.to_string() }), starts);
                }
                current = next;
            }
            status => return (Err(FetchError::Status { status }), starts),
        }
    }
    (Err(FetchError::TooManyRedirects), starts)
}

/// Absolute http(s) links from anchor hrefs, fragments stripped.
pub fn extract_links(page_url: &Url, html: &str) -> Vec<Url> {
    let doc = scraper::Html::parse_document(html);
    let sel = scraper::Selector::parse("a[href]").expect("static selector");
    doc.select(&sel)
        .filter_map(|a| a.value().attr("href"))
        .filter_map(|href| page_url.join(href.trim()).ok())
        .filter(|u| matches!(u.scheme(), "http" | "https"))
        .map(|mut u| {
            u.set_fragment(None);
            u
        })
        .collect()
}

fn robots_for(site: &Url, transport: &dyn Transport, pacer: &HostPacer, log: &mut CrawlLog) -> Robots {
    let Ok(robots_url) = site.join("/robots.txt") else {
        return Robots::allow_all();
    };
    let (res, starts) = fetch_page(&robots_url, transport, pacer);
    log.attempts.push(FetchAttempt {
        url: robots_url.to_string(),
        host: host_key(&robots_url),
        depth: 0,
        started_us: starts[0],
        outcome: match &res {
            Ok(p) => AttemptOutcome::Ok { status: p.status, final_url: p.page_url.to_string() },
            Err(e) => AttemptOutcome::Failed { error: e.clone() },
        },
    });
    match res {
        Ok(p) => Robots::parse(&p.body, AGENT_TOKEN),
        Err(_) => Robots::allow_all(),
    }
}

fn robots_path(u: &Url) -> String {
    match u.query() {
        Some(q) => format!("{}?{}", u.path(), q),
        None => u.path().to_string(),
    }
}

/// Breadth-first crawl of one company site.
///
/// Within a depth level URLs are visited in lexicographic order. Only links
/// on the company's registrable domain are followed.
pub fn crawl_site(
    company: &CompanyRecord,
    policy: &CrawlPolicy,
    transport: &dyn Transport,
    pacer: &HostPacer,
) -> (Vec<WebPage>, CrawlLog) {
    let mut log = CrawlLog { company_id: company.company_id.clone(), ..Default::default() };
    let mut pages = Vec::new();
    let mut landing = company.url.clone();
    landing.set_fragment(None);
    let robots = if policy.obey_robots { robots_for(&landing, transport, pacer, &mut log) } else { Robots::allow_all() };

    let mut seen: HashSet<String> = HashSet::new();
    let mut level: BTreeSet<String> = BTreeSet::new();
    seen.insert(landing.to_string());
    level.insert(landing.to_string());
    let mut depth = 0;
    'levels: while !level.is_empty() && depth <= policy.max_depth {
        let mut next: BTreeSet<String> = BTreeSet::new();
        for raw in &level {
            if pages.len() >= policy.max_pages_per_site {
                break 'levels;
            }
            let url = Url::parse(raw).expect("frontier holds parsed URLs");
            if !robots.is_allowed(&robots_path(&url)) {
                log.attempts.push(FetchAttempt {
                    url: raw.clone(),
                    host: host_key(&url),
                    depth,
                    started_us: 0,
                    outcome: AttemptOutcome::RobotsDisallowed,
                });
                continue;
            }
            let (res, starts) = fetch_page(&url, transport, pacer);
            let outcome = match &res {
                Ok(p) => AttemptOutcome::Ok { status: p.status, final_url: p.page_url.to_string() },
                Err(e) => AttemptOutcome::Failed { error: e.clone() },
            };
            log.attempts.push(FetchAttempt { url: raw.clone(), host: host_key(&url), depth, started_us: starts[0], outcome });
            let Ok(mut page) = res else {
                continue;
            };
            let final_key = page.page_url.to_string();
            if final_key != *raw && !seen.insert(final_key) {
                continue;
            }
            if !same_site(&landing, &page.page_url) {
                continue;
            }
            if depth < policy.max_depth {
                for link in extract_links(&page.page_url, &page.body) {
                    if same_site(&landing, &link) && seen.insert(link.to_string()) {
                        next.insert(link.to_string());
                    }
                }
            }
            page.company_id = company.company_id.clone();
            page.depth = depth;
            pages.push(page);
        }
        level = next;
        depth += 1;
    }
    if pages.is_empty() {
        let reason = log
            .attempts
            .iter()
            .find(|a| a.url == landing.as_str())
            .map(|a| match &a.outcome {
                AttemptOutcome::Failed { error } => error.to_string(),
                AttemptOutcome::RobotsDisallowed => "landing page disallowed by robots.txt".into(),
                AttemptOutcome::Ok { .. } => "landing page outside site".into(),
            })
            .unwrap_or_else(|| "landing page unreachable".into());
        log.site_error = Some(reason);
    }
    (pages, log)
}

/// Crawls many sites with a shared per-host pacer. Output order follows `companies`.
pub fn crawl_all(
    companies: &[CompanyRecord],
    policy: &CrawlPolicy,
    transport: &dyn Transport,
    exec: Execution,
) -> Vec<(Vec<WebPage>, CrawlLog)> {
    let pacer = HostPacer::new(policy.delay());
    let run = || exec.map(companies, |c| crawl_site(c, policy, transport, &pacer));
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(policy.global_concurrency).build() {
            return pool.install(run);
        }
    }
    run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_validation() {
        assert!(CrawlPolicy::default().validate().is_ok());
        let p = CrawlPolicy { global_concurrency: 0, ..Default::default() };
        assert_eq!(p.validate(), Err(PolicyError::NotPositive("global_concurrency")));
        let p = CrawlPolicy { max_depth: 0, ..Default::default() };
        assert!(p.validate().is_ok());
    }

    #[test]
    fn charset_handling() {
        let latin1 = b"Gr\xfc\xdfe";
        assert_eq!(decode_body(latin1, Some("text/html; charset=ISO-8859-1")), "Grüße");
        assert_eq!(decode_body(latin1, None), "Grüße");
        assert_eq!(decode_body("Grüße".as_bytes(), None), "Grüße");
        let meta = b"<meta charset=\"iso-8859-1\"><p>\xfc</p>";
        assert!(decode_body(meta, None).contains('ü'));
    }

    #[test]
    fn links_are_resolved_and_stripped() {
        let base = Url::parse("https://firm.de/a/index.html").unwrap();
        let html = r##"<a href="b.html#top">x</a><a href="/c?q=1">y</a><a href="mailto:x@y">z</a><a href="#">s</a>"##;
        let links: Vec<String> = extract_links(&base, html).iter().map(|u| u.to_string()).collect();
        assert_eq!(links, ["https://firm.de/a/b.html", "https://firm.de/c?q=1", "https://firm.de/a/index.html"]);
    }

    #[test]
    fn pacer_spaces_requests() {
        let p = HostPacer::new(Duration::from_millis(15));
        let a = p.acquire("h");
        let b = p.acquire("h");
        let c = p.acquire("other");
        assert!(b - a >= 15_000);
        assert!(c - b < 15_000, "other hosts are not delayed");
    }
}
