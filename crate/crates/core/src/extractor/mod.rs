//! Keyword-in-context extraction: zoning, matching, boilerplate filtering
//! and sampling of data points for manual labeling.

mod html;
mod lexicon;
mod matcher;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

pub use html::{extract_paragraphs, normalize_whitespace};
pub use lexicon::{Keyword, KeywordSource, KeywordStatus, Lexicon, LexiconError};
pub use matcher::{fold, fold_char, is_word_char, Hit, KeywordMatcher};

use crate::fetcher::WebPage;
use crate::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    Content,
    Menu,
    Header,
    Footer,
    Signature,
    Script,
    Other,
}

impl Zone {
    pub const ALL: [Zone; 7] =
        [Zone::Content, Zone::Menu, Zone::Header, Zone::Footer, Zone::Signature, Zone::Script, Zone::Other];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub company_id: String,
    pub page_url: Url,
    pub zone: Zone,
    pub text: String,
    pub ordinal: u32,
}

/// One keyword occurrence in one paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    pub point_id: String,
    pub company_id: String,
    pub page_url: Url,
    pub keyword: String,
    pub keyword_source: KeywordSource,
    pub paragraph: String,
    pub ordinal: u32,
    pub zone: Zone,
    /// Start of the match in chars (Unicode scalar values) within `paragraph`.
    pub char_offset: usize,
}

impl DataPoint {
    /// The matched slice of the paragraph.
    pub fn matched_text(&self) -> String {
        self.paragraph.chars().skip(self.char_offset).take(self.keyword.chars().count()).collect()
    }

    pub fn sort_key(&self) -> (&str, &str, u32, usize, &str) {
        (&self.company_id, self.page_url.as_str(), self.ordinal, self.char_offset, &self.keyword)
    }
}

/// Stable identifier of a (company, page, paragraph, offset, keyword) occurrence.
pub fn point_id(company_id: &str, page_url: &str, ordinal: u32, offset: usize, keyword: &str) -> String {
    let mut h = Sha256::new();
    for part in [company_id, page_url, &ordinal.to_string(), &offset.to_string(), keyword] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Emits one data point per accepted hit of an active keyword.
pub fn match_keywords(paragraphs: &[Paragraph], matcher: &KeywordMatcher) -> Vec<DataPoint> {
    let mut out = Vec::new();
    for p in paragraphs {
        for hit in matcher.find(&p.text) {
            let kw = &matcher.keywords()[hit.keyword];
            out.push(DataPoint {
                point_id: point_id(&p.company_id, p.page_url.as_str(), p.ordinal, hit.char_offset, &kw.surface),
                company_id: p.company_id.clone(),
                page_url: p.page_url.clone(),
                keyword: kw.surface.clone(),
                keyword_source: kw.source,
                paragraph: p.text.clone(),
                ordinal: p.ordinal,
                zone: p.zone,
                char_offset: hit.char_offset,
            });
        }
    }
    out
}

/// Paragraphs and data points for many pages, merged in
/// (company, page, ordinal, offset, keyword) order.
pub fn extract_all(pages: &[WebPage], matcher: &KeywordMatcher, exec: Execution) -> Vec<DataPoint> {
    let per_page = exec.map(pages, |p| match_keywords(&extract_paragraphs(p), matcher));
    let mut all: Vec<DataPoint> = per_page.into_iter().flatten().collect();
    all.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    all.dedup_by(|a, b| a.point_id == b.point_id);
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    NonContent,
    KeywordRemoved,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NonContent => "non-content",
            DropReason::KeywordRemoved => "keyword-removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPoint {
    pub point: DataPoint,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_non_content: usize,
    pub dropped_keyword_removed: usize,
    /// Drops per zone for non-content points.
    pub by_zone: BTreeMap<String, usize>,
    /// Drops per keyword for removed keywords.
    pub by_keyword: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<DataPoint>,
    pub dropped: Vec<DroppedPoint>,
    pub report: FilterReport,
}

/// Drops boilerplate-zone points, then points whose keyword the lexicon marks
/// removed. A point failing both checks is reported as non-content.
pub fn filter_data_points(points: Vec<DataPoint>, lexicon: &Lexicon) -> FilterOutcome {
    let mut out = FilterOutcome { report: FilterReport { input: points.len(), ..Default::default() }, ..Default::default() };
    for p in points {
        let reason = if p.zone != Zone::Content {
            Some(DropReason::NonContent)
        } else if lexicon.get(&p.keyword).is_some_and(|k| k.status == KeywordStatus::Removed) {
            Some(DropReason::KeywordRemoved)
        } else {
            None
        };
        match reason {
            None => out.kept.push(p),
            Some(reason) => {
                match reason {
                    DropReason::NonContent => {
                        out.report.dropped_non_content += 1;
                        *out.report.by_zone.entry(format!("{:?}", p.zone)).or_default() += 1;
                    }
                    DropReason::KeywordRemoved => {
                        out.report.dropped_keyword_removed += 1;
                        *out.report.by_keyword.entry(p.keyword.clone()).or_default() += 1;
                    }
                }
                out.dropped.push(DroppedPoint { point: p, reason });
            }
        }
    }
    out.report.kept = out.kept.len();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("requested {requested} points but only {available} are available")]
pub struct SampleError {
    pub requested: usize,
    pub available: usize,
}

/// Uniform sample without replacement, reproducible from `seed`, disjoint
/// from `exclude` (a set of point ids).
pub fn sample_for_labeling(
    points: &[DataPoint],
    n: usize,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<Vec<DataPoint>, SampleError> {
    let mut pool: Vec<&DataPoint> = points.iter().filter(|p| !exclude.contains(&p.point_id)).collect();
    if n > pool.len() {
        return Err(SampleError { requested: n, available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, n);
    Ok(chosen.iter().map(|p| (*p).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;

    fn page(body: &str) -> WebPage {
        WebPage {
            company_id: "c1".into(),
            page_url: Url::parse("https://firm.de/").unwrap(),
            fetched_at: DateTime::UNIX_EPOCH,
            status: 200,
            body: body.into(),
            depth: 0,
        }
    }

    fn lexicon() -> Lexicon {
        Lexicon::new(vec![
            Keyword::active("Lasersintern", KeywordSource::Vdi),
            Keyword::active("SLS", KeywordSource::Research),
            Keyword::new("Prototyping", KeywordStatus::Active, KeywordSource::Consulting),
        ])
        .unwrap()
    }

    fn points(body: &str) -> Vec<DataPoint> {
        let m = KeywordMatcher::new(&lexicon());
        match_keywords(&extract_paragraphs(&page(body)), &m)
    }

    #[test]
    fn one_point_per_keyword_occurrence() {
        let pts = points("<p>Wir bieten Lasersintern an</p>");
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].char_offset, 11);
        assert_eq!(pts[0].matched_text(), "Lasersintern");

        let pts = points("<p>Lasersintern (SLS) und Prototyping</p>");
        assert_eq!(pts.iter().map(|p| p.keyword.as_str()).collect::<Vec<_>>(), ["Lasersintern", "SLS", "Prototyping"]);
        let ids: HashSet<_> = pts.iter().map(|p| &p.point_id).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn filter_cases() {
        let mut lx = lexicon();
        let content = points("<p>SLS und Lasersintern</p>");
        let out = filter_data_points(content.clone(), &lx);
        assert_eq!(out.kept, content);
        assert!(out.dropped.is_empty());

        let menu = points("<nav><li>SLS</li></nav>");
        let out = filter_data_points(menu, &lx);
        assert!(out.kept.is_empty());
        assert_eq!(out.dropped[0].reason.as_str(), "non-content");

        lx.remove("Prototyping");
        let out = filter_data_points(points("<p>Prototyping</p>"), &lx);
        assert_eq!(out.dropped[0].reason.as_str(), "keyword-removed");
        assert_eq!(out.report.by_keyword["Prototyping"], 1);
    }

    fn synthetic(n: usize) -> Vec<DataPoint> {
        (0..n)
            .map(|i| DataPoint {
                point_id: format!("p{i:05}"),
                company_id: format!("c{}", i % 7),
                page_url: Url::parse("https://x.de/").unwrap(),
                keyword: "SLS".into(),
                keyword_source: KeywordSource::Research,
                paragraph: "SLS".into(),
                ordinal: i as u32,
                zone: Zone::Content,
                char_offset: 0,
            })
            .collect()
    }

    #[test]
    fn sampling_contracts() {
        let pts = synthetic(4000);
        let all = sample_for_labeling(&pts, pts.len(), 1, &HashSet::new()).unwrap();
        let mut ids: Vec<_> = all.iter().map(|p| p.point_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, pts.iter().map(|p| p.point_id.clone()).collect::<Vec<_>>());

        let a = sample_for_labeling(&pts, 750, 42, &HashSet::new()).unwrap();
        let b = sample_for_labeling(&pts, 750, 42, &HashSet::new()).unwrap();
        assert_eq!(a, b);

        let first: HashSet<String> = a.iter().map(|p| p.point_id.clone()).collect();
        let second = sample_for_labeling(&pts, 3000, 43, &first).unwrap();
        assert!(second.iter().all(|p| !first.contains(&p.point_id)));

        let err = sample_for_labeling(&pts, 3251, 1, &first).unwrap_err();
        assert_eq!(err, SampleError { requested: 3251, available: 3250 });
    }
}
