//! HTML zoning and paragraph segmentation.

use ego_tree::NodeRef;
use scraper::{Html, Node};

use super::{Paragraph, Zone};
use crate::fetcher::WebPage;

const SKIPPED: &[&str] = &["script", "style", "noscript", "template", "svg", "iframe", "head", "title"];

/// Elements that start a new text run. Anything else is treated as inline.
const BLOCKS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "br", "caption", "dd", "details", "dialog", "div", "dl", "dt",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "html",
    "li", "main", "menu", "nav", "ol", "p", "pre", "section", "summary", "table", "tbody", "td", "tfoot", "th",
    "thead", "tr", "ul",
];

const MARKERS: &[(&str, Zone)] = &[
    ("breadcrumb", Zone::Menu),
    ("nav", Zone::Menu),
    ("menu", Zone::Menu),
    ("footer", Zone::Footer),
    ("header", Zone::Header),
    ("signature", Zone::Signature),
    ("cookie", Zone::Other),
];

/// Zone implied by a class/id value: a token (split on whitespace, `-`, `_`)
/// that starts or ends with one of the boilerplate markers.
fn marker_zone(value: &str) -> Option<Zone> {
    let lower = value.to_lowercase();
    for token in lower.split(|c: char| c.is_whitespace() || c == '-' || c == '_').filter(|t| !t.is_empty()) {
        for (m, z) in MARKERS {
            if token.starts_with(m) || token.ends_with(m) {
                return Some(*z);
            }
        }
    }
    None
}

fn element_zone(el: &scraper::node::Element) -> Option<Zone> {
    let by_tag = match el.name() {
        "nav" | "menu" => Some(Zone::Menu),
        "header" => Some(Zone::Header),
        "footer" => Some(Zone::Footer),
        "aside" => Some(Zone::Other),
        _ => None,
    };
    by_tag
        .or_else(|| el.attr("class").and_then(marker_zone))
        .or_else(|| el.id().and_then(marker_zone))
}

struct Segmenter<'p> {
    page: &'p WebPage,
    out: Vec<Paragraph>,
    buf: String,
    buf_zone: Zone,
}

impl Segmenter<'_> {
    fn flush(&mut self) {
        let text = normalize_whitespace(&self.buf);
        self.buf.clear();
        if text.is_empty() {
            return;
        }
        self.out.push(Paragraph {
            company_id: self.page.company_id.clone(),
            page_url: self.page.page_url.clone(),
            zone: self.buf_zone,
            text,
            ordinal: self.out.len() as u32,
        });
    }

    fn walk(&mut self, node: NodeRef<'_, Node>, zone: Zone) {
        for child in node.children() {
            match child.value() {
                Node::Text(t) => {
                    if self.buf.trim().is_empty() {
                        self.buf_zone = zone;
                    }
                    self.buf.push_str(t);
                }
                Node::Element(el) => {
                    let name = el.name();
                    if SKIPPED.contains(&name) {
                        continue;
                    }
                    let own = if zone == Zone::Content { element_zone(el) } else { None };
                    let child_zone = own.unwrap_or(zone);
                    let block = own.is_some() || BLOCKS.contains(&name);
                    if block {
                        self.flush();
                    }
                    self.walk(child, child_zone);
                    if block {
                        self.flush();
                    } else {
                        self.buf.push(' ');
                    }
                }
                _ => {}
            }
        }
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a page into zoned plain-text paragraphs in document order.
///
/// Text runs are cut at every block-level boundary, so a `div` yields its own
/// paragraph only where it holds text directly (leaf divs). Script and style
/// content is never emitted. Once inside a non-content zone, descendants keep
/// that outermost zone.
pub fn extract_paragraphs(page: &WebPage) -> Vec<Paragraph> {
    if page.body.trim().is_empty() {
        return Vec::new();
    }
    if page.body.contains('\u{FFFD}') && page.body.chars().filter(|c| *c == '\u{FFFD}').count() * 4 > page.body.len() {
        tracing::warn!(url = %page.page_url, "body looks undecodable, skipping");
        return Vec::new();
    }
    let doc = Html::parse_document(&page.body);
    let mut seg = Segmenter { page, out: Vec::new(), buf: String::new(), buf_zone: Zone::Content };
    seg.walk(doc.tree.root(), Zone::Content);
    seg.flush();
    seg.out
}
