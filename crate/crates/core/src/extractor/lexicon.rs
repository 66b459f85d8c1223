//! Technology keyword lexicon.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::matcher::fold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordStatus {
    Active,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeywordSource {
    #[serde(rename = "ASTM")]
    Astm,
    #[serde(rename = "VDI")]
    Vdi,
    Research,
    Consulting,
    Custom,
}

impl KeywordSource {
    pub const ALL: [KeywordSource; 5] =
        [KeywordSource::Astm, KeywordSource::Vdi, KeywordSource::Research, KeywordSource::Consulting, KeywordSource::Custom];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub surface: String,
    pub status: KeywordStatus,
    pub source: KeywordSource,
}

impl Keyword {
    pub fn new(surface: &str, status: KeywordStatus, source: KeywordSource) -> Keyword {
        Keyword { surface: surface.to_string(), status, source }
    }

    pub fn active(surface: &str, source: KeywordSource) -> Keyword {
        Keyword::new(surface, KeywordStatus::Active, source)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {0}: empty keyword surface")]
    Empty(usize),
    #[error("keyword {0:?} listed twice (case-insensitive)")]
    Duplicate(String),
    #[error("lexicon has no keywords")]
    NoKeywords,
}

/// A validated keyword list: non-empty, surfaces unique under case folding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    keywords: Vec<Keyword>,
}

impl Lexicon {
    pub fn new(keywords: Vec<Keyword>) -> Result<Lexicon, LexiconError> {
        if keywords.is_empty() {
            return Err(LexiconError::NoKeywords);
        }
        let mut seen = HashSet::new();
        for (i, k) in keywords.iter().enumerate() {
            if k.surface.trim().is_empty() {
                return Err(LexiconError::Empty(i + 2));
            }
            if !seen.insert(fold(&k.surface)) {
                return Err(LexiconError::Duplicate(k.surface.clone()));
            }
        }
        Ok(Lexicon { keywords })
    }

    /// CSV with columns `surface,status,source`.
    pub fn from_csv<R: Read>(input: R) -> Result<Lexicon, LexiconError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
        let mut keywords = Vec::new();
        for row in rdr.deserialize::<Keyword>() {
            keywords.push(row?);
        }
        Lexicon::new(keywords)
    }

    pub fn to_csv(&self) -> Result<String, LexiconError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for k in &self.keywords {
            w.serialize(k)?;
        }
        let bytes = w.into_inner().map_err(|e| LexiconError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    pub fn get(&self, surface: &str) -> Option<&Keyword> {
        let f = fold(surface);
        self.keywords.iter().find(|k| fold(&k.surface) == f)
    }

    /// Marks a keyword as removed; returns false if it is not in the lexicon.
    pub fn remove(&mut self, surface: &str) -> bool {
        let f = fold(surface);
        match self.keywords.iter_mut().find(|k| fold(&k.surface) == f) {
            Some(k) => {
                k.status = KeywordStatus::Removed;
                true
            }
            None => false,
        }
    }

    /// A small illustrative German/English additive-manufacturing lexicon.
    pub fn builtin() -> Lexicon {
        use KeywordSource::*;
        use KeywordStatus::*;
        let rows = [
            ("additive manufacturing", Active, Astm),
            ("3D printing", Active, Astm),
            ("binder jetting", Active, Astm),
            ("material extrusion", Active, Astm),
            ("powder bed fusion", Active, Astm),
            ("vat photopolymerization", Active, Astm),
            ("directed energy deposition", Active, Astm),
            ("additive Fertigung", Active, Vdi),
            ("3D-Druck", Active, Vdi),
            ("3D Druck", Active, Vdi),
            ("Lasersintern", Active, Vdi),
            ("Laserstrahlschmelzen", Active, Vdi),
            ("Stereolithografie", Active, Vdi),
            ("Fused Deposition Modeling", Active, Vdi),
            ("3D-Drucker", Active, Research),
            ("3D printer", Active, Research),
            ("generative Fertigung", Active, Research),
            ("SLM", Active, Research),
            ("SLS", Active, Research),
            ("FDM", Active, Research),
            ("Rapid Prototyping", Active, Consulting),
            ("Rapid Tooling", Active, Consulting),
            ("Prototyping", Removed, Consulting),
            ("3D-Scan", Removed, Consulting),
            ("Additiv", Removed, Custom),
        ];
        Lexicon::new(rows.iter().map(|(s, st, src)| Keyword::new(s, *st, *src)).collect()).expect("builtin lexicon is valid")
    }
}
