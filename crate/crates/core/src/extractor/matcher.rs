//! Boundary-anchored, case-insensitive multi-keyword matching.
//!
//! Text and keywords are folded char by char (first char of the Unicode
//! lowercase mapping), so folded and original strings have the same number
//! of chars and offsets carry over. An Aho-Corasick automaton over the folded
//! active surfaces reports every overlapping hit; hits whose neighbouring
//! chars are letters or digits are rejected.

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};

use super::lexicon::{Keyword, KeywordStatus, Lexicon};

pub fn fold_char(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

pub fn fold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// One accepted hit: keyword index into the matcher's keyword list and the
/// char offset / char length in the searched text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hit {
    pub keyword: usize,
    pub char_offset: usize,
    pub char_len: usize,
}

pub struct KeywordMatcher {
    automaton: AhoCorasick,
    keywords: Vec<Keyword>,
    char_lens: Vec<usize>,
}

impl KeywordMatcher {
    /// Builds over the lexicon's active keywords only.
    pub fn new(lexicon: &Lexicon) -> KeywordMatcher {
        let keywords: Vec<Keyword> =
            lexicon.keywords().iter().filter(|k| k.status == KeywordStatus::Active).cloned().collect();
        let folded: Vec<String> = keywords.iter().map(|k| fold(&k.surface)).collect();
        let automaton = AhoCorasickBuilder::new()
            .match_kind(MatchKind::Standard)
            .build(&folded)
            .expect("keyword automaton fits in memory");
        let char_lens = folded.iter().map(|f| f.chars().count()).collect();
        KeywordMatcher { automaton, keywords, char_lens }
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    /// All boundary-respecting hits, sorted by (offset, keyword index).
    pub fn find(&self, text: &str) -> Vec<Hit> {
        let chars: Vec<char> = text.chars().collect();
        let folded: String = chars.iter().map(|c| fold_char(*c)).collect();
        // byte offset in `folded` -> char index
        let mut starts = Vec::with_capacity(chars.len() + 1);
        let mut b = 0;
        for c in folded.chars() {
            starts.push(b);
            b += c.len_utf8();
        }
        starts.push(b);
        let to_char = |byte: usize| starts.binary_search(&byte).ok();

        let mut hits: Vec<Hit> = self
            .automaton
            .find_overlapping_iter(&folded)
            .filter_map(|m| {
                let start = to_char(m.start())?;
                let end = to_char(m.end())?;
                let k = m.pattern().as_usize();
                debug_assert_eq!(end - start, self.char_lens[k]);
                let before_ok = start == 0 || !is_word_char(chars[start - 1]);
                let after_ok = end >= chars.len() || !is_word_char(chars[end]);
                (before_ok && after_ok).then_some(Hit { keyword: k, char_offset: start, char_len: end - start })
            })
            .collect();
        hits.sort();
        hits.dedup();
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::lexicon::KeywordSource;

    fn matcher(words: &[&str]) -> KeywordMatcher {
        let lx = Lexicon::new(words.iter().map(|w| Keyword::active(w, KeywordSource::Custom)).collect()).unwrap();
        KeywordMatcher::new(&lx)
    }

    #[test]
    fn offset_is_in_chars() {
        let m = matcher(&["Lasersintern"]);
        let hits = m.find("Wir bieten Lasersintern an");
        assert_eq!(hits, [Hit { keyword: 0, char_offset: 11, char_len: 12 }]);
        let hits = m.find("Größe: lasersintern");
        assert_eq!(hits[0].char_offset, 7);
    }

    #[test]
    fn boundaries() {
        let m = matcher(&["SLS"]);
        assert!(m.find("SLSX").is_empty());
        assert!(m.find("xSLS").is_empty());
        assert!(m.find("SLS2").is_empty());
        assert_eq!(m.find("(SLS)").len(), 1);
        assert_eq!(m.find("sls-Verfahren").len(), 1);
        assert!(m.find("ÄSLS").is_empty());
    }

    #[test]
    fn overlapping_keywords_all_reported() {
        let m = matcher(&["3D-Druck", "3D-Drucker", "Druck"]);
        let hits = m.find("Unser 3D-Drucker");
        // "3D-Druck" is followed by 'e', so only the long form and no "Druck".
        assert_eq!(hits.iter().map(|h| h.keyword).collect::<Vec<_>>(), [1]);
        let hits = m.find("3D-Druck");
        assert_eq!(hits.iter().map(|h| h.keyword).collect::<Vec<_>>(), [0, 2]);
    }

    #[test]
    fn removed_keywords_are_not_matched() {
        let lx = Lexicon::new(vec![
            Keyword::new("Prototyping", KeywordStatus::Removed, KeywordSource::Custom),
            Keyword::active("SLM", KeywordSource::Research),
        ])
        .unwrap();
        let m = KeywordMatcher::new(&lx);
        assert_eq!(m.keywords().len(), 1);
        assert!(m.find("Prototyping").is_empty());
    }
}
