//! NACE code to sector-group mapping.
//!
//! The table is data: a CSV with one row per group and a space separated list
//! of code prefixes. Lookup normalises the code (uppercase, punctuation
//! stripped) and takes the longest matching prefix.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

pub const SECTOR_GROUP_COUNT: usize = 31;

const DEFAULT_TABLE: &str = include_str!("../../data/nace_groups.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorGroup {
    pub group_id: u8,
    pub name: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SectorTableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("group id {0} outside 1..=31")]
    GroupId(u32),
    #[error("expected {SECTOR_GROUP_COUNT} groups, found {0}")]
    GroupCount(usize),
    #[error("prefix {prefix} assigned to groups {first} and {second}")]
    DuplicatePrefix { prefix: String, first: u8, second: u8 },
    #[error("group {0} has no prefixes")]
    EmptyGroup(u8),
}

#[derive(Debug, Deserialize)]
struct Row {
    group_id: u32,
    name: String,
    prefixes: String,
}

#[derive(Debug, Clone)]
pub struct SectorTable {
    groups: Vec<SectorGroup>,
    prefixes: BTreeMap<String, u8>,
}

pub(crate) fn normalize_code(code: &str) -> String {
    code.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

impl SectorTable {
    /// The shipped 31-group table.
    pub fn builtin() -> SectorTable {
        SectorTable::from_reader(DEFAULT_TABLE.as_bytes()).expect("builtin sector table is valid")
    }

    pub fn from_reader<R: Read>(input: R) -> Result<SectorTable, SectorTableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut groups = Vec::new();
        let mut prefixes = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            if row.group_id == 0 || row.group_id as usize > SECTOR_GROUP_COUNT {
                return Err(SectorTableError::GroupId(row.group_id));
            }
            let id = row.group_id as u8;
            let mut any = false;
            for p in row.prefixes.split_whitespace() {
                let p = normalize_code(p);
                if let Some(first) = prefixes.insert(p.clone(), id) {
                    return Err(SectorTableError::DuplicatePrefix { prefix: p, first, second: id });
                }
                any = true;
            }
            if !any {
                return Err(SectorTableError::EmptyGroup(id));
            }
            groups.push(SectorGroup { group_id: id, name: row.name });
        }
        groups.sort_by_key(|g| g.group_id);
        groups.dedup_by_key(|g| g.group_id);
        if groups.len() != SECTOR_GROUP_COUNT {
            return Err(SectorTableError::GroupCount(groups.len()));
        }
        Ok(SectorTable { groups, prefixes })
    }

    pub fn groups(&self) -> &[SectorGroup] {
        &self.groups
    }

    pub fn group(&self, id: u8) -> Option<&SectorGroup> {
        self.groups.iter().find(|g| g.group_id == id)
    }

    /// Longest-prefix lookup. `None` for absent or unmapped codes.
    pub fn lookup(&self, code: Option<&str>) -> Option<&SectorGroup> {
        let code = normalize_code(code?);
        (1..=code.len())
            .rev()
            .find_map(|n| self.prefixes.get(&code[..n]))
            .and_then(|id| self.group(*id))
    }
}

/// Group id for a code, or `None` (Unknown).
pub fn sector_group<'a>(code: Option<&str>, table: &'a SectorTable) -> Option<&'a SectorGroup> {
    table.lookup(code)
}
