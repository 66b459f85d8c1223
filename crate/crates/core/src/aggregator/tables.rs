//! Share tables, attribute cross-tabs and the innovativeness breakdown.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CompanyLabel;
use crate::labels::FinalLabel;
use crate::registry::{AgeClass, CompanyRecord, FirmClassifier, SizeClass, AGE_BUCKETS};

pub const DEFAULT_INNOVATION_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{} labeled companies missing from the registry: {}", .0.len(), .0.join(", "))]
    Unresolved(Vec<String>),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub category: String,
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShareTable {
    pub rows: Vec<ShareRow>,
    pub total: u64,
}

/// Count and share per final label over engaged companies, in rank order.
/// Labels with no companies are omitted.
pub fn type_shares(labels: &[CompanyLabel]) -> ShareTable {
    let mut counts = [0u64; 4];
    labels.iter().for_each(|l| counts[l.label.index()] += 1);
    let total = labels.len() as u64;
    let rows = FinalLabel::ALL
        .iter()
        .filter(|l| counts[l.index()] > 0)
        .map(|l| ShareRow {
            category: l.as_str().to_string(),
            count: counts[l.index()],
            share: counts[l.index()] as f64 / total as f64,
        })
        .collect();
    ShareTable { rows, total }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Size,
    Sector,
}

impl Attribute {
    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Age => "age",
            Attribute::Size => "size",
            Attribute::Sector => "sector",
        }
    }

    fn categories(self, firms: &FirmClassifier) -> Vec<String> {
        match self {
            Attribute::Size => SizeClass::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            Attribute::Age => (1..=AGE_BUCKETS as u8)
                .map(AgeClass::Bucket)
                .chain([AgeClass::Unknown])
                .map(|a| a.label(&firms.age_bounds))
                .collect(),
            Attribute::Sector => {
                firms.sectors.groups().iter().map(|g| g.name.clone()).chain(["Unknown".to_string()]).collect()
            }
        }
    }

    fn slot(self, firms: &FirmClassifier, c: &CompanyRecord) -> usize {
        match self {
            Attribute::Size => firms.size(c).index(),
            Attribute::Age => firms.age(c).index(),
            Attribute::Sector => {
                let groups = firms.sectors.groups();
                firms
                    .sector(c)
                    .and_then(|g| groups.iter().position(|h| h.group_id == g.group_id))
                    .unwrap_or(groups.len())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTabRow {
    pub category: String,
    /// All registry firms in the category, engaged or not.
    pub population: u64,
    /// Engaged firms per final label, in rank order.
    pub counts: [u64; 4],
    pub engaged: u64,
    /// `engaged / population`; `None` for an empty category.
    pub engaged_share: Option<f64>,
    /// `counts / engaged`; `None` when nothing is engaged.
    pub row_shares: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub attribute: Attribute,
    pub rows: Vec<CrossTabRow>,
    pub column_totals: [u64; 4],
    /// Share of each label's companies falling in each row: `col_shares[row][label]`.
    pub col_shares: Vec<[Option<f64>; 4]>,
}

/// Engaged-company counts by attribute category and final label, with every
/// category present (Unknown last) and population denominators taken from
/// the whole registry.
pub fn cross_tab(
    labels: &[CompanyLabel],
    attribute: Attribute,
    companies: &[CompanyRecord],
    firms: &FirmClassifier,
) -> Result<CrossTab, TableError> {
    let index: HashMap<&str, &CompanyRecord> = companies.iter().map(|c| (c.company_id.as_str(), c)).collect();
    let missing: BTreeSet<&str> =
        labels.iter().map(|l| l.company_id.as_str()).filter(|id| !index.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(TableError::Unresolved(missing.into_iter().map(String::from).collect()));
    }
    let categories = attribute.categories(firms);
    let mut population = vec![0u64; categories.len()];
    for c in companies {
        population[attribute.slot(firms, c)] += 1;
    }
    let mut counts = vec![[0u64; 4]; categories.len()];
    for l in labels {
        counts[attribute.slot(firms, index[l.company_id.as_str()])][l.label.index()] += 1;
    }
    let mut column_totals = [0u64; 4];
    counts.iter().for_each(|r| (0..4).for_each(|j| column_totals[j] += r[j]));
    let rows = categories
        .into_iter()
        .zip(population)
        .zip(&counts)
        .map(|((category, population), counts)| {
            let engaged: u64 = counts.iter().sum();
            CrossTabRow {
                category,
                population,
                counts: *counts,
                engaged,
                engaged_share: (population > 0).then(|| engaged as f64 / population as f64),
                row_shares: (engaged > 0).then(|| counts.map(|c| c as f64 / engaged as f64)),
            }
        })
        .collect();
    let col_shares = counts
        .iter()
        .map(|r| std::array::from_fn(|j| (column_totals[j] > 0).then(|| r[j] as f64 / column_totals[j] as f64)))
        .collect();
    Ok(CrossTab { attribute, rows, column_totals, col_shares })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationRow {
    /// A final label, or "All" for the engaged total.
    pub category: String,
    /// Companies with a score.
    pub n: u64,
    pub n_innovative: u64,
    /// `n_innovative / n`; `None` when no company is scored.
    pub share: Option<f64>,
    pub n_unscored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationTable {
    pub threshold: f64,
    pub rows: Vec<InnovationRow>,
    pub total: InnovationRow,
}

/// Share of innovative companies (`inno_score >= threshold`) per final label.
/// Companies without a score are counted separately and excluded from `n`.
pub fn innovation_validation(
    labels: &[CompanyLabel],
    companies: &[CompanyRecord],
    threshold: f64,
) -> Result<InnovationTable, TableError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(TableError::Threshold(threshold));
    }
    let index: HashMap<&str, &CompanyRecord> = companies.iter().map(|c| (c.company_id.as_str(), c)).collect();
    let missing: BTreeSet<&str> =
        labels.iter().map(|l| l.company_id.as_str()).filter(|id| !index.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(TableError::Unresolved(missing.into_iter().map(String::from).collect()));
    }
    // [n, innovative, unscored] per label
    let mut acc = [[0u64; 3]; 4];
    for l in labels {
        let slot = &mut acc[l.label.index()];
        match index[l.company_id.as_str()].inno_score {
            Some(s) => {
                slot[0] += 1;
                if s >= threshold {
                    slot[1] += 1;
                }
            }
            None => slot[2] += 1,
        }
    }
    let row = |category: &str, [n, k, u]: [u64; 3]| InnovationRow {
        category: category.to_string(),
        n,
        n_innovative: k,
        share: (n > 0).then(|| k as f64 / n as f64),
        n_unscored: u,
    };
    let mut sum = [0u64; 3];
    acc.iter().for_each(|a| (0..3).for_each(|j| sum[j] += a[j]));
    Ok(InnovationTable {
        threshold,
        rows: FinalLabel::ALL.iter().map(|l| row(l.as_str(), acc[l.index()])).collect(),
        total: row("All", sum),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_share_table<W: Write>(t: &ShareTable, out: W) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "count", "share"])?;
    for r in &t.rows {
        w.write_record([r.category.clone(), r.count.to_string(), r.share.to_string()])?;
    }
    w.write_record(["total".to_string(), t.total.to_string(), if t.total > 0 { "1" } else { "" }.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn write_cross_tab<W: Write>(t: &CrossTab, out: W) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![t.attribute.as_str().to_string(), "population".into(), "engaged".into(), "engaged_share".into()];
    header.extend(FinalLabel::ALL.iter().map(|l| l.as_str().to_string()));
    header.extend(FinalLabel::ALL.iter().map(|l| format!("{}_share", l.as_str())));
    w.write_record(&header)?;
    for r in &t.rows {
        let mut rec = vec![r.category.clone(), r.population.to_string(), r.engaged.to_string(), opt(r.engaged_share)];
        rec.extend(r.counts.iter().map(u64::to_string));
        rec.extend((0..4).map(|j| opt(r.row_shares.map(|s| s[j]))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_innovation<W: Write>(t: &InnovationTable, out: W) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["type", "n_scored", "n_innovative", "share", "n_unscored", "threshold"])?;
    for r in t.rows.iter().chain([&t.total]) {
        w.write_record([
            r.category.clone(),
            r.n.to_string(),
            r.n_innovative.to_string(),
            opt(r.share),
            r.n_unscored.to_string(),
            t.threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
