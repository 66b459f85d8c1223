//! Company-level labels and descriptive tabulations.

mod tables;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classifier::Prediction;
use crate::exec::Execution;
use crate::labels::FinalLabel;

pub use tables::{
    cross_tab, innovation_validation, type_shares, write_cross_tab, write_innovation, write_share_table, Attribute,
    CrossTab, CrossTabRow, InnovationRow, InnovationTable, ShareRow, ShareTable, TableError,
    DEFAULT_INNOVATION_THRESHOLD,
};

/// A point-level prediction tagged with where the point came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub company_id: String,
    pub page_url: String,
    #[serde(flatten)]
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyLabel {
    pub company_id: String,
    pub label: FinalLabel,
    /// Surviving points per predicted label.
    pub supporting_points: BTreeMap<FinalLabel, u32>,
    pub max_confidence: f64,
    /// Distinct pages among the surviving points.
    pub n_pages: u32,
}

/// Labels one company by the highest-ranked label among its predictions
/// with `confidence >= min_confidence`. `None` means the company is
/// unengaged: no prediction survived.
pub fn classify_company(
    company_id: &str,
    predictions: &[PointPrediction],
    min_confidence: f64,
) -> Option<CompanyLabel> {
    let kept: Vec<&PointPrediction> =
        predictions.iter().filter(|p| p.prediction.confidence >= min_confidence).collect();
    let label = kept.iter().map(|p| p.prediction.label).min()?;
    let mut supporting = BTreeMap::new();
    for p in &kept {
        *supporting.entry(p.prediction.label).or_insert(0) += 1;
    }
    let pages: BTreeSet<&str> = kept.iter().map(|p| p.page_url.as_str()).collect();
    Some(CompanyLabel {
        company_id: company_id.to_string(),
        label,
        supporting_points: supporting,
        max_confidence: kept.iter().map(|p| p.prediction.confidence).fold(0.0, f64::max),
        n_pages: pages.len() as u32,
    })
}

/// Groups predictions by company and labels each; output sorted by company id.
pub fn classify_companies(predictions: &[PointPrediction], min_confidence: f64, exec: Execution) -> Vec<CompanyLabel> {
    let mut by_company: BTreeMap<&str, Vec<PointPrediction>> = BTreeMap::new();
    for p in predictions {
        by_company.entry(p.company_id.as_str()).or_default().push(p.clone());
    }
    let groups: Vec<(&str, Vec<PointPrediction>)> = by_company.into_iter().collect();
    exec.map(&groups, |(id, preds)| classify_company(id, preds, min_confidence))
        .into_iter()
        .flatten()
        .collect()
}
