//! Regional engagement statistics, hotspot ranking, heat grids and GeoJSON.

mod geojson;
mod heat;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::CompanyLabel;
use crate::registry::CompanyRecord;

pub use geojson::{
    hotspots_geojson, load_region_geometries, regions_geojson, type_layer_geojson, RegionGeometries,
};
pub use heat::{heat_grid, write_heatmap_csv, BBox, HeatGrid, HeatReport};

/// Region id used for firms the registry places in no region.
pub const UNASSIGNED_REGION: &str = "_unassigned";
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_MIN_TOTAL: u64 = 30;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("{} labeled companies missing from the registry: {}", .0.len(), .0.join(", "))]
    Unresolved(Vec<String>),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid region geometry: {0}")]
    Geometry(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region_id: String,
    pub total_firms: u64,
    pub engaged_firms: u64,
    /// Engaged firms per final label, in rank order.
    pub per_type: [u64; 4],
    /// `engaged / total`; `None` only for an empty region.
    pub intensity: Option<f64>,
}

/// One row per region present in the registry, sorted by region id, plus
/// an [`UNASSIGNED_REGION`] row when some firms have no region.
pub fn regional_stats(companies: &[CompanyRecord], labels: &[CompanyLabel]) -> Result<Vec<RegionStats>, GeoError> {
    let region_of: HashMap<&str, &str> = companies
        .iter()
        .map(|c| (c.company_id.as_str(), c.region_id.as_deref().unwrap_or(UNASSIGNED_REGION)))
        .collect();
    let missing: BTreeSet<&str> =
        labels.iter().map(|l| l.company_id.as_str()).filter(|id| !region_of.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(GeoError::Unresolved(missing.into_iter().map(String::from).collect()));
    }
    let mut acc: BTreeMap<&str, (u64, [u64; 4])> = BTreeMap::new();
    for c in companies {
        acc.entry(region_of[c.company_id.as_str()]).or_default().0 += 1;
    }
    for l in labels {
        let slot = acc.get_mut(region_of[l.company_id.as_str()]).expect("region counted above");
        slot.1[l.label.index()] += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (total, per_type))| {
            let engaged = per_type.iter().sum();
            RegionStats {
                region_id: id.to_string(),
                total_firms: total,
                engaged_firms: engaged,
                per_type,
                intensity: (total > 0).then(|| engaged as f64 / total as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    /// 1-based.
    pub rank: usize,
    #[serde(flatten)]
    pub stats: RegionStats,
}

/// The `k` most intense regions among those with at least `min_total` firms.
/// Ordered by intensity desc, then engaged firms desc, then region id asc.
/// The unassigned sentinel is never a hotspot.
pub fn top_k_hotspots(stats: &[RegionStats], k: usize, min_total: u64) -> Result<Vec<Hotspot>, GeoError> {
    if k == 0 {
        return Err(GeoError::ZeroK);
    }
    let mut eligible: Vec<&RegionStats> = stats
        .iter()
        .filter(|s| s.region_id != UNASSIGNED_REGION && s.total_firms >= min_total && s.intensity.is_some())
        .collect();
    eligible.sort_by(|a, b| {
        b.intensity
            .partial_cmp(&a.intensity)
            .expect("finite intensities")
            .then(b.engaged_firms.cmp(&a.engaged_firms))
            .then_with(|| a.region_id.cmp(&b.region_id))
    });
    Ok(eligible.into_iter().take(k).enumerate().map(|(i, s)| Hotspot { rank: i + 1, stats: s.clone() }).collect())
}
