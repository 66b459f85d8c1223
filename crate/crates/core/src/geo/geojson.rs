//! GeoJSON FeatureCollections for regions, hotspots and per-type layers.

use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Map, Value};

use super::{GeoError, Hotspot, RegionStats};
use crate::aggregator::CompanyLabel;
use crate::labels::FinalLabel;
use crate::registry::CompanyRecord;

/// Region id to GeoJSON geometry object.
pub type RegionGeometries = BTreeMap<String, Value>;

/// Reads a FeatureCollection whose features carry `properties.region_id`.
pub fn load_region_geometries(doc: &Value) -> Result<RegionGeometries, GeoError> {
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::Geometry("expected a FeatureCollection".into()))?;
    let mut out = RegionGeometries::new();
    for (i, f) in features.iter().enumerate() {
        let id = match f.pointer("/properties/region_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(GeoError::Geometry(format!("feature {i} has no properties.region_id"))),
        };
        match f.get("geometry") {
            Some(g) if g.is_object() => {
                out.insert(id, g.clone());
            }
            _ => return Err(GeoError::Geometry(format!("feature {i} ({id}) has no geometry"))),
        }
    }
    Ok(out)
}

fn collection(features: Vec<Value>) -> Value {
    json!({ "type": "FeatureCollection", "features": features })
}

fn stats_properties(s: &RegionStats) -> Map<String, Value> {
    let mut p = Map::new();
    p.insert("region_id".into(), json!(s.region_id));
    p.insert("total_firms".into(), json!(s.total_firms));
    p.insert("engaged_firms".into(), json!(s.engaged_firms));
    for l in FinalLabel::ALL {
        p.insert(l.as_str().into(), json!(s.per_type[l.index()]));
    }
    p.insert("intensity".into(), json!(s.intensity));
    p
}

fn region_features<'a>(
    items: impl Iterator<Item = (&'a RegionStats, Map<String, Value>)>,
    geoms: &RegionGeometries,
) -> (Value, Vec<String>) {
    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for (s, props) in items {
        match geoms.get(&s.region_id) {
            Some(g) => features.push(json!({ "type": "Feature", "geometry": g, "properties": props })),
            None => {
                tracing::warn!(region = %s.region_id, "no geometry for region; feature skipped");
                skipped.push(s.region_id.clone());
            }
        }
    }
    (collection(features), skipped)
}

/// One feature per region with geometry. Returns the ids skipped for lack of one.
pub fn regions_geojson(stats: &[RegionStats], geoms: &RegionGeometries) -> (Value, Vec<String>) {
    region_features(stats.iter().map(|s| (s, stats_properties(s))), geoms)
}

pub fn hotspots_geojson(hotspots: &[Hotspot], geoms: &RegionGeometries) -> (Value, Vec<String>) {
    region_features(
        hotspots.iter().map(|h| {
            let mut p = stats_properties(&h.stats);
            p.insert("rank".into(), json!(h.rank));
            (&h.stats, p)
        }),
        geoms,
    )
}

/// Point features for every company labeled `label` with a location.
/// Returns the ids skipped for lack of coordinates.
pub fn type_layer_geojson(
    label: FinalLabel,
    companies: &[CompanyRecord],
    labels: &[CompanyLabel],
) -> (Value, Vec<String>) {
    let index: HashMap<&str, &CompanyRecord> = companies.iter().map(|c| (c.company_id.as_str(), c)).collect();
    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for l in labels.iter().filter(|l| l.label == label) {
        match index.get(l.company_id.as_str()).and_then(|c| Some((*c, c.location()?))) {
            Some((c, (lat, lon))) => features.push(json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [lon, lat] },
                "properties": {
                    "company_id": l.company_id,
                    "label": label.as_str(),
                    "region_id": c.region_id,
                    "max_confidence": l.max_confidence,
                },
            })),
            None => skipped.push(l.company_id.clone()),
        }
    }
    if !skipped.is_empty() {
        tracing::warn!(label = label.as_str(), count = skipped.len(), "companies without coordinates skipped");
    }
    (collection(features), skipped)
}
