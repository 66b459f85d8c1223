//! Gaussian kernel heat grid in plain degrees.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::GeoError;
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

/// Row 0 is the southernmost row; values are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub bbox: BBox,
    pub cell_deg: f64,
    pub bandwidth_deg: f64,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl HeatGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.bbox.min_lat + (row as f64 + 0.5) * self.cell_deg,
            self.bbox.min_lon + (col as f64 + 0.5) * self.cell_deg,
        )
    }

    /// `(row, col)` of the largest value; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatReport {
    pub in_box: usize,
    pub outside: usize,
}

/// Gaussian kernel density of `points` (lat, lon) on a regular grid.
///
/// The kernel is truncated at three bandwidths. Each in-box point spreads
/// exactly unit mass over the cells whose centers it reaches, so the grid
/// total equals the number of in-box points; a point too narrow to reach
/// any center puts its mass on its own cell. Points outside `bbox` are
/// ignored and counted in the report.
pub fn heat_grid(
    points: &[(f64, f64)],
    bbox: BBox,
    cell_deg: f64,
    bandwidth_deg: f64,
    exec: Execution,
) -> Result<(HeatGrid, HeatReport), GeoError> {
    if !(cell_deg.is_finite() && cell_deg > 0.0) {
        return Err(GeoError::Grid(format!("cell size {cell_deg} must be positive")));
    }
    if !(bandwidth_deg.is_finite() && bandwidth_deg > 0.0) {
        return Err(GeoError::Grid(format!("bandwidth {bandwidth_deg} must be positive")));
    }
    if !(bbox.max_lat > bbox.min_lat && bbox.max_lon > bbox.min_lon) {
        return Err(GeoError::Grid("bounding box is degenerate".into()));
    }
    // The epsilon keeps 0.8 / 0.05 = 16.000000000000004 from adding a column.
    let cells = |extent: f64| ((extent / cell_deg - 1e-9).ceil() as usize).max(1);
    let rows = cells(bbox.max_lat - bbox.min_lat);
    let cols = cells(bbox.max_lon - bbox.min_lon);
    let inside: Vec<(f64, f64)> = points.iter().copied().filter(|&(la, lo)| bbox.contains(la, lo)).collect();
    let report = HeatReport { in_box: inside.len(), outside: points.len() - inside.len() };

    let reach = 3.0 * bandwidth_deg;
    let inv_two_var = 1.0 / (2.0 * bandwidth_deg * bandwidth_deg);
    let center = |i: usize, min: f64| min + (i as f64 + 0.5) * cell_deg;
    let span = |x: f64, min: f64, n: usize| {
        let lo = ((x - reach - min) / cell_deg - 0.5).ceil().max(0.0) as usize;
        let hi = (((x + reach - min) / cell_deg - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
        lo..hi.max(lo)
    };
    let kernel = |d_lat: f64, d_lon: f64| {
        let d2 = d_lat * d_lat + d_lon * d_lon;
        if d2 <= reach * reach {
            (-d2 * inv_two_var).exp()
        } else {
            0.0
        }
    };
    let own_cell = |x: f64, min: f64, n: usize| (((x - min) / cell_deg) as usize).min(n - 1);

    // Per-point normalizer: total kernel weight over the reachable centers.
    let norms: Vec<f64> = exec.map(&inside, |&(la, lo)| {
        let mut s = 0.0;
        for r in span(la, bbox.min_lat, rows) {
            for c in span(lo, bbox.min_lon, cols) {
                s += kernel(center(r, bbox.min_lat) - la, center(c, bbox.min_lon) - lo);
            }
        }
        s
    });

    let mut values = vec![0.0; rows * cols];
    exec.for_each_chunk_mut(&mut values, cols, |r, row| {
        let clat = center(r, bbox.min_lat);
        for (&(la, lo), &norm) in inside.iter().zip(&norms) {
            if norm > 0.0 {
                if (clat - la).abs() > reach {
                    continue;
                }
                for c in span(lo, bbox.min_lon, cols) {
                    row[c] += kernel(clat - la, center(c, bbox.min_lon) - lo) / norm;
                }
            } else if own_cell(la, bbox.min_lat, rows) == r {
                row[own_cell(lo, bbox.min_lon, cols)] += 1.0;
            }
        }
    });
    Ok((HeatGrid { bbox, cell_deg, bandwidth_deg, rows, cols, values }, report))
}

/// Writes a one-line `#` header naming the grid geometry, then one CSV line
/// per grid row, south to north.
pub fn write_heatmap_csv<W: Write>(grid: &HeatGrid, mut out: W) -> std::io::Result<()> {
    let b = grid.bbox;
    writeln!(
        out,
        "# min_lat={} min_lon={} max_lat={} max_lon={} cell_deg={} bandwidth_deg={} rows={} cols={} row0=south",
        b.min_lat, b.min_lon, b.max_lat, b.max_lon, grid.cell_deg, grid.bandwidth_deg, grid.rows, grid.cols
    )?;
    for r in 0..grid.rows {
        let line: Vec<String> = (0..grid.cols).map(|c| grid.get(r, c).to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
