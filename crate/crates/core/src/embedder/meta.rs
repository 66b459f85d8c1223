//! Company and page metadata block.
//!
//! Frozen layout (index ranges are half-open):
//!
//! | block          | range   | slots                                                |
//! |----------------|---------|------------------------------------------------------|
//! | size class     | 0..5    | Micro, Small, Medium, Large, Unknown                 |
//! | age class      | 5..12   | buckets 1..6, Unknown                                |
//! | sector group   | 12..44  | groups 1..31, Unknown                                |
//! | URL depth      | 44..48  | 0, 1, 2, 3+ path segments                            |
//! | keyword source | 48..53  | ASTM, VDI, Research, Consulting, Custom              |
//! | zone           | 53..60  | Content, Menu, Header, Footer, Signature, Script, Other |
//!
//! Slots `60..d_meta` are zero. Every block is one-hot, so each has unit max.

use std::ops::Range;

use url::Url;

use crate::extractor::DataPoint;
use crate::registry::{CompanyRecord, FirmClassifier, SECTOR_GROUP_COUNT};

pub const SIZE_BLOCK: Range<usize> = 0..5;
pub const AGE_BLOCK: Range<usize> = 5..12;
pub const SECTOR_BLOCK: Range<usize> = 12..44;
pub const DEPTH_BLOCK: Range<usize> = 44..48;
pub const SOURCE_BLOCK: Range<usize> = 48..53;
pub const ZONE_BLOCK: Range<usize> = 53..60;
pub const META_LAYOUT_LEN: usize = 60;

/// Non-empty path segments of a page URL.
pub fn url_depth(url: &Url) -> usize {
    url.path_segments().map_or(0, |s| s.filter(|p| !p.is_empty()).count())
}

/// Indices set to one for this company/point pair.
pub fn meta_slots(company: &CompanyRecord, point: &DataPoint, firms: &FirmClassifier) -> [usize; 6] {
    let size = firms.size(company).index();
    let age = firms.age(company).index();
    let sector = firms.sector(company).map_or(SECTOR_GROUP_COUNT, |g| g.group_id as usize - 1);
    let depth = url_depth(&point.page_url).min(3);
    [
        SIZE_BLOCK.start + size,
        AGE_BLOCK.start + age,
        SECTOR_BLOCK.start + sector,
        DEPTH_BLOCK.start + depth,
        SOURCE_BLOCK.start + point.keyword_source.index(),
        ZONE_BLOCK.start + point.zone.index(),
    ]
}

pub fn meta_vector(company: &CompanyRecord, point: &DataPoint, firms: &FirmClassifier, d_meta: usize) -> Vec<f64> {
    let mut v = vec![0.0; d_meta];
    if d_meta == 0 {
        return v;
    }
    for i in meta_slots(company, point, firms) {
        v[i] = 1.0;
    }
    v
}
