//! Firm-role label vocabulary.
//!
//! Annotators choose among seven initial labels. The model works on four
//! final labels, obtained by folding the three service-like labels together
//! and dropping `Others`. Final labels carry a strict rank used both for
//! company-level aggregation and for breaking vote ties.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InitialLabel {
    Manufacturer,
    Service,
    #[serde(rename = "3DPOwnProducts")]
    OwnProducts,
    ConsultingEducation,
    Retail,
    Information,
    Others,
}

impl InitialLabel {
    /// Annotator-facing order (also the keyboard order 1..7 of the labeling UI).
    pub const ALL: [InitialLabel; 7] = [
        InitialLabel::Manufacturer,
        InitialLabel::Service,
        InitialLabel::OwnProducts,
        InitialLabel::ConsultingEducation,
        InitialLabel::Retail,
        InitialLabel::Information,
        InitialLabel::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InitialLabel::Manufacturer => "Manufacturer",
            InitialLabel::Service => "Service",
            InitialLabel::OwnProducts => "3DPOwnProducts",
            InitialLabel::ConsultingEducation => "ConsultingEducation",
            InitialLabel::Retail => "Retail",
            InitialLabel::Information => "Information",
            InitialLabel::Others => "Others",
        }
    }

    /// Collapses to the model vocabulary; `None` means the point is dropped.
    pub fn to_final(self) -> Option<FinalLabel> {
        map_initial_to_final(self)
    }
}

impl fmt::Display for InitialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for InitialLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InitialLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Model-level firm role. Variant order is the hierarchy: `Manufacturer`
/// outranks `Service`, which outranks `Retail`, which outranks `Information`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinalLabel {
    Manufacturer,
    Service,
    Retail,
    Information,
}

impl FinalLabel {
    /// In rank order, highest first.
    pub const ALL: [FinalLabel; 4] = [
        FinalLabel::Manufacturer,
        FinalLabel::Service,
        FinalLabel::Retail,
        FinalLabel::Information,
    ];

    /// 1 for the highest-ranked label, 4 for the lowest.
    pub fn rank(self) -> u8 {
        self.index() as u8 + 1
    }

    /// Dense index in `0..4`, the model's output column.
    pub fn index(self) -> usize {
        match self {
            FinalLabel::Manufacturer => 0,
            FinalLabel::Service => 1,
            FinalLabel::Retail => 2,
            FinalLabel::Information => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<FinalLabel> {
        FinalLabel::ALL.get(i).copied()
    }

    /// True if `self` strictly outranks `other`.
    pub fn outranks(self, other: FinalLabel) -> bool {
        self.rank() < other.rank()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FinalLabel::Manufacturer => "Manufacturer",
            FinalLabel::Service => "Service",
            FinalLabel::Retail => "Retail",
            FinalLabel::Information => "Information",
        }
    }
}

impl fmt::Display for FinalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FinalLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FinalLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

pub fn map_initial_to_final(label: InitialLabel) -> Option<FinalLabel> {
    match label {
        InitialLabel::Manufacturer => Some(FinalLabel::Manufacturer),
        InitialLabel::Service | InitialLabel::OwnProducts | InitialLabel::ConsultingEducation => {
            Some(FinalLabel::Service)
        }
        InitialLabel::Retail => Some(FinalLabel::Retail),
        InitialLabel::Information => Some(FinalLabel::Information),
        InitialLabel::Others => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_table() {
        use FinalLabel as F;
        use InitialLabel as I;
        let expected = [
            (I::Manufacturer, Some(F::Manufacturer)),
            (I::Service, Some(F::Service)),
            (I::OwnProducts, Some(F::Service)),
            (I::ConsultingEducation, Some(F::Service)),
            (I::Retail, Some(F::Retail)),
            (I::Information, Some(F::Information)),
            (I::Others, None),
        ];
        for (i, f) in expected {
            assert_eq!(map_initial_to_final(i), f, "{i}");
        }
    }

    #[test]
    fn rank_is_strict_total_order() {
        for a in FinalLabel::ALL {
            for b in FinalLabel::ALL {
                let n = [a.outranks(b), b.outranks(a), a == b].iter().filter(|x| **x).count();
                assert_eq!(n, 1);
            }
        }
        assert!(FinalLabel::Retail.outranks(FinalLabel::Information));
        assert_eq!(FinalLabel::Manufacturer.rank(), 1);
    }

    #[test]
    fn string_round_trip() {
        for l in InitialLabel::ALL {
            assert_eq!(l.as_str().parse::<InitialLabel>().unwrap(), l);
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(json, format!("\"{}\"", l.as_str()));
        }
        assert!("Fabricator".parse::<InitialLabel>().is_err());
    }
}
