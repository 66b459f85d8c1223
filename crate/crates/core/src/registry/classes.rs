//! Firm size and age buckets.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    Micro,
    Small,
    Medium,
    Large,
    Unknown,
}

impl SizeClass {
    pub const ALL: [SizeClass; 5] =
        [SizeClass::Micro, SizeClass::Small, SizeClass::Medium, SizeClass::Large, SizeClass::Unknown];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Micro => "Micro",
            SizeClass::Small => "Small",
            SizeClass::Medium => "Medium",
            SizeClass::Large => "Large",
            SizeClass::Unknown => "Unknown",
        }
    }
}

/// Micro 1-9, Small 10-49, Medium 50-249, Large 250+. Zero or missing is Unknown.
pub fn size_class(employees: Option<u64>) -> SizeClass {
    match employees {
        None | Some(0) => SizeClass::Unknown,
        Some(1..=9) => SizeClass::Micro,
        Some(10..=49) => SizeClass::Small,
        Some(50..=249) => SizeClass::Medium,
        Some(_) => SizeClass::Large,
    }
}

/// Ordinal age bucket: `Bucket(1)` is the youngest, `Bucket(6)` the open-ended oldest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeClass {
    Bucket(u8),
    Unknown,
}

impl AgeClass {
    /// Slot in `0..7`; Unknown is last.
    pub fn index(self) -> usize {
        match self {
            AgeClass::Bucket(b) => b as usize - 1,
            AgeClass::Unknown => AGE_BUCKETS,
        }
    }

    pub fn label(self, bounds: &AgeBoundaries) -> String {
        match self {
            AgeClass::Unknown => "Unknown".into(),
            AgeClass::Bucket(b) => {
                let i = b as usize - 1;
                let lo = if i == 0 { 0 } else { bounds.upper[i - 1] + 1 };
                match bounds.upper.get(i) {
                    Some(hi) => format!("{lo}-{hi}"),
                    None => format!(">{}", bounds.upper[AGE_BUCKETS - 2]),
                }
            }
        }
    }
}

pub const AGE_BUCKETS: usize = 6;

/// Inclusive upper ages (in whole years) of the first five buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct AgeBoundaries {
    upper: [u32; AGE_BUCKETS - 1],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgeBoundaryError {
    #[error("expected {expected} upper bounds, got {0}", expected = AGE_BUCKETS - 1)]
    Count(usize),
    #[error("bounds must be strictly increasing")]
    NotIncreasing,
}

impl AgeBoundaries {
    pub fn new(upper: &[u32]) -> Result<AgeBoundaries, AgeBoundaryError> {
        let upper: [u32; AGE_BUCKETS - 1] = upper.try_into().map_err(|_| AgeBoundaryError::Count(upper.len()))?;
        if upper.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AgeBoundaryError::NotIncreasing);
        }
        Ok(AgeBoundaries { upper })
    }

    pub fn upper(&self) -> &[u32] {
        &self.upper
    }

    pub fn bucket(&self, age_years: u32) -> AgeClass {
        let i = self.upper.iter().position(|&hi| age_years <= hi).unwrap_or(AGE_BUCKETS - 1);
        AgeClass::Bucket(i as u8 + 1)
    }
}

impl Default for AgeBoundaries {
    /// 0-2, 3-5, 6-10, 11-20, 21-50, >50 years.
    fn default() -> Self {
        AgeBoundaries { upper: [2, 5, 10, 20, 50] }
    }
}

impl TryFrom<Vec<u32>> for AgeBoundaries {
    type Error = AgeBoundaryError;
    fn try_from(v: Vec<u32>) -> Result<Self, Self::Error> {
        AgeBoundaries::new(&v)
    }
}

impl From<AgeBoundaries> for Vec<u32> {
    fn from(b: AgeBoundaries) -> Self {
        b.upper.to_vec()
    }
}

/// Completed years between two dates (anniversary based).
pub fn whole_years(from: NaiveDate, to: NaiveDate) -> Option<u32> {
    if to < from {
        return None;
    }
    let mut years = to.year() - from.year();
    if (to.month(), to.day()) < (from.month(), from.day()) {
        years -= 1;
    }
    Some(years as u32)
}

pub fn age_class(incorporated: Option<NaiveDate>, reference: NaiveDate, bounds: &AgeBoundaries) -> AgeClass {
    let Some(date) = incorporated else {
        return AgeClass::Unknown;
    };
    match whole_years(date, reference) {
        Some(age) => bounds.bucket(age),
        None => {
            tracing::warn!(%date, %reference, "incorporation date after reference date");
            AgeClass::Unknown
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_edges() {
        use SizeClass::*;
        let cases = [
            (0, Unknown),
            (1, Micro),
            (9, Micro),
            (10, Small),
            (49, Small),
            (50, Medium),
            (249, Medium),
            (250, Large),
            (251, Large),
        ];
        for (n, c) in cases {
            assert_eq!(size_class(Some(n)), c, "n = {n}");
        }
        assert_eq!(size_class(None), Unknown);
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn age_buckets() {
        let b = AgeBoundaries::default();
        let r = d(2021, 5, 1);
        assert_eq!(age_class(Some(r), r, &b), AgeClass::Bucket(1));
        assert_eq!(age_class(Some(d(1821, 1, 1)), r, &b), AgeClass::Bucket(6));
        assert_eq!(age_class(None, r, &b), AgeClass::Unknown);
        assert_eq!(age_class(Some(d(2022, 1, 1)), r, &b), AgeClass::Unknown);
        // 2 years 364 days is still bucket 1, 3 years is bucket 2.
        assert_eq!(age_class(Some(d(2018, 5, 2)), r, &b), AgeClass::Bucket(1));
        assert_eq!(age_class(Some(d(2018, 5, 1)), r, &b), AgeClass::Bucket(2));
        assert_eq!(age_class(Some(d(1971, 5, 1)), r, &b), AgeClass::Bucket(5));
        assert_eq!(age_class(Some(d(1970, 5, 1)), r, &b), AgeClass::Bucket(6));
    }

    #[test]
    fn boundaries_validate() {
        assert!(AgeBoundaries::new(&[1, 2, 3]).is_err());
        assert_eq!(AgeBoundaries::new(&[1, 1, 2, 3, 4]), Err(AgeBoundaryError::NotIncreasing));
        let b = AgeBoundaries::new(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(b.bucket(0), AgeClass::Bucket(1));
        assert_eq!(b.bucket(6), AgeClass::Bucket(6));
        assert_eq!(AgeClass::Bucket(6).label(&AgeBoundaries::default()), ">50");
        assert_eq!(AgeClass::Bucket(2).label(&AgeBoundaries::default()), "3-5");
    }

    proptest::proptest! {
        #[test]
        fn every_age_gets_exactly_one_monotone_bucket(a in 0u32..400, b in 0u32..400) {
            let bounds = AgeBoundaries::default();
            let (lo, hi) = (a.min(b), a.max(b));
            let (AgeClass::Bucket(x), AgeClass::Bucket(y)) = (bounds.bucket(lo), bounds.bucket(hi)) else {
                panic!("known age must not be Unknown");
            };
            proptest::prop_assert!(x <= y);
            proptest::prop_assert!((1..=6).contains(&x));
        }
    }
}
