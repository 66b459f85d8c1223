//! Firm population: ingestion and derived categorical attributes.

mod classes;
mod sectors;

use std::collections::HashSet;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use url::Url;

pub use classes::{
    age_class, size_class, whole_years, AgeBoundaries, AgeBoundaryError, AgeClass, SizeClass, AGE_BUCKETS,
};
pub use sectors::{sector_group, SectorGroup, SectorTable, SectorTableError, SECTOR_GROUP_COUNT};

/// One registry row. Field names double as the CSV columns and the NDJSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyRecord {
    pub company_id: String,
    pub url: Url,
    pub employees: Option<u64>,
    pub incorporated: Option<NaiveDate>,
    pub nace: Option<String>,
    pub region_id: Option<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub inno_score: Option<f64>,
}

impl CompanyRecord {
    pub fn location(&self) -> Option<(f64, f64)> {
        Some((self.lat?, self.lon?))
    }
}

/// Why a row was rejected. The string form is the short reason code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowErrorKind {
    MissingId,
    DuplicateId,
    Url,
    Scheme,
    Employees,
    Date,
    Latitude,
    Longitude,
    InnoScore,
    Encoding,
    FieldCount,
}

impl RowErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowErrorKind::MissingId => "missing-id",
            RowErrorKind::DuplicateId => "duplicate-id",
            RowErrorKind::Url => "url",
            RowErrorKind::Scheme => "scheme",
            RowErrorKind::Employees => "employees",
            RowErrorKind::Date => "date",
            RowErrorKind::Latitude => "latitude",
            RowErrorKind::Longitude => "longitude",
            RowErrorKind::InnoScore => "inno-score",
            RowErrorKind::Encoding => "encoding",
            RowErrorKind::FieldCount => "field-count",
        }
    }
}

impl std::fmt::Display for RowErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rejected row. `row` counts the header as row 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub reason: RowErrorKind,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read registry: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry header is missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("csv: {0}")]
    Csv(csv::Error),
}

/// Delimited-text layout of a registry file.
#[derive(Debug, Clone, Copy)]
pub struct CsvFormat {
    pub delimiter: u8,
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat { delimiter: b',' }
    }
}

pub const COLUMNS: [&str; 9] =
    ["company_id", "url", "employees", "incorporated", "nace", "region_id", "lat", "lon", "inno_score"];

struct Columns {
    idx: [Option<usize>; 9],
}

impl Columns {
    fn from_header(h: &csv::StringRecord) -> Result<Columns, RegistryError> {
        let mut idx = [None; 9];
        for (pos, name) in h.iter().enumerate() {
            if let Some(c) = COLUMNS.iter().position(|c| c.eq_ignore_ascii_case(name.trim())) {
                idx[c] = Some(pos);
            }
        }
        for required in [0, 1] {
            if idx[required].is_none() {
                return Err(RegistryError::MissingColumn(COLUMNS[required]));
            }
        }
        Ok(Columns { idx })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> Option<&'r str> {
        let v = rec.get(self.idx[col]?)?.trim();
        (!v.is_empty()).then_some(v)
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| s.parse::<i32>().ok().and_then(|y| NaiveDate::from_ymd_opt(y, 1, 1)))
}

fn parse_row(cols: &Columns, rec: &csv::StringRecord) -> Result<CompanyRecord, (RowErrorKind, String)> {
    let company_id = cols.get(rec, 0).ok_or((RowErrorKind::MissingId, "empty company_id".to_string()))?;
    let raw_url = cols.get(rec, 1).ok_or((RowErrorKind::Url, "empty url".to_string()))?;
    let url = Url::parse(raw_url).map_err(|e| (RowErrorKind::Url, format!("{raw_url}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err((RowErrorKind::Scheme, format!("{raw_url}: not an http(s) URL")));
    }
    let employees = cols
        .get(rec, 2)
        .map(|s| s.parse::<u64>().map_err(|_| (RowErrorKind::Employees, format!("{s:?}"))))
        .transpose()?;
    let incorporated = cols
        .get(rec, 3)
        .map(|s| parse_date(s).ok_or((RowErrorKind::Date, format!("{s:?}"))))
        .transpose()?;
    let number = |col: usize, kind: RowErrorKind, range: std::ops::RangeInclusive<f64>| {
        cols.get(rec, col)
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() && range.contains(&v) => Ok(v),
                _ => Err((kind, format!("{s:?} outside {range:?}"))),
            })
            .transpose()
    };
    let lat = number(6, RowErrorKind::Latitude, -90.0..=90.0)?;
    let lon = number(7, RowErrorKind::Longitude, -180.0..=180.0)?;
    let inno_score = number(8, RowErrorKind::InnoScore, 0.0..=1.0)?;
    Ok(CompanyRecord {
        company_id: company_id.to_string(),
        url,
        employees,
        incorporated,
        nace: cols.get(rec, 4).map(str::to_string),
        region_id: cols.get(rec, 5).map(str::to_string),
        lat,
        lon,
        inno_score,
    })
}

/// Parses a registry file. Bad rows are reported, never silently dropped;
/// record order follows the input.
pub fn load_registry<R: Read>(
    source: R,
    format: CsvFormat,
) -> Result<(Vec<CompanyRecord>, Vec<RowError>), RegistryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(source);
    let header = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(fatal(e)),
    };
    let cols = Columns::from_header(&header)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut rec = csv::StringRecord::new();
    let mut row = 1;
    loop {
        row += 1;
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(fatal(e));
                }
                errors.push(RowError { row, reason: RowErrorKind::Encoding, detail: e.to_string() });
                continue;
            }
        }
        if rec.len() != header.len() {
            errors.push(RowError {
                row,
                reason: RowErrorKind::FieldCount,
                detail: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
            continue;
        }
        match parse_row(&cols, &rec) {
            Ok(c) if !seen.insert(c.company_id.clone()) => {
                errors.push(RowError { row, reason: RowErrorKind::DuplicateId, detail: c.company_id })
            }
            Ok(c) => records.push(c),
            Err((reason, detail)) => errors.push(RowError { row, reason, detail }),
        }
    }
    Ok((records, errors))
}

fn fatal(e: csv::Error) -> RegistryError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RegistryError::Io(io),
        other => RegistryError::Csv(csv::Error::from(std::io::Error::other(format!("{other:?}")))),
    }
}

/// Everything needed to derive size/age/sector classes from a record.
#[derive(Debug, Clone)]
pub struct FirmClassifier {
    pub reference_date: NaiveDate,
    pub age_bounds: AgeBoundaries,
    pub sectors: SectorTable,
}

impl FirmClassifier {
    pub fn new(reference_date: NaiveDate) -> FirmClassifier {
        FirmClassifier { reference_date, age_bounds: AgeBoundaries::default(), sectors: SectorTable::builtin() }
    }

    pub fn size(&self, c: &CompanyRecord) -> SizeClass {
        size_class(c.employees)
    }

    pub fn age(&self, c: &CompanyRecord) -> AgeClass {
        age_class(c.incorporated, self.reference_date, &self.age_bounds)
    }

    pub fn sector(&self, c: &CompanyRecord) -> Option<&SectorGroup> {
        self.sectors.lookup(c.nace.as_deref())
    }
}
