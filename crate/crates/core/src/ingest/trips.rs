use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::par;

/// One pickup event. Timestamps are UTC seconds as written in the file; no
/// timezone conversion is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripRecord {
    pub pickup_time: i64,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
    /// `(lat, lon)` of the dropoff, absent when the source has no OD data.
    pub dropoff: Option<(f64, f64)>,
}

/// A column reference: either a zero-based index or a header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl Column {
    fn resolve(&self, headers: &csv::StringRecord) -> Result<usize, IngestError> {
        match self {
            Column::Index(i) if *i < headers.len() => Ok(*i),
            Column::Index(i) => Err(IngestError::Schema(format!(
                "column {i} out of range for {} header fields",
                headers.len()
            ))),
            Column::Name(n) => headers
                .iter()
                .position(|h| h.trim() == n)
                .ok_or_else(|| IngestError::Schema(format!("no column named {n:?}"))),
        }
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_time_format() -> String {
    "%Y-%m-%d %H:%M:%S".to_string()
}

/// Column mapping for delimiter-separated trip files with a header row.
///
/// `time_format` is a chrono format string, or `"unix"` for integer seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub time: Column,
    pub lat: Column,
    pub lon: Column,
    #[serde(default)]
    pub dropoff_lat: Option<Column>,
    #[serde(default)]
    pub dropoff_lon: Option<Column>,
    #[serde(default = "default_time_format")]
    pub time_format: String,
}

impl TripSchema {
    /// Pickup-only schema with columns given by index.
    pub fn by_index(time: usize, lat: usize, lon: usize) -> Self {
        Self {
            delimiter: ',',
            time: Column::Index(time),
            lat: Column::Index(lat),
            lon: Column::Index(lon),
            dropoff_lat: None,
            dropoff_lon: None,
            time_format: default_time_format(),
        }
    }

    /// Layout of the public 2014 Uber pickup files
    /// (`"Date/Time","Lat","Lon","Base"`).
    pub fn uber_2014() -> Self {
        Self {
            delimiter: ',',
            time: Column::Name("Date/Time".into()),
            lat: Column::Name("Lat".into()),
            lon: Column::Name("Lon".into()),
            dropoff_lat: None,
            dropoff_lon: None,
            time_format: "%m/%d/%Y %H:%M:%S".into(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        toml::from_str(text).map_err(|e| IngestError::Schema(e.to_string()))
    }

    pub fn has_dropoff(&self) -> bool {
        self.dropoff_lat.is_some() && self.dropoff_lon.is_some()
    }

    pub fn parse_time(&self, s: &str) -> Option<i64> {
        let s = s.trim();
        if self.time_format == "unix" {
            return s.parse().ok();
        }
        NaiveDateTime::parse_from_str(s, &self.time_format)
            .ok()
            .map(|t| t.and_utc().timestamp())
    }
}

/// Records parsed from one or more files plus row accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTrips {
    pub records: Vec<TripRecord>,
    pub rows: usize,
    pub malformed: usize,
}

struct Resolved {
    time: usize,
    lat: usize,
    lon: usize,
    dropoff: Option<(usize, usize)>,
}

fn parse_coord(s: Option<&str>) -> Option<f64> {
    s.and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite())
}

fn parse_row(rec: &csv::StringRecord, cols: &Resolved, schema: &TripSchema) -> Option<TripRecord> {
    let pickup_time = schema.parse_time(rec.get(cols.time)?)?;
    let pickup_lat = parse_coord(rec.get(cols.lat))?;
    let pickup_lon = parse_coord(rec.get(cols.lon))?;
    let dropoff = match cols.dropoff {
        None => None,
        Some((la, lo)) => {
            let (a, b) = (rec.get(la).unwrap_or("").trim(), rec.get(lo).unwrap_or("").trim());
            if a.is_empty() && b.is_empty() {
                None
            } else {
                Some((parse_coord(Some(a))?, parse_coord(Some(b))?))
            }
        }
    };
    Some(TripRecord {
        pickup_time,
        pickup_lat,
        pickup_lon,
        dropoff,
    })
}

/// Parses one delimiter-separated trip file.
///
/// Malformed rows are skipped and counted; more than half malformed is fatal.
pub fn parse_trips(path: &Path, schema: &TripSchema) -> Result<ParsedTrips, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let delim = u8::try_from(schema.delimiter)
        .map_err(|_| IngestError::Schema(format!("delimiter {:?} is not a single byte", schema.delimiter)))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        log::warn!("{}: empty file", path.display());
        return Ok(ParsedTrips::default());
    }
    let cols = Resolved {
        time: schema.time.resolve(&headers)?,
        lat: schema.lat.resolve(&headers)?,
        lon: schema.lon.resolve(&headers)?,
        dropoff: match (&schema.dropoff_lat, &schema.dropoff_lon) {
            (Some(a), Some(b)) => Some((a.resolve(&headers)?, b.resolve(&headers)?)),
            _ => None,
        },
    };

    let mut out = ParsedTrips::default();
    for rec in reader.records() {
        out.rows += 1;
        match rec.ok().and_then(|r| parse_row(&r, &cols, schema)) {
            Some(t) => out.records.push(t),
            None => out.malformed += 1,
        }
    }
    if out.rows == 0 {
        log::warn!("{}: no data rows", path.display());
    }
    if out.malformed * 2 > out.rows {
        return Err(IngestError::TooManyMalformed {
            path: path.to_path_buf(),
            malformed: out.malformed,
            rows: out.rows,
        });
    }
    if out.malformed > 0 {
        log::warn!("{}: skipped {} of {} rows", path.display(), out.malformed, out.rows);
    }
    Ok(out)
}

/// Parses several files (in parallel when enabled) and concatenates their
/// records in the given path order.
pub fn parse_shards(paths: &[PathBuf], schema: &TripSchema) -> Result<ParsedTrips, IngestError> {
    let parts = par::map(paths, |p| parse_trips(p, schema));
    let mut all = ParsedTrips::default();
    for part in parts {
        let part = part?;
        all.rows += part.rows;
        all.malformed += part.malformed;
        all.records.extend(part.records);
    }
    Ok(all)
}
