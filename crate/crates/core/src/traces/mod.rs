//! GPS trace records: CSV ingestion, day replication and synthetic generation.

mod synth;

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geocell::GeoPoint;
use crate::Timestamp;

pub use synth::{
    synthesize, BlockSpec, DelayDistribution, Regime, Segment, SynthSummary, SyntheticSpec,
};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Header expected on every trace CSV.
pub const CSV_HEADER: [&str; 6] = [
    "vehicle_id",
    "timestamp",
    "longitude",
    "latitude",
    "speed",
    "heading",
];

pub const DEFAULT_MALFORMED_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}, expected {}", CSV_HEADER.join(","))]
    Header { found: Vec<String> },
    #[error("{} of {total} rows malformed (limit {:.2}%), rows {}", rows.len(), limit * 100.0, RowList(rows))]
    TooManyMalformed {
        rows: Vec<u64>,
        total: u64,
        limit: f64,
    },
    #[error("trace is empty")]
    Empty,
    #[error("trace spans {span} s, replication needs less than one day ({SECONDS_PER_DAY} s)")]
    SpanTooLong { span: i64 },
    #[error("replication count must be at least 1")]
    ZeroDays,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

struct RowList<'a>(&'a [u64]);

impl fmt::Display for RowList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 10;
        for (i, r) in self.0.iter().take(SHOWN).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{r}")?;
        }
        if self.0.len() > SHOWN {
            write!(f, " and {} more", self.0.len() - SHOWN)?;
        }
        Ok(())
    }
}

/// One GPS report.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub vehicle_id: String,
    pub timestamp: Timestamp,
    pub position: GeoPoint,
    /// Meters per second.
    pub speed: f64,
    /// Degrees in `[0, 360)`.
    pub heading: f64,
}

impl TraceRecord {
    fn validate(&self) -> Result<(), String> {
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        self.position.validate().map_err(|e| e.to_string())?;
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return Err(format!("invalid speed {}", self.speed));
        }
        if !(0.0..360.0).contains(&self.heading) {
            return Err(format!("invalid heading {}", self.heading));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    vehicle_id: String,
    timestamp: i64,
    longitude: f64,
    latitude: f64,
    speed: f64,
    heading: f64,
}

impl From<CsvRow> for TraceRecord {
    fn from(r: CsvRow) -> Self {
        TraceRecord {
            vehicle_id: r.vehicle_id,
            timestamp: r.timestamp,
            position: GeoPoint {
                latitude: r.latitude,
                longitude: r.longitude,
            },
            speed: r.speed,
            heading: r.heading,
        }
    }
}

impl From<&TraceRecord> for CsvRow {
    fn from(r: &TraceRecord) -> Self {
        CsvRow {
            vehicle_id: r.vehicle_id.clone(),
            timestamp: r.timestamp,
            longitude: r.position.longitude,
            latitude: r.position.latitude,
            speed: r.speed,
            heading: r.heading,
        }
    }
}

/// Timestamp-sorted, de-duplicated trace records.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    records: Vec<TraceRecord>,
    day_span: u32,
}

impl TraceSet {
    /// Sorts by `(timestamp, vehicle_id)` and drops repeated
    /// `(vehicle_id, timestamp)` pairs, keeping the first occurrence.
    /// Returns the set and the number of duplicates removed.
    pub fn from_records(mut records: Vec<TraceRecord>) -> Result<(Self, usize), TraceError> {
        if records.is_empty() {
            return Err(TraceError::Empty);
        }
        records.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.vehicle_id.cmp(&b.vehicle_id))
        });
        let before = records.len();
        records.dedup_by(|b, a| a.timestamp == b.timestamp && a.vehicle_id == b.vehicle_id);
        let duplicates = before - records.len();
        Ok((
            TraceSet {
                records,
                day_span: 1,
            },
            duplicates,
        ))
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn day_span(&self) -> u32 {
        self.day_span
    }

    pub fn start(&self) -> Timestamp {
        self.records[0].timestamp
    }

    pub fn end(&self) -> Timestamp {
        self.records[self.records.len() - 1].timestamp
    }

    /// Seconds between the first and the last record.
    pub fn span(&self) -> i64 {
        self.end() - self.start()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
        for r in &self.records {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TraceError> {
        let f = File::create(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(io::BufWriter::new(f))
    }

    /// SHA-256 of the canonical CSV form, hex encoded.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        let hash = Sha256::digest(&buf);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Largest tolerated fraction of malformed data rows.
    pub max_malformed_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_malformed_fraction: DEFAULT_MALFORMED_TOLERANCE,
        }
    }
}

/// What happened while loading a trace file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: u64,
    /// 1-based line numbers (header is line 1) of rows that failed to parse
    /// or validate.
    pub malformed_rows: Vec<u64>,
    pub duplicates: usize,
}

pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<(TraceSet, LoadReport), TraceError> {
    let f = File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(io::BufReader::new(f), opts)
}

pub fn read_csv<R: Read>(
    input: R,
    opts: &LoadOptions,
) -> Result<(TraceSet, LoadReport), TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(TraceError::Header {
            found: header.iter().map(str::to_string).collect(),
        });
    }

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let line = i as u64 + 2;
        report.rows += 1;
        let rec = match row {
            Ok(r) => TraceRecord::from(r),
            Err(e) => {
                log::debug!("line {line}: {e}");
                report.malformed_rows.push(line);
                continue;
            }
        };
        if let Err(e) = rec.validate() {
            log::debug!("line {line}: {e}");
            report.malformed_rows.push(line);
            continue;
        }
        records.push(rec);
    }

    let bad = report.malformed_rows.len() as f64;
    if report.rows > 0 && bad / report.rows as f64 > opts.max_malformed_fraction {
        return Err(TraceError::TooManyMalformed {
            rows: report.malformed_rows,
            total: report.rows,
            limit: opts.max_malformed_fraction,
        });
    }
    if !report.malformed_rows.is_empty() {
        log::warn!(
            "skipped {} malformed rows of {}",
            report.malformed_rows.len(),
            report.rows
        );
    }
    let (set, duplicates) = TraceSet::from_records(records)?;
    report.duplicates = duplicates;
    if duplicates > 0 {
        log::info!("collapsed {duplicates} duplicate (vehicle, timestamp) rows");
    }
    Ok((set, report))
}

/// Repeats a trace of less than one day `days` times, copy `k` shifted by
/// `k` days.
pub fn replicate_days(t: &TraceSet, days: u32) -> Result<TraceSet, TraceError> {
    if days == 0 {
        return Err(TraceError::ZeroDays);
    }
    if t.span() >= SECONDS_PER_DAY {
        return Err(TraceError::SpanTooLong { span: t.span() });
    }
    let mut out = replicate_with_period(t, days, SECONDS_PER_DAY);
    out.day_span = days;
    Ok(out)
}

/// Repeats `t` `copies` times, copy `k` shifted by `k * period` seconds.
/// Copies overlap when `period` does not exceed the trace span.
pub fn replicate_with_period(t: &TraceSet, copies: u32, period: i64) -> TraceSet {
    let mut records = Vec::with_capacity(t.len() * copies as usize);
    for k in 0..copies as i64 {
        records.extend(t.records.iter().map(|r| TraceRecord {
            timestamp: r.timestamp + k * period,
            ..r.clone()
        }));
    }
    records.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.vehicle_id.cmp(&b.vehicle_id))
    });
    TraceSet {
        records,
        day_span: t.day_span * copies,
    }
}
