//! Daily OHLCV bars: CSV ingestion, validation and a seeded synthetic generator.
//!
//! Rows may arrive in any order; the parser sorts ascending by date. Duplicate
//! dates and broken price invariants are fatal. Calendar gaps are only warned
//! about, since non-trading days are expected to be absent from the source.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const CSV_HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// Gaps longer than this many calendar days produce a warning.
pub const MAX_GAP_DAYS: i64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvSeries {
    pub symbol: String,
    pub bars: Vec<Bar>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub row: usize,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: [{}] {}", self.row, self.rule, self.message)
    }
}

/// Findings from [`validate_series`]. Rows are 0-based positions in `bars`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.errors.is_empty()
    }
}

fn bar_findings(bar: &Bar) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let fields = [
        ("open", bar.open),
        ("high", bar.high),
        ("low", bar.low),
        ("close", bar.close),
        ("volume", bar.volume),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            out.push(("finite value", format!("{name} is not finite")));
        }
    }
    for (name, v) in &fields[..4] {
        if *v <= 0.0 {
            out.push(("positive price", format!("{name}={v} is not positive")));
        }
    }
    if bar.volume < 0.0 {
        out.push(("non-negative volume", format!("volume={} is negative", bar.volume)));
    }
    if bar.low > bar.high {
        out.push((
            "low <= high",
            format!("low <= high violated (low={}, high={})", bar.low, bar.high),
        ));
    }
    if bar.low > bar.open.min(bar.close) {
        out.push((
            "low <= min(open, close)",
            format!("low={} above min(open, close)={}", bar.low, bar.open.min(bar.close)),
        ));
    }
    if bar.high < bar.open.max(bar.close) {
        out.push((
            "high >= max(open, close)",
            format!("high={} below max(open, close)={}", bar.high, bar.open.max(bar.close)),
        ));
    }
    out
}

/// Lists every violated bar or series invariant. Never fails.
pub fn validate_series(series: &OhlcvSeries) -> ValidationReport {
    let mut report = ValidationReport::default();
    if series.bars.is_empty() {
        report.errors.push(Finding {
            row: 0,
            rule: "non-empty",
            message: "series has no bars".into(),
        });
        return report;
    }
    for (row, bar) in series.bars.iter().enumerate() {
        for (rule, message) in bar_findings(bar) {
            report.errors.push(Finding { row, rule, message });
        }
    }
    for (row, pair) in series.bars.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        let row = row + 1;
        if next.date == prev.date {
            report.errors.push(Finding {
                row,
                rule: "duplicate date",
                message: format!("duplicate date {}", next.date),
            });
        } else if next.date < prev.date {
            report.errors.push(Finding {
                row,
                rule: "increasing dates",
                message: format!("{} precedes {}", next.date, prev.date),
            });
        } else {
            let gap = (next.date - prev.date).num_days();
            if gap > MAX_GAP_DAYS {
                report.warnings.push(Finding {
                    row,
                    rule: "calendar gap",
                    message: format!("{gap}-day gap after {}", prev.date),
                });
            }
        }
    }
    report
}

impl OhlcvSeries {
    /// Builds a series, rejecting it if [`validate_series`] reports any error.
    pub fn new(symbol: impl Into<String>, bars: Vec<Bar>) -> Result<Self> {
        let series = OhlcvSeries {
            symbol: symbol.into(),
            bars,
        };
        let report = validate_series(&series);
        match report.errors.first() {
            None => Ok(series),
            Some(first) => Err(Error::InvalidSeries(first.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

fn parse_field(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("cannot parse `{raw}` as a number"),
        })
}

/// Parses rows in file order without checking bar or series invariants.
/// Row numbers in errors are 1-based data rows.
pub fn read_raw_bars(reader: impl Read) -> Result<Vec<Bar>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(CSV_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: format!("missing column `{name}` in header"),
        })?;
    }

    let mut bars = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let raw_date = record.get(index[0]).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            column: "date".into(),
            message: format!("cannot parse `{raw_date}` as YYYY-MM-DD: {e}"),
        })?;
        bars.push(Bar {
            date,
            open: parse_field(&record, index[1], row, "open")?,
            high: parse_field(&record, index[2], row, "high")?,
            low: parse_field(&record, index[3], row, "low")?,
            close: parse_field(&record, index[4], row, "close")?,
            volume: parse_field(&record, index[5], row, "volume")?,
        });
    }
    Ok(bars)
}

/// Reads bars from CSV text. Row numbers in errors are 1-based data rows.
pub fn read_ohlcv_csv(reader: impl Read, symbol: &str) -> Result<OhlcvSeries> {
    let mut rows: Vec<(usize, Bar)> = Vec::new();
    for (i, bar) in read_raw_bars(reader)?.into_iter().enumerate() {
        let row = i + 1;
        if let Some((rule, message)) = bar_findings(&bar).into_iter().next() {
            return Err(Error::InvalidSeries(format!("[{rule}] {message} at row {row}")));
        }
        rows.push((row, bar));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: "date".into(),
            message: "file contains no data rows".into(),
        });
    }

    rows.sort_by_key(|(_, bar)| bar.date);
    for pair in rows.windows(2) {
        if pair[0].1.date == pair[1].1.date {
            return Err(Error::InvalidSeries(format!(
                "duplicate date {} at rows {} and {}",
                pair[1].1.date, pair[0].0, pair[1].0
            )));
        }
    }
    Ok(OhlcvSeries {
        symbol: symbol.to_string(),
        bars: rows.into_iter().map(|(_, bar)| bar).collect(),
    })
}

pub fn parse_ohlcv_csv(path: impl AsRef<Path>, symbol: &str) -> Result<OhlcvSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ohlcv_csv(std::io::BufReader::new(file), symbol)
}

/// Writes bars in the ingestion schema. Reals use the shortest round-trip form.
pub fn write_ohlcv_csv(series: &OhlcvSeries, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for b in &series.bars {
        w.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Seeded synthetic benchmark: `close = 10 + 0.01 t + sin(2πt/20) + N(0, noise_sigma²)`.
///
/// Open is the previous close, high/low bracket the body by a small
/// half-normal wick, and dates advance over weekdays only.
pub fn synthetic_series(symbol: &str, n: usize, noise_sigma: f64, seed: u64) -> OhlcvSeries {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, &[0x5359_4e54]));
    let noise = Normal::<f64>::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let wick = Normal::<f64>::new(0.0, 0.05).expect("finite sigma");
    let vol = Normal::<f64>::new(0.0, 1.0).expect("finite sigma");

    let mut date = NaiveDate::from_ymd_opt(2015, 1, 2).expect("valid date");
    let mut bars = Vec::with_capacity(n);
    let mut prev_close: Option<f64> = None;
    for t in 0..n {
        let tf = t as f64;
        let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let close = 10.0 + 0.01 * tf + (2.0 * std::f64::consts::PI * tf / 20.0).sin() + eps;
        let open = prev_close.unwrap_or(close);
        let high = open.max(close) + wick.sample(&mut rng).abs();
        let low = open.min(close) - wick.sample(&mut rng).abs();
        let volume = (1.0e6 * (1.0 + 0.2 * vol.sample(&mut rng))).abs().round();
        bars.push(Bar {
            date,
            open,
            high,
            low,
            close,
            volume,
        });
        prev_close = Some(close);
        date = next_weekday(date);
    }
    OhlcvSeries {
        symbol: symbol.to_string(),
        bars,
    }
}

fn next_weekday(date: NaiveDate) -> NaiveDate {
    use chrono::Datelike;
    let mut d = date.succ_opt().expect("date in range");
    while matches!(d.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun) {
        d = d.succ_opt().expect("date in range");
    }
    d
}
