//! Technical indicators and the model-ready feature table.
//!
//! Every indicator returns one optional value per input bar. Values are
//! `None` over a contiguous warm-up prefix and defined afterwards.
//!
//! Conventions: RSI and ATR use Wilder smoothing seeded by a simple mean,
//! Bollinger bands use the population standard deviation, and MACD is the
//! (12, 26, 9) triple. `Chikou_Span` stored at row t is `close[t]`; plotting
//! it 26 periods back would require future data as a time-t feature.

use std::collections::VecDeque;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::OhlcvSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl IndicatorSeries {
    fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        IndicatorSeries {
            name: name.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first defined value, if any.
    pub fn first_defined(&self) -> Option<usize> {
        self.values.iter().position(Option::is_some)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    Ok(())
}

fn check_lengths(lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Shape(format!("input lengths differ: {lens:?}")));
    }
    Ok(())
}

pub fn sma(values: &[f64], window: usize) -> Result<IndicatorSeries> {
    check_window(window)?;
    let mut out = vec![None; values.len()];
    if values.len() >= window {
        for i in window - 1..values.len() {
            let sum: f64 = values[i + 1 - window..=i].iter().sum();
            out[i] = Some(sum / window as f64);
        }
    }
    Ok(IndicatorSeries::new(format!("SMA_{window}"), out))
}

/// Exponential moving average with `alpha = 2 / (window + 1)`, seeded at
/// index `window - 1` by the simple mean of the first `window` values.
pub fn ema(values: &[f64], window: usize) -> Result<IndicatorSeries> {
    check_window(window)?;
    Ok(IndicatorSeries::new(format!("EMA_{window}"), ema_raw(values, window)))
}

fn ema_raw(values: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; values.len()];
    if values.len() < window {
        return out;
    }
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut prev = values[..window].iter().sum::<f64>() / window as f64;
    out[window - 1] = Some(prev);
    for i in window..values.len() {
        // alpha*x + (1-alpha)*prev, in a form that fixes constants exactly
        prev += alpha * (values[i] - prev);
        out[i] = Some(prev);
    }
    out
}

/// Wilder-smoothed running mean of `terms`, where `terms[0]` corresponds to
/// series index 1. The first output lands at series index `window`.
fn wilder(terms: &[f64], window: usize, n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; n];
    if terms.len() < window {
        return out;
    }
    let w = window as f64;
    let mut avg = terms[..window].iter().sum::<f64>() / w;
    out[window] = Some(avg);
    for (k, &term) in terms.iter().enumerate().skip(window) {
        avg = (avg * (w - 1.0) + term) / w;
        out[k + 1] = Some(avg);
    }
    out
}

pub fn rsi(close: &[f64], window: usize) -> Result<IndicatorSeries> {
    check_window(window)?;
    let n = close.len();
    let diffs: Vec<f64> = close.windows(2).map(|w| w[1] - w[0]).collect();
    let gains: Vec<f64> = diffs.iter().map(|d| d.max(0.0)).collect();
    let losses: Vec<f64> = diffs.iter().map(|d| (-d).max(0.0)).collect();
    let avg_gain = wilder(&gains, window, n);
    let avg_loss = wilder(&losses, window, n);
    let values = avg_gain
        .iter()
        .zip(&avg_loss)
        .map(|(g, l)| match (g, l) {
            (Some(g), Some(l)) => Some(rsi_from_averages(*g, *l)),
            _ => None,
        })
        .collect();
    Ok(IndicatorSeries::new(format!("RSI_{window}"), values))
}

pub(crate) fn rsi_from_averages(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        100.0
    } else if avg_gain == 0.0 {
        0.0
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

pub fn true_range(high: &[f64], low: &[f64], close: &[f64]) -> Vec<f64> {
    (1..high.len())
        .map(|i| {
            (high[i] - low[i])
                .max((high[i] - close[i - 1]).abs())
                .max((low[i] - close[i - 1]).abs())
        })
        .collect()
}

pub fn atr(high: &[f64], low: &[f64], close: &[f64], window: usize) -> Result<IndicatorSeries> {
    check_window(window)?;
    check_lengths(&[high.len(), low.len(), close.len()])?;
    let tr = true_range(high, low, close);
    Ok(IndicatorSeries::new(
        format!("ATR_{window}"),
        wilder(&tr, window, high.len()),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bollinger {
    pub middle: IndicatorSeries,
    pub upper: IndicatorSeries,
    pub lower: IndicatorSeries,
}

pub fn bollinger(close: &[f64], window: usize, k: f64) -> Result<Bollinger> {
    check_window(window)?;
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("band width k={k} must be positive")));
    }
    let middle = sma(close, window)?;
    let mut upper = vec![None; close.len()];
    let mut lower = vec![None; close.len()];
    for (i, m) in middle.values.iter().enumerate() {
        if let Some(m) = *m {
            let slice = &close[i + 1 - window..=i];
            let var = slice.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / window as f64;
            let sd = var.sqrt();
            upper[i] = Some(m + k * sd);
            lower[i] = Some(m - k * sd);
        }
    }
    Ok(Bollinger {
        middle: middle.renamed("BB_Middle"),
        upper: IndicatorSeries::new("BB_Upper", upper),
        lower: IndicatorSeries::new("BB_Lower", lower),
    })
}

/// Midpoint of the highest high and lowest low over the `window` bars ending at each index.
fn donchian_mid(high: &[f64], low: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; high.len()];
    // monotone deques of indices for the running max/min
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    for i in 0..high.len() {
        while maxq.back().is_some_and(|&j| high[j] <= high[i]) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| low[j] >= low[i]) {
            minq.pop_back();
        }
        minq.push_back(i);
        if i + 1 >= window {
            let start = i + 1 - window;
            while maxq.front().is_some_and(|&j| j < start) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&j| j < start) {
                minq.pop_front();
            }
            out[i] = Some((high[maxq[0]] + low[minq[0]]) / 2.0);
        }
    }
    out
}

fn shift_forward(values: &[Option<f64>], by: usize) -> Vec<Option<f64>> {
    let n = values.len();
    (0..n).map(|i| if i >= by { values[i - by] } else { None }).collect()
}

pub const TENKAN_PERIOD: usize = 9;
pub const KIJUN_PERIOD: usize = 26;
pub const SENKOU_B_PERIOD: usize = 52;
pub const ICHIMOKU_SHIFT: usize = 26;

#[derive(Debug, Clone, PartialEq)]
pub struct Ichimoku {
    pub tenkan: IndicatorSeries,
    pub kijun: IndicatorSeries,
    pub senkou_a: IndicatorSeries,
    pub senkou_b: IndicatorSeries,
    pub chikou: IndicatorSeries,
}

/// Ichimoku lines as time-t features. Leading spans at row t use only bars
/// at or before `t - 26`; the lagging span at row t is `close[t]`.
pub fn ichimoku(high: &[f64], low: &[f64], close: &[f64]) -> Result<Ichimoku> {
    check_lengths(&[high.len(), low.len(), close.len()])?;
    let tenkan = donchian_mid(high, low, TENKAN_PERIOD);
    let kijun = donchian_mid(high, low, KIJUN_PERIOD);
    let span_a: Vec<Option<f64>> = tenkan
        .iter()
        .zip(&kijun)
        .map(|(t, k)| Some((((*t)?) + ((*k)?)) / 2.0))
        .collect();
    let span_b = donchian_mid(high, low, SENKOU_B_PERIOD);
    Ok(Ichimoku {
        senkou_a: IndicatorSeries::new("Senkou_Span_A", shift_forward(&span_a, ICHIMOKU_SHIFT)),
        senkou_b: IndicatorSeries::new("Senkou_Span_B", shift_forward(&span_b, ICHIMOKU_SHIFT)),
        tenkan: IndicatorSeries::new("Tenkan_Sen", tenkan),
        kijun: IndicatorSeries::new("Kijun_Sen", kijun),
        chikou: IndicatorSeries::new("Chikou_Span", close.iter().map(|&c| Some(c)).collect()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub macd: IndicatorSeries,
    pub signal: IndicatorSeries,
    pub histogram: IndicatorSeries,
}

pub fn macd(close: &[f64], fast: usize, slow: usize, signal: usize) -> Result<Macd> {
    check_window(fast)?;
    check_window(signal)?;
    if fast >= slow {
        return Err(Error::InvalidArgument(format!(
            "MACD fast period {fast} must be below slow period {slow}"
        )));
    }
    let line: Vec<Option<f64>> = ema_raw(close, fast)
        .into_iter()
        .zip(ema_raw(close, slow))
        .map(|(f, s)| Some(f? - s?))
        .collect();
    let mut signal_line = vec![None; close.len()];
    if let Some(start) = line.iter().position(Option::is_some) {
        let defined: Vec<f64> = line[start..].iter().map(|v| v.expect("contiguous")).collect();
        for (k, v) in ema_raw(&defined, signal).into_iter().enumerate() {
            signal_line[start + k] = v;
        }
    }
    let histogram = line
        .iter()
        .zip(&signal_line)
        .map(|(m, s)| Some((*m)? - (*s)?))
        .collect();
    Ok(Macd {
        macd: IndicatorSeries::new("MACD", line),
        signal: IndicatorSeries::new("MACD_Signal", signal_line),
        histogram: IndicatorSeries::new("MACD_Histogram", histogram),
    })
}

pub const RAW_COLUMNS: [&str; 5] = ["open", "high", "low", "close", "volume"];

/// Canonical column order of a [`FeatureTable`].
pub const FEATURE_COLUMNS: [&str; 25] = [
    "open",
    "high",
    "low",
    "close",
    "volume",
    "EMA_25",
    "EMA_50",
    "EMA_100",
    "EMA_200",
    "EMA_300",
    "RSI_14",
    "ATR_14",
    "BB_Middle",
    "BB_Upper",
    "BB_Lower",
    "Tenkan_Sen",
    "Kijun_Sen",
    "Senkou_Span_A",
    "Senkou_Span_B",
    "Chikou_Span",
    "MACD",
    "MACD_Signal",
    "MACD_Histogram",
    "MA_200",
    "MA_300",
];

/// First defined index of each canonical column (0 for raw bars).
pub fn warmup_index(column: &str) -> Option<usize> {
    let w = match column {
        "open" | "high" | "low" | "close" | "volume" | "Chikou_Span" => 0,
        "EMA_25" => 24,
        "EMA_50" => 49,
        "EMA_100" => 99,
        "EMA_200" | "MA_200" => 199,
        "EMA_300" | "MA_300" => 299,
        "RSI_14" | "ATR_14" => 14,
        "BB_Middle" | "BB_Upper" | "BB_Lower" => 19,
        "Tenkan_Sen" => TENKAN_PERIOD - 1,
        "Kijun_Sen" => KIJUN_PERIOD - 1,
        "Senkou_Span_A" => KIJUN_PERIOD - 1 + ICHIMOKU_SHIFT,
        "Senkou_Span_B" => SENKOU_B_PERIOD - 1 + ICHIMOKU_SHIFT,
        "MACD" => 25,
        "MACD_Signal" | "MACD_Histogram" => 25 + 8,
        _ => return None,
    };
    Some(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Per-date feature matrix with a fixed column order and no missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub symbol: String,
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<Column>,
    pub target_column: String,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn target_index(&self) -> Result<usize> {
        self.column_index(&self.target_column)
            .ok_or_else(|| Error::UnknownColumn(self.target_column.clone()))
    }

    /// Rows `[start, end)` as a new table.
    pub fn slice_rows(&self, start: usize, end: usize) -> FeatureTable {
        FeatureTable {
            symbol: self.symbol.clone(),
            dates: self.dates[start..end].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: c.values[start..end].to_vec(),
                })
                .collect(),
            target_column: self.target_column.clone(),
        }
    }

    /// CSV with a leading `date` column; reals carry 17 significant digits.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (row, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            rec.extend(self.columns.iter().map(|c| format!("{:.16e}", c.values[row])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read, symbol: &str, target_column: &str) -> Result<FeatureTable> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("date") {
            return Err(Error::Parse {
                row: 0,
                column: "date".into(),
                message: "first column must be `date`".into(),
            });
        }
        let mut columns: Vec<Column> = headers
            .iter()
            .skip(1)
            .map(|h| Column {
                name: h.to_string(),
                values: Vec::new(),
            })
            .collect();
        let mut dates = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let raw = rec.get(0).unwrap_or("");
            dates.push(NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| Error::Parse {
                row,
                column: "date".into(),
                message: e.to_string(),
            })?);
            for (c, col) in columns.iter_mut().enumerate() {
                let raw = rec.get(c + 1).unwrap_or("");
                col.values.push(raw.parse().map_err(|_| Error::Parse {
                    row,
                    column: col.name.clone(),
                    message: format!("cannot parse `{raw}`"),
                })?);
            }
        }
        let table = FeatureTable {
            symbol: symbol.to_string(),
            dates,
            columns,
            target_column: target_column.to_string(),
        };
        table.target_index()?;
        Ok(table)
    }
}

/// Computes every canonical column and drops the leading rows where any
/// indicator is still warming up.
pub fn build_feature_table(series: &OhlcvSeries) -> Result<FeatureTable> {
    let n = series.len();
    let required = FEATURE_COLUMNS
        .iter()
        .map(|c| (*c, warmup_index(c).expect("canonical column") + 1))
        .rev()
        .max_by_key(|(_, r)| *r)
        .expect("non-empty column list");
    if n < required.1 {
        return Err(Error::InsufficientData {
            column: required.0.to_string(),
            required: required.1,
            actual: n,
        });
    }

    let open: Vec<f64> = series.bars.iter().map(|b| b.open).collect();
    let high: Vec<f64> = series.bars.iter().map(|b| b.high).collect();
    let low: Vec<f64> = series.bars.iter().map(|b| b.low).collect();
    let close: Vec<f64> = series.bars.iter().map(|b| b.close).collect();
    let volume: Vec<f64> = series.bars.iter().map(|b| b.volume).collect();

    let defined = |name: &str, v: &[f64]| IndicatorSeries::new(name, v.iter().map(|&x| Some(x)).collect());
    let bb = bollinger(&close, 20, 2.0)?;
    let ich = ichimoku(&high, &low, &close)?;
    let m = macd(&close, 12, 26, 9)?;
    let mut all = vec![
        defined("open", &open),
        defined("high", &high),
        defined("low", &low),
        defined("close", &close),
        defined("volume", &volume),
    ];
    for w in [25, 50, 100, 200, 300] {
        all.push(ema(&close, w)?);
    }
    all.push(rsi(&close, 14)?);
    all.push(atr(&high, &low, &close, 14)?);
    all.extend([bb.middle, bb.upper, bb.lower]);
    all.extend([ich.tenkan, ich.kijun, ich.senkou_a, ich.senkou_b, ich.chikou]);
    all.extend([m.macd, m.signal, m.histogram]);
    all.push(sma(&close, 200)?.renamed("MA_200"));
    all.push(sma(&close, 300)?.renamed("MA_300"));
    debug_assert!(all.iter().map(|s| s.name.as_str()).eq(FEATURE_COLUMNS));

    let start = all.iter().map(|s| s.first_defined().unwrap_or(n)).max().unwrap_or(0);
    let columns = all
        .into_iter()
        .map(|s| Column {
            values: s.values[start..]
                .iter()
                .map(|v| v.expect("defined after warm-up"))
                .collect(),
            name: s.name,
        })
        .collect();
    Ok(FeatureTable {
        symbol: series.symbol.clone(),
        dates: series.bars[start..].iter().map(|b| b.date).collect(),
        columns,
        target_column: "close".to_string(),
    })
}
