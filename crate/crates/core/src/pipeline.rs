//! Chronological split, train-fitted min-max scaling, sliding windows and
//! the single pre-training shuffle.
//!
//! The split is applied to table rows before windowing, so no window
//! straddles the train/test boundary.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{Column, FeatureTable};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const SWEEP_SEQ_LENS: [usize; 4] = [5, 10, 30, 60];

/// First `floor(n * train_fraction)` rows train, the rest test.
pub fn chronological_split(table: &FeatureTable, train_fraction: f64) -> Result<(FeatureTable, FeatureTable)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = table.len();
    let cut = (n as f64 * train_fraction).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} rows at {train_fraction} leaves one side empty"
        )));
    }
    Ok((table.slice_rows(0, cut), table.slice_rows(cut, n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

/// Per-column min/max fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<(String, ColumnRange)>,
}

impl Scaler {
    pub fn range(&self, column: &str) -> Result<ColumnRange> {
        self.columns
            .iter()
            .find(|(name, _)| name == column)
            .map(|(_, r)| *r)
            .ok_or_else(|| Error::UnknownColumn(column.to_string()))
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }
}

pub fn fit_minmax(train: &FeatureTable) -> Result<Scaler> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot fit scaler on an empty table".into()));
    }
    let columns = train
        .columns
        .iter()
        .map(|c| {
            let min = c.values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let constant = max == min;
            (c.name.clone(), ColumnRange { min, max, constant })
        })
        .collect();
    Ok(Scaler { columns })
}

fn scale_value(r: ColumnRange, x: f64) -> f64 {
    if r.constant {
        0.0
    } else {
        (x - r.min) / (r.max - r.min)
    }
}

/// Maps each column through `(x - min) / (max - min)`; constant columns map to 0.
/// Values outside the fitted range are passed through unclamped.
pub fn apply_minmax(scaler: &Scaler, table: &FeatureTable) -> Result<FeatureTable> {
    let columns = table
        .columns
        .iter()
        .map(|c| {
            let r = scaler.range(&c.name)?;
            Ok(Column {
                name: c.name.clone(),
                values: c.values.iter().map(|&x| scale_value(r, x)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FeatureTable {
        columns,
        ..table.clone()
    })
}

/// Inverse of [`apply_minmax`] for one column. A constant column maps back to its value.
pub fn invert_minmax(scaler: &Scaler, column: &str, values: &[f64]) -> Result<Vec<f64>> {
    let r = scaler.range(column)?;
    Ok(values
        .iter()
        .map(|&v| if r.constant { r.min } else { v * (r.max - r.min) + r.min })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub seq_len: usize,
    pub horizon: usize,
}

impl WindowSpec {
    pub fn new(seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        Ok(WindowSpec { seq_len, horizon: 1 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `seq_len x n_features`; row k is the bar `seq_len - k` rows before the target.
    pub inputs: Tensor,
    pub target: f64,
    pub target_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
    pub target_column: String,
    pub seq_len: usize,
    pub normalized: bool,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn target_index(&self) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| *n == self.target_column)
            .ok_or_else(|| Error::UnknownColumn(self.target_column.clone()))
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target).collect()
    }
}

/// One sample per target row `t` in `[seq_len, n)`, reading rows `[t - seq_len, t)`.
pub fn make_windows(table: &FeatureTable, spec: WindowSpec) -> Result<WindowedDataset> {
    let n = table.len();
    let l = spec.seq_len;
    if l == 0 {
        return Err(Error::InvalidArgument("sequence length must be positive".into()));
    }
    if n <= l {
        return Err(Error::InsufficientData {
            column: "rows".into(),
            required: l + 1,
            actual: n,
        });
    }
    let target_idx = table.target_index()?;
    let c = table.columns.len();
    let samples = (l..n)
        .map(|t| {
            let mut data = Vec::with_capacity(l * c);
            for row in t - l..t {
                data.extend(table.columns.iter().map(|col| col.values[row]));
            }
            Sample {
                inputs: Tensor::new(vec![l, c], data).expect("window shape"),
                target: table.columns[target_idx].values[t],
                target_date: table.dates[t],
            }
        })
        .collect();
    Ok(WindowedDataset {
        samples,
        feature_names: table.columns.iter().map(|c| c.name.clone()).collect(),
        target_column: table.target_column.clone(),
        seq_len: l,
        normalized: false,
    })
}

/// Permutes samples with the `(seed, "shuffle")` stream. Applied once, to training data only.
pub fn shuffle_once(dataset: &WindowedDataset, seed: u64) -> WindowedDataset {
    let mut out = dataset.clone();
    let mut rng = rng::stream(seed, &[0x5348_5546]);
    out.samples.shuffle(&mut rng);
    out
}

/// Train and test windows plus the scaler that produced them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub scaler: Scaler,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Split, fit the scaler on train rows, scale both sides and window them.
/// Neither side is shuffled here.
pub fn prepare(table: &FeatureTable, train_fraction: f64, spec: WindowSpec) -> Result<PreparedData> {
    let (train, test) = chronological_split(table, train_fraction)?;
    let scaler = fit_minmax(&train)?;
    let mut train_ds = make_windows(&apply_minmax(&scaler, &train)?, spec)?;
    let mut test_ds = make_windows(&apply_minmax(&scaler, &test)?, spec)?;
    train_ds.normalized = true;
    test_ds.normalized = true;
    Ok(PreparedData {
        scaler,
        train: train_ds,
        test: test_ds,
        train_rows: train.len(),
        test_rows: test.len(),
    })
}
