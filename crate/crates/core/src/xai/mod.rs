//! Model-agnostic attribution over flattened input windows.

mod lime;
mod shapley;

pub use lime::{lime_explain, FeatureStats, LimeConfig, MIN_TOTAL_WEIGHT};
pub use shapley::{exact_shapley, kernel_shap, shapley_kernel, MAX_EXACT_FEATURES};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::WindowedDataset;
use crate::tensor::Tensor;
use crate::trainer::TrainedModel;

/// A (column, lag) input; lag 1 is the most recent row of the window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureName {
    pub column: String,
    pub lag: usize,
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_t{}", self.column, self.lag)
    }
}

/// Names in flat order: column-major, lag descending within each column.
pub fn flat_feature_names(columns: &[String], seq_len: usize) -> Vec<FeatureName> {
    columns
        .iter()
        .flat_map(|c| {
            (1..=seq_len)
                .rev()
                .map(move |lag| FeatureName { column: c.clone(), lag })
        })
        .collect()
}

/// `flat[c * L + k] = window[k][c]`, so index `c * L + k` carries lag `L - k`.
pub fn flatten_window(window: &Tensor, columns: &[String]) -> Result<(Vec<f64>, Vec<FeatureName>)> {
    if window.shape().len() != 2 || window.cols() != columns.len() {
        return Err(Error::Shape(format!(
            "window {:?} with {} column names",
            window.shape(),
            columns.len()
        )));
    }
    let (l, c) = (window.rows(), window.cols());
    let mut flat = Vec::with_capacity(l * c);
    for ch in 0..c {
        for k in 0..l {
            flat.push(window.at2(k, ch));
        }
    }
    Ok((flat, flat_feature_names(columns, l)))
}

pub fn unflatten_window(flat: &[f64], seq_len: usize, n_features: usize) -> Result<Tensor> {
    if flat.len() != seq_len * n_features {
        return Err(Error::Shape(format!(
            "{} values for a {seq_len} x {n_features} window",
            flat.len()
        )));
    }
    let mut data = vec![0.0; flat.len()];
    for ch in 0..n_features {
        for k in 0..seq_len {
            data[k * n_features + ch] = flat[ch * seq_len + k];
        }
    }
    Tensor::new(vec![seq_len, n_features], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactShapley,
    KernelShap,
    Lime,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Method::ExactShapley => "exact_shapley",
            Method::KernelShap => "kernel_shap",
            Method::Lime => "lime",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_shapley" => Ok(Method::ExactShapley),
            "kernel_shap" | "shap" => Ok(Method::KernelShap),
            "lime" => Ok(Method::Lime),
            _ => Err(Error::InvalidArgument(format!("unknown attribution method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Model evaluations (coalitions or perturbations) used in the fit.
    pub n_samples: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    /// Position in the flattened input.
    pub index: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    /// Ordered by flat index. SHAP methods list every feature; LIME only the selected ones.
    pub features: Vec<FeatureScore>,
    /// Expected output for SHAP, surrogate intercept for LIME.
    pub base_value: f64,
    pub prediction: f64,
    pub target_date: Option<NaiveDate>,
    pub diagnostics: Diagnostics,
}

impl Attribution {
    pub(crate) fn indexed(
        method: Method,
        scores: Vec<f64>,
        base_value: f64,
        prediction: f64,
        diagnostics: Diagnostics,
    ) -> Self {
        Attribution {
            method,
            features: scores
                .into_iter()
                .enumerate()
                .map(|(index, score)| FeatureScore {
                    index,
                    name: format!("x{index}"),
                    score,
                })
                .collect(),
            base_value,
            prediction,
            target_date: None,
            diagnostics,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.score).collect()
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.score)
    }

    /// Replaces positional names with `names[index]`.
    pub fn with_names(mut self, names: &[String]) -> Result<Self> {
        for f in &mut self.features {
            f.name = names
                .get(f.index)
                .ok_or_else(|| Error::Shape(format!("no name for feature {}", f.index)))?
                .clone();
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XaiOptions {
    /// Coalitions for KernelSHAP, counting the two constraint coalitions.
    pub shap_samples: usize,
    /// Coalitions per instance for the global summary.
    pub global_samples: usize,
    /// Most recent test instances in the global summary; `None` uses all.
    pub global_instances: Option<usize>,
    pub lime: LimeConfig,
    pub seed: u64,
}

impl Default for XaiOptions {
    fn default() -> Self {
        XaiOptions {
            shap_samples: 2048,
            global_samples: 1024,
            global_instances: None,
            lime: LimeConfig::default(),
            seed: 42,
        }
    }
}

/// Per-flat-feature mean and population std over a dataset's windows.
pub fn window_stats(ds: &WindowedDataset) -> Result<Vec<FeatureStats>> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let flats: Vec<Vec<f64>> = ds
        .samples
        .iter()
        .map(|s| flatten_window(&s.inputs, &ds.feature_names).map(|(f, _)| f))
        .collect::<Result<_>>()?;
    let m = flats[0].len();
    let n = flats.len() as f64;
    Ok((0..m)
        .map(|j| {
            let mean = flats.iter().map(|f| f[j]).sum::<f64>() / n;
            let var = flats.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n;
            FeatureStats { mean, std: var.sqrt() }
        })
        .collect())
}

fn check_layout(model: &TrainedModel, ds: &WindowedDataset) -> Result<()> {
    if ds.feature_names != model.feature_names || ds.seq_len != model.params.shape.seq_len {
        return Err(Error::InvalidArgument("dataset layout does not match the model".into()));
    }
    Ok(())
}

/// Normalized-output model function over flat inputs.
pub fn flat_model_fn(model: &TrainedModel) -> impl Fn(&[f64]) -> Result<f64> + Sync + '_ {
    let (l, c) = (model.params.shape.seq_len, model.params.shape.n_features);
    move |flat| model.params.predict(&unflatten_window(flat, l, c)?)
}

/// Explains one flattened instance with the given background statistics.
pub fn explain_instance(
    model: &TrainedModel,
    window: &Tensor,
    stats: &[FeatureStats],
    method: Method,
    n_samples: usize,
    opts: &XaiOptions,
) -> Result<Attribution> {
    let (x, names) = flatten_window(window, &model.feature_names)?;
    let names: Vec<String> = names.iter().map(ToString::to_string).collect();
    let background: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    let f = flat_model_fn(model);
    let a = match method {
        Method::ExactShapley => exact_shapley(f, &x, &background)?,
        Method::KernelShap => kernel_shap(f, &x, &background, n_samples, opts.seed)?,
        Method::Lime => lime_explain(
            f,
            &x,
            stats,
            &LimeConfig {
                seed: opts.seed,
                ..opts.lime
            },
        )?,
    };
    a.with_names(&names)
}

/// Attribution for the chronologically last sample of `dataset`, with the
/// background taken from `train`.
pub fn explain_final_instance(
    model: &TrainedModel,
    train: &WindowedDataset,
    dataset: &WindowedDataset,
    method: Method,
    opts: &XaiOptions,
) -> Result<Attribution> {
    check_layout(model, train)?;
    check_layout(model, dataset)?;
    let last = dataset
        .samples
        .iter()
        .max_by_key(|s| s.target_date)
        .ok_or_else(|| Error::InvalidArgument("no instance to explain".into()))?;
    let stats = window_stats(train)?;
    let mut a = explain_instance(model, &last.inputs, &stats, method, opts.shap_samples, opts)?;
    a.target_date = Some(last.target_date);
    Ok(a)
}

/// KernelSHAP attributions for the most recent `opts.global_instances` samples.
pub fn explain_dataset(
    model: &TrainedModel,
    train: &WindowedDataset,
    dataset: &WindowedDataset,
    opts: &XaiOptions,
) -> Result<Vec<Attribution>> {
    check_layout(model, train)?;
    check_layout(model, dataset)?;
    let stats = window_stats(train)?;
    let mut samples: Vec<_> = dataset.samples.iter().collect();
    samples.sort_by_key(|s| s.target_date);
    let skip = opts.global_instances.map_or(0, |k| samples.len().saturating_sub(k));
    samples[skip..]
        .iter()
        .map(|s| {
            let mut a = explain_instance(model, &s.inputs, &stats, Method::KernelShap, opts.global_samples, opts)?;
            a.target_date = Some(s.target_date);
            Ok(a)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    /// (feature, mean |score|), descending, ties in name order.
    pub ranking: Vec<(String, f64)>,
}

pub fn global_shap_summary(attributions: &[Attribution]) -> Result<GlobalSummary> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::InvalidArgument("no attributions to summarize".into()))?;
    let names: Vec<&str> = first.features.iter().map(|f| f.name.as_str()).collect();
    let mut sums = vec![0.0; names.len()];
    for a in attributions {
        if a.features.len() != names.len() || a.features.iter().zip(&names).any(|(f, n)| f.name != *n) {
            return Err(Error::InvalidArgument("attributions do not share a feature set".into()));
        }
        for (s, f) in sums.iter_mut().zip(&a.features) {
            *s += f.score.abs();
        }
    }
    let n = attributions.len() as f64;
    let mut ranking: Vec<(String, f64)> = names.iter().zip(sums).map(|(k, s)| (k.to_string(), s / n)).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(GlobalSummary { ranking })
}

pub fn write_global_summary<W: std::io::Write>(summary: &GlobalSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "mean_abs_shap"])?;
    for (f, v) in &summary.ranking {
        w.write_record([f.clone(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("global summary", e))?;
    Ok(())
}

pub fn read_global_summary<R: std::io::Read>(reader: R) -> Result<GlobalSummary> {
    let mut r = csv::Reader::from_reader(reader);
    let ranking = r
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let value = rec.get(1).unwrap_or_default();
            let v = value.parse::<f64>().map_err(|e| Error::Parse {
                row: i + 1,
                column: "mean_abs_shap".into(),
                message: e.to_string(),
            })?;
            Ok((rec.get(0).unwrap_or_default().to_owned(), v))
        })
        .collect::<Result<_>>()?;
    Ok(GlobalSummary { ranking })
}

/// Scores are in the model's normalized target units.
pub const SCORE_UNITS: &str = "normalized_target";

/// Key/value header lines (`method`, `units`, `base_value`, `prediction`,
/// `target_date`) followed by a `feature,score` table.
pub fn write_local_explanation<W: std::io::Write>(a: &Attribution, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record(["method", a.method.id()])?;
    w.write_record(["units", SCORE_UNITS])?;
    w.write_record(["base_value".to_string(), a.base_value.to_string()])?;
    w.write_record(["prediction".to_string(), a.prediction.to_string()])?;
    let date = a
        .target_date
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_default();
    w.write_record(["target_date".to_string(), date])?;
    w.write_record(["feature", "score"])?;
    for f in &a.features {
        w.write_record([f.name.clone(), f.score.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("local explanation", e))?;
    Ok(())
}

/// Parsed local explanation file. Flat indices are not stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalExplanation {
    pub method: Method,
    pub base_value: f64,
    pub prediction: f64,
    pub target_date: Option<NaiveDate>,
    pub scores: Vec<(String, f64)>,
}

pub fn read_local_explanation<R: std::io::Read>(reader: R) -> Result<LocalExplanation> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let records: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    let bad = |row: usize, message: String| Error::Parse {
        row,
        column: records.get(row).and_then(|r| r.get(0)).unwrap_or_default().to_owned(),
        message,
    };
    let field = |row: usize, key: &str| -> Result<String> {
        match records.get(row) {
            Some(r) if r.get(0) == Some(key) => Ok(r.get(1).unwrap_or_default().to_owned()),
            _ => Err(bad(row, format!("expected `{key}` line"))),
        }
    };
    let num =
        |row: usize, key: &str| -> Result<f64> { field(row, key)?.parse::<f64>().map_err(|e| bad(row, e.to_string())) };
    let method: Method = field(0, "method")?.parse()?;
    field(1, "units")?;
    let base_value = num(2, "base_value")?;
    let prediction = num(3, "prediction")?;
    let date = field(4, "target_date")?;
    let target_date = if date.is_empty() {
        None
    } else {
        Some(NaiveDate::parse_from_str(&date, "%Y-%m-%d").map_err(|e| bad(4, e.to_string()))?)
    };
    if records.get(5).map(|r| r.iter().collect::<Vec<_>>()) != Some(vec!["feature", "score"]) {
        return Err(bad(5, "expected `feature,score` header".into()));
    }
    let scores = records[6..]
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let v = rec
                .get(1)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| bad(i + 6, e.to_string()))?;
            Ok((rec.get(0).unwrap_or_default().to_owned(), v))
        })
        .collect::<Result<_>>()?;
    Ok(LocalExplanation {
        method,
        base_value,
        prediction,
        target_date,
        scores,
    })
}
