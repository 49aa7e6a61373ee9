//! Subcommand implementations. Each returns an error only for usage or IO
//! problems; per-pair experiment failures are recorded in the manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use stockcast_core::market_data::{read_raw_bars, validate_series, Finding};
use stockcast_core::metrics::{format_fixed, metrics_table, write_metrics_table};
use stockcast_core::trainer::{write_loss_curve, write_predictions};
use stockcast_core::xai::{
    explain_dataset, explain_final_instance, global_shap_summary, write_global_summary, write_local_explanation,
    Method, XaiOptions,
};
use stockcast_core::{
    build_feature_table, evaluate, parse_ohlcv_csv, predict, prepare, train, FeatureTable, MetricsReport, ModelKind,
    OhlcvSeries, PreparedData, TrainedModel, WindowSpec,
};

use crate::config::ExperimentConfig;
use crate::plot::{line_chart, Line};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_MANIFEST_FILE: &str = "sweep_manifest.json";
pub const SWEEP_TABLE_FILE: &str = "sweep_table.csv";
pub const CHECKPOINT_FILE: &str = "model.json";

// ---------------------------------------------------------------------------
// validate / featurize

/// Prints one line per finding and a summary to `out`. Rows are 1-based data
/// rows of the file.
pub fn cmd_validate(path: &Path, out: &mut impl Write) -> i32 {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return EXIT_USAGE;
        }
    };
    let (errors, warnings) = match read_raw_bars(std::io::BufReader::new(file)) {
        Ok(bars) => validate_bars(bars),
        Err(stockcast_core::Error::Io { path, source }) => {
            eprintln!("cannot read {}: {source}", path.display());
            return EXIT_USAGE;
        }
        Err(e) => (vec![format!("error: {e}")], vec![]),
    };
    for line in errors.iter().chain(&warnings) {
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "{} errors, {} warnings", errors.len(), warnings.len());
    if errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

/// Checks bars the way the loader sees them: sorted by date, with findings
/// mapped back to file rows.
fn validate_bars(bars: Vec<stockcast_core::Bar>) -> (Vec<String>, Vec<String>) {
    let mut order: Vec<usize> = (0..bars.len()).collect();
    order.sort_by_key(|&i| bars[i].date);
    let series = OhlcvSeries {
        symbol: String::new(),
        bars: order.iter().map(|&i| bars[i]).collect(),
    };
    let report = validate_series(&series);
    let line = |level: &str, f: &Finding| {
        let row = if bars.is_empty() { 0 } else { order[f.row] + 1 };
        format!("{level}: row {row}: [{}] {}", f.rule, f.message)
    };
    (
        report.errors.iter().map(|f| line("error", f)).collect(),
        report.warnings.iter().map(|f| line("warning", f)).collect(),
    )
}

pub fn cmd_featurize(input: &Path, symbol: &str, output: &Path) -> Result<i32> {
    let series = match parse_ohlcv_csv(input, symbol) {
        Ok(s) => s,
        Err(stockcast_core::Error::Io { path, source }) => {
            return Err(anyhow!(source).context(format!("cannot read {}", path.display())))
        }
        Err(e) => {
            eprintln!("{}: {e}", input.display());
            return Ok(EXIT_FAILED);
        }
    };
    let table = match build_feature_table(&series) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", input.display());
            return Ok(EXIT_FAILED);
        }
    };
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    std::fs::write(output, buf).with_context(|| format!("cannot write {}", output.display()))?;
    eprintln!(
        "{} rows x {} columns -> {}",
        table.len(),
        table.columns.len(),
        output.display()
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// artifacts

/// Writes files under a root and remembers their relative paths.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> Self {
        Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> stockcast_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).with_context(|| format!("cannot serialize {rel}"))?;
        self.write(rel, &buf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub symbol: String,
    pub model: ModelKind,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub symbol: String,
    pub model: ModelKind,
    pub seq_len: usize,
    pub status: PairStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<String>,
    /// Wall-clock seconds per stage.
    pub seconds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub pairs: Vec<PairRecord>,
    /// Files written outside any pair directory, except the manifest itself.
    pub files: Vec<String>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn failed(&self) -> bool {
        self.pairs.iter().any(|p| p.status == PairStatus::Failed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.failed() {
            EXIT_FAILED
        } else {
            EXIT_OK
        }
    }

    /// Every file the run wrote, relative to the output directory.
    pub fn inventory(&self) -> Vec<String> {
        let mut all: Vec<String> = self.pairs.iter().flat_map(|p| p.files.iter().cloned()).collect();
        all.extend(self.files.iter().cloned());
        all
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn pair_dir(symbol: &str, kind: ModelKind) -> String {
    format!("{symbol}/{}", kind.id())
}

fn stopwatch<T>(seconds: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    seconds.insert(stage.to_string(), t.elapsed().as_secs_f64());
    r
}

fn load_table(path: &Path, symbol: &str) -> Result<FeatureTable> {
    let series = parse_ohlcv_csv(path, symbol)?;
    Ok(build_feature_table(&series)?)
}

/// Loaded feature table per symbol, or the reason it could not be built.
fn load_inputs(cfg: &ExperimentConfig) -> Vec<(String, std::result::Result<FeatureTable, String>)> {
    cfg.inputs
        .iter()
        .map(|i| {
            let table = load_table(&i.path, &i.symbol).map_err(|e| format!("{}: {e:#}", i.path.display()));
            (i.symbol.clone(), table)
        })
        .collect()
}

fn write_explanations(
    out: &mut Outputs,
    dir: &str,
    model: &TrainedModel,
    data: &PreparedData,
    xai: &XaiOptions,
    seconds: &mut BTreeMap<String, f64>,
) -> Result<()> {
    for (method, file) in [
        (Method::KernelShap, "local_explanation_shap.csv"),
        (Method::Lime, "local_explanation_lime.csv"),
    ] {
        let a = stopwatch(seconds, &format!("explain_{}", method.id()), || {
            Ok(explain_final_instance(model, &data.train, &data.test, method, xai)?)
        })?;
        out.write_with(&format!("{dir}/{file}"), |w| write_local_explanation(&a, w))?;
    }
    let summary = stopwatch(seconds, "explain_global", || {
        let all = explain_dataset(model, &data.train, &data.test, xai)?;
        Ok(global_shap_summary(&all)?)
    })?;
    out.write_with(&format!("{dir}/shap_global.csv"), |w| write_global_summary(&summary, w))
}

fn write_plots(
    out: &mut Outputs,
    dir: &str,
    model: &TrainedModel,
    preds: &[stockcast_core::trainer::Prediction],
) -> Result<()> {
    let y_true: Vec<f64> = preds.iter().map(|p| p.y_true).collect();
    let y_pred: Vec<f64> = preds.iter().map(|p| p.y_pred).collect();
    let kind = model.params.kind;
    let svg = line_chart(
        &format!("{}: forecast vs actual", kind.display_name()),
        "test sample",
        &[
            Line {
                label: "actual",
                values: &y_true,
            },
            Line {
                label: "forecast",
                values: &y_pred,
            },
        ],
    );
    out.write(&format!("{dir}/predictions.svg"), svg.as_bytes())?;
    let train: Vec<f64> = model.loss_curve.iter().map(|e| e.train_loss).collect();
    let test: Vec<f64> = model.loss_curve.iter().map(|e| e.test_loss).collect();
    let svg = line_chart(
        &format!("{}: loss", kind.display_name()),
        "epoch",
        &[
            Line {
                label: "train",
                values: &train,
            },
            Line {
                label: "test",
                values: &test,
            },
        ],
    );
    out.write(&format!("{dir}/loss_curve.svg"), svg.as_bytes())
}

fn run_pair(
    cfg: &ExperimentConfig,
    symbol: &str,
    table: &FeatureTable,
    kind: ModelKind,
    out: &mut Outputs,
    seconds: &mut BTreeMap<String, f64>,
) -> Result<MetricsReport> {
    let tc = cfg.train_config(kind);
    let dir = pair_dir(symbol, kind);
    let data = stopwatch(seconds, "prepare", || {
        Ok(prepare(table, cfg.train_fraction, WindowSpec::new(tc.seq_len)?)?)
    })?;
    let model = stopwatch(seconds, "train", || {
        Ok(train(kind, &data.train, &data.test, &data.scaler, &tc)?)
    })?;
    out.write(&format!("{dir}/{CHECKPOINT_FILE}"), model.to_json()?.as_bytes())?;
    out.write_with(&format!("{dir}/loss_curve.csv"), |w| {
        write_loss_curve(&model.loss_curve, w)
    })?;

    let (preds, metrics) = stopwatch(seconds, "evaluate", || {
        let preds = predict(&model, &data.test)?;
        let y_true: Vec<f64> = preds.iter().map(|p| p.y_true).collect();
        let y_pred: Vec<f64> = preds.iter().map(|p| p.y_pred).collect();
        let metrics = evaluate(&y_true, &y_pred)?;
        Ok((preds, metrics))
    })?;
    out.write_with(&format!("{dir}/predictions.csv"), |w| write_predictions(&preds, w))?;
    let file = MetricsFile {
        symbol: symbol.to_string(),
        model: kind,
        metrics,
    };
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    out.write(&format!("{dir}/metrics.json"), json.as_bytes())?;
    let rows = metrics_table(&BTreeMap::from([(symbol.to_string(), metrics)]));
    out.write_with(&format!("{dir}/metrics_table.csv"), |w| write_metrics_table(&rows, w))?;

    write_explanations(out, &dir, &model, &data, &cfg.xai_options(), seconds)?;
    if cfg.plots {
        write_plots(out, &dir, &model, &preds)?;
    }
    Ok(metrics)
}

fn write_manifest(root: &Path, name: &str, manifest: &RunManifest) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    let path = root.join(name);
    std::fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))
}

fn create_output_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.output_dir.display()))
}

fn report(p: &PairRecord) {
    match (&p.status, &p.metrics, &p.error) {
        (PairStatus::Ok, Some(m), _) => eprintln!(
            "{} {} L={}: ok  MAPE {}%  R² {}",
            p.symbol,
            p.model,
            p.seq_len,
            format_fixed(m.mape_percent, 4),
            format_fixed(m.r2, 4)
        ),
        (_, _, Some(e)) => eprintln!("{} {} L={}: FAILED {e}", p.symbol, p.model, p.seq_len),
        _ => eprintln!("{} {} L={}: {:?}", p.symbol, p.model, p.seq_len, p.status),
    }
}

// ---------------------------------------------------------------------------
// run

/// Runs every (symbol, model) pair and writes artifacts plus `manifest.json`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    create_output_dir(cfg)?;
    let started = Instant::now();
    let mut out = Outputs::new(&cfg.output_dir);
    let mut pairs = Vec::new();
    for (symbol, table) in load_inputs(cfg) {
        for &kind in &cfg.models {
            let mut seconds = BTreeMap::new();
            let before = out.files.len();
            let result = match &table {
                Ok(t) => run_pair(cfg, &symbol, t, kind, &mut out, &mut seconds),
                Err(e) => Err(anyhow!("{e}")),
            };
            let record = PairRecord {
                symbol: symbol.clone(),
                model: kind,
                seq_len: cfg.train_config(kind).seq_len,
                status: if result.is_ok() {
                    PairStatus::Ok
                } else {
                    PairStatus::Failed
                },
                error: result.as_ref().err().map(|e| format!("{e:#}")),
                files: out.files.split_off(before),
                seconds,
                metrics: result.ok(),
            };
            report(&record);
            pairs.push(record);
        }
    }

    for &kind in &cfg.models {
        let per_symbol: BTreeMap<String, MetricsReport> = pairs
            .iter()
            .filter(|p| p.model == kind)
            .filter_map(|p| Some((p.symbol.clone(), p.metrics?)))
            .collect();
        if !per_symbol.is_empty() {
            let rows = metrics_table(&per_symbol);
            out.write_with(&format!("metrics_table_{}.csv", kind.id()), |w| {
                write_metrics_table(&rows, w)
            })?;
        }
    }

    let manifest = RunManifest {
        toolkit: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "run".into(),
        config: cfg.clone(),
        pairs,
        files: out.files,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&cfg.output_dir, MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// sweep

pub const SWEEP_HEADER: [&str; 10] = [
    "symbol", "model", "seq_len", "MSE", "MAE", "MAPE (%)", "RMSE", "R²", "best", "status",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub symbol: String,
    pub model: ModelKind,
    pub seq_len: usize,
    /// MSE, MAE, MAPE (%), RMSE, R² at 4 decimals; empty when the pair failed.
    pub cells: [String; 5],
    pub best: bool,
    pub ok: bool,
}

/// Marks the lowest-MSE successful row of each (symbol, model) group.
pub fn mark_best(records: &[PairRecord]) -> Vec<SweepRow> {
    let mut best: BTreeMap<(&str, ModelKind), (usize, f64)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(m) = r.metrics {
            let e = best.entry((&r.symbol, r.model)).or_insert((i, m.mse));
            if m.mse < e.1 {
                *e = (i, m.mse);
            }
        }
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| SweepRow {
            symbol: r.symbol.clone(),
            model: r.model,
            seq_len: r.seq_len,
            cells: r.metrics.map_or_else(Default::default, |m| {
                [m.mse, m.mae, m.mape_percent, m.rmse, m.r2].map(|v| format_fixed(v, 4))
            }),
            best: best.get(&(r.symbol.as_str(), r.model)).is_some_and(|b| b.0 == i),
            ok: r.status == PairStatus::Ok,
        })
        .collect()
}

pub fn write_sweep_table<W: Write>(rows: &[SweepRow], writer: W) -> stockcast_core::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let mut rec = vec![r.symbol.clone(), r.model.id().to_string(), r.seq_len.to_string()];
        rec.extend(r.cells.iter().cloned());
        rec.push(if r.best { "*" } else { "" }.to_string());
        rec.push(if r.ok { "ok" } else { "failed" }.to_string());
        w.write_record(rec)?;
    }
    w.flush()
        .map_err(|e| stockcast_core::Error::InvalidArgument(format!("sweep table: {e}")))?;
    Ok(())
}

pub fn read_sweep_table<R: std::io::Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != SWEEP_HEADER {
        return Err(anyhow!("unexpected sweep header {header:?}"));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let cell = |i: usize| rec.get(i).unwrap_or_default().to_owned();
            Ok(SweepRow {
                symbol: cell(0),
                model: cell(1).parse()?,
                seq_len: cell(2).parse()?,
                cells: [cell(3), cell(4), cell(5), cell(6), cell(7)],
                best: cell(8) == "*",
                ok: match cell(9).as_str() {
                    "ok" => true,
                    "failed" => false,
                    other => return Err(anyhow!("unknown status `{other}`")),
                },
            })
        })
        .collect()
}

fn sweep_pair(
    cfg: &ExperimentConfig,
    table: &FeatureTable,
    kind: ModelKind,
    seq_len: usize,
    seconds: &mut BTreeMap<String, f64>,
) -> Result<MetricsReport> {
    let mut tc = cfg.train_config(kind);
    tc.seq_len = seq_len;
    let data = stopwatch(seconds, "prepare", || {
        Ok(prepare(table, cfg.train_fraction, WindowSpec::new(seq_len)?)?)
    })?;
    let model = stopwatch(seconds, "train", || {
        Ok(train(kind, &data.train, &data.test, &data.scaler, &tc)?)
    })?;
    stopwatch(seconds, "evaluate", || {
        let preds = predict(&model, &data.test)?;
        let y_true: Vec<f64> = preds.iter().map(|p| p.y_true).collect();
        let y_pred: Vec<f64> = preds.iter().map(|p| p.y_pred).collect();
        Ok(evaluate(&y_true, &y_pred)?)
    })
}

/// Trains every (symbol, model, seq_len) triple and writes `sweep_table.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    if cfg.sweep.is_empty() {
        return Err(anyhow!("sweep list is empty"));
    }
    create_output_dir(cfg)?;
    let started = Instant::now();
    let mut pairs = Vec::new();
    for (symbol, table) in load_inputs(cfg) {
        for &kind in &cfg.models {
            for &seq_len in &cfg.sweep {
                let mut seconds = BTreeMap::new();
                let result = match &table {
                    Ok(t) => sweep_pair(cfg, t, kind, seq_len, &mut seconds),
                    Err(e) => Err(anyhow!("{e}")),
                };
                let record = PairRecord {
                    symbol: symbol.clone(),
                    model: kind,
                    seq_len,
                    status: if result.is_ok() {
                        PairStatus::Ok
                    } else {
                        PairStatus::Failed
                    },
                    error: result.as_ref().err().map(|e| format!("{e:#}")),
                    files: Vec::new(),
                    seconds,
                    metrics: result.ok(),
                };
                report(&record);
                pairs.push(record);
            }
        }
    }
    let mut out = Outputs::new(&cfg.output_dir);
    let rows = mark_best(&pairs);
    out.write_with(SWEEP_TABLE_FILE, |w| write_sweep_table(&rows, w))?;
    let manifest = RunManifest {
        toolkit: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "sweep".into(),
        config: cfg.clone(),
        pairs,
        files: out.files,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&cfg.output_dir, SWEEP_MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// explain

/// Recomputes the attribution files from saved checkpoints under the
/// config's output directory, writing them under `out_dir`.
pub fn cmd_explain(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    cfg.validate()?;
    let mut out = Outputs::new(out_dir);
    let mut failed = false;
    for (symbol, table) in load_inputs(cfg) {
        for &kind in &cfg.models {
            let dir = pair_dir(&symbol, kind);
            let mut seconds = BTreeMap::new();
            let result = (|| -> Result<()> {
                let table = table.as_ref().map_err(|e| anyhow!("{e}"))?;
                let model = TrainedModel::load(&cfg.output_dir.join(&dir).join(CHECKPOINT_FILE))?;
                if model.params.kind != kind {
                    return Err(anyhow!("checkpoint holds a {} model", model.params.kind));
                }
                let data = prepare(table, cfg.train_fraction, WindowSpec::new(model.config.seq_len)?)?;
                if data.scaler != model.scaler {
                    return Err(anyhow!(
                        "input data differs from the data the checkpoint was trained on"
                    ));
                }
                write_explanations(&mut out, &dir, &model, &data, &cfg.xai_options(), &mut seconds)
            })();
            match result {
                Ok(()) => eprintln!("{symbol} {kind}: explained"),
                Err(e) => {
                    failed = true;
                    eprintln!("{symbol} {kind}: FAILED {e:#}");
                }
            }
        }
    }
    Ok(if failed { EXIT_FAILED } else { EXIT_OK })
}
