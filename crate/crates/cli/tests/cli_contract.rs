use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use stockcast_cli::runner::{read_sweep_table, MANIFEST_FILE, SWEEP_TABLE_FILE};
use stockcast_cli::{cmd_run, cmd_sweep, ExperimentConfig, InputSpec, RunManifest, TrainOverride};
use stockcast_core::indicators::FeatureTable;
use stockcast_core::market_data::write_ohlcv_csv;
use stockcast_core::metrics::read_metrics_table;
use stockcast_core::xai::{read_global_summary, read_local_explanation, XaiOptions};
use stockcast_core::{synthetic_series, ModelKind, TrainedModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stockcast"))
}

fn write_series(path: &Path, rows: usize, seed: u64) {
    let mut buf = Vec::new();
    write_ohlcv_csv(&synthetic_series("SYN", rows, 0.05, seed), &mut buf).unwrap();
    std::fs::write(path, buf).unwrap();
}

fn quick_config(dir: &Path, models: &[ModelKind]) -> ExperimentConfig {
    let quick = TrainOverride {
        epochs: Some(2),
        ..TrainOverride::default()
    };
    let mut xai = XaiOptions {
        shap_samples: 500,
        global_samples: 400,
        global_instances: Some(2),
        ..XaiOptions::default()
    };
    xai.lime.n_perturb = 500;
    ExperimentConfig {
        inputs: vec![InputSpec {
            symbol: "SYN".into(),
            path: dir.join("syn.csv"),
        }],
        models: models.to_vec(),
        overrides: models.iter().map(|k| (*k, quick)).collect(),
        sweep: vec![5, 10],
        output_dir: dir.join("out"),
        seed: 3,
        train_fraction: 0.8,
        xai,
        plots: false,
    }
}

fn files_under(root: &Path) -> BTreeSet<String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeSet<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn validate_clean_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ok.csv");
    write_series(&csv, 50, 1);
    let out = bin().arg("validate").arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 errors"));
}

#[test]
fn validate_reports_each_violation() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(
        &csv,
        "date,open,high,low,close,volume\n\
         2024-01-02,10,11,9,10.5,100\n\
         2024-01-03,10,11,9,10.5,-5\n\
         2024-01-04,10,11,9,10.5,100\n\
         2024-01-04,10,11,9,10.5,100\n",
    )
    .unwrap();
    let out = bin().arg("validate").arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let findings: Vec<&str> = stdout.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(findings.len(), 2, "{stdout}");
    assert!(findings[0].contains("row 2") && findings[0].contains("volume"));
    assert!(findings[1].contains("row 4") && findings[1].contains("duplicate"));
    assert!(stdout.contains("2 errors"));
}

#[test]
fn validate_missing_file_is_an_io_failure() {
    let out = bin().args(["validate", "/nonexistent/prices.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
    assert_eq!(
        bin()
            .args(["run", "--config", "/nonexistent/exp.json"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn featurize_writes_a_readable_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("syn.csv");
    write_series(&csv, 400, 2);
    let table = dir.path().join("features/syn.csv");
    let out = bin()
        .arg("featurize")
        .arg(&csv)
        .arg("--out")
        .arg(&table)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = FeatureTable::read_csv(std::fs::File::open(&table).unwrap(), "syn", "close").unwrap();
    assert_eq!(t.len(), 400 - 299);
    assert_eq!(t.columns.len(), 25);

    let short = dir.path().join("short.csv");
    write_series(&short, 120, 2);
    let out = bin()
        .arg("featurize")
        .arg(&short)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_inventory_is_exact_and_every_csv_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&dir.path().join("syn.csv"), 400, 4);
    let mut cfg = quick_config(dir.path(), &ModelKind::ALL);
    cfg.plots = true;
    let manifest = cmd_run(&cfg).unwrap();
    assert!(!manifest.failed());
    assert_eq!(manifest.exit_code(), 0);
    assert_eq!(manifest.pairs.len(), 4);

    let listed: BTreeSet<String> = manifest.inventory().into_iter().collect();
    let mut on_disk = files_under(&cfg.output_dir);
    assert!(on_disk.remove(MANIFEST_FILE));
    assert_eq!(listed, on_disk);
    assert!(listed.len() >= 24);
    assert_eq!(
        RunManifest::read(&cfg.output_dir.join(MANIFEST_FILE)).unwrap(),
        manifest
    );

    let open = |rel: &str| std::fs::File::open(cfg.output_dir.join(rel)).unwrap();
    for kind in ModelKind::ALL {
        let d = format!("SYN/{}", kind.id());
        let rows = read_metrics_table(open(&format!("{d}/metrics_table.csv"))).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            read_metrics_table(open(&format!("metrics_table_{}.csv", kind.id()))).unwrap(),
            rows
        );
        let g = read_global_summary(open(&format!("{d}/shap_global.csv"))).unwrap();
        assert!(!g.ranking.is_empty());
        for m in ["shap", "lime"] {
            let l = read_local_explanation(open(&format!("{d}/local_explanation_{m}.csv"))).unwrap();
            assert!(!l.scores.is_empty());
        }
        let metrics: BTreeMap<String, serde_json::Value> =
            serde_json::from_reader(open(&format!("{d}/metrics.json"))).unwrap();
        for key in ["mse", "mae", "mape_percent", "rmse", "r2", "n"] {
            assert!(metrics.contains_key(key), "{key}");
        }
        let model = TrainedModel::load(&cfg.output_dir.join(format!("{d}/model.json"))).unwrap();
        assert_eq!(model.params.kind, kind);
        let mut preds = csv::Reader::from_reader(open(&format!("{d}/predictions.csv")));
        assert_eq!(preds.records().count(), metrics["n"].as_u64().unwrap() as usize);
        let mut curve = csv::Reader::from_reader(open(&format!("{d}/loss_curve.csv")));
        assert_eq!(curve.records().count(), 2);
    }
}

#[test]
fn failing_pair_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&dir.path().join("syn.csv"), 400, 5);
    let mut cfg = quick_config(dir.path(), &[ModelKind::DLinear, ModelKind::Tst]);
    // longer windows than the test split holds
    cfg.overrides.get_mut(&ModelKind::Tst).unwrap().seq_len = Some(90);
    let manifest = cmd_run(&cfg).unwrap();
    assert_eq!(manifest.exit_code(), 1);
    let tst = manifest.pairs.iter().find(|p| p.model == ModelKind::Tst).unwrap();
    assert!(tst.error.is_some() && tst.files.is_empty());
    let dl = manifest.pairs.iter().find(|p| p.model == ModelKind::DLinear).unwrap();
    assert!(dl.error.is_none() && dl.files.len() == 8);
    assert!(cfg.output_dir.join("SYN/dlinear/metrics.json").exists());
}

#[test]
fn sweep_marks_one_best_row_per_model_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&dir.path().join("syn.csv"), 400, 6);
    let cfg = quick_config(dir.path(), &[ModelKind::DLinear, ModelKind::LstNet]);
    let manifest = cmd_sweep(&cfg).unwrap();
    assert!(!manifest.failed());
    let path = cfg.output_dir.join(SWEEP_TABLE_FILE);
    let first = std::fs::read(&path).unwrap();
    let rows = read_sweep_table(first.as_slice()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.best).count(), 2);
    for kind in [ModelKind::DLinear, ModelKind::LstNet] {
        let lens: Vec<usize> = rows.iter().filter(|r| r.model == kind).map(|r| r.seq_len).collect();
        assert_eq!(lens, vec![5, 10]);
    }
    cmd_sweep(&cfg).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn explain_reproduces_run_attributions() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&dir.path().join("syn.csv"), 400, 8);
    let cfg = quick_config(dir.path(), &[ModelKind::Vanilla]);
    cmd_run(&cfg).unwrap();

    let config_path = dir.path().join("exp.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let again: PathBuf = dir.path().join("again");
    let out = bin()
        .args(["explain", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "local_explanation_shap.csv",
        "local_explanation_lime.csv",
        "shap_global.csv",
    ] {
        let a = std::fs::read(cfg.output_dir.join("SYN/vanilla").join(f)).unwrap();
        let b = std::fs::read(again.join("SYN/vanilla").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&dir.path().join("syn.csv"), 400, 9);
    let cfg = quick_config(dir.path(), &ModelKind::ALL);
    let config_path = dir.path().join("exp.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("flagged");
    let out = bin()
        .args([
            "run",
            "--model",
            "dlinear",
            "--seq-len",
            "6",
            "--seed",
            "11",
            "--plots",
            "--config",
        ])
        .arg(&config_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::read(&out_dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.config.models, vec![ModelKind::DLinear]);
    assert_eq!(m.config.seed, 11);
    assert_eq!(m.pairs[0].seq_len, 6);
    assert!(out_dir.join("SYN/dlinear/predictions.svg").exists());
    assert!(!cfg.output_dir.exists());
}
