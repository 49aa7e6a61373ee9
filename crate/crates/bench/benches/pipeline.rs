use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stockcast_bench::benchmark_data;
use stockcast_core::xai::{explain_final_instance, Method, XaiOptions};
use stockcast_core::{build_feature_table, default_config, synthetic_series, train, ModelKind, TrainConfig};

fn features(c: &mut Criterion) {
    let series = synthetic_series("BENCH", 1000, 0.05, 42);
    c.bench_function("feature_table_1000_rows", |b| {
        b.iter(|| build_feature_table(black_box(&series)).unwrap())
    });
}

fn forward_and_epoch(c: &mut Criterion) {
    let mut g = c.benchmark_group("one_epoch_600_rows");
    g.sample_size(10);
    for kind in ModelKind::ALL {
        let cfg = TrainConfig {
            epochs: 1,
            ..default_config(kind)
        };
        let data = benchmark_data(600, cfg.seq_len);
        g.bench_function(kind.id(), |b| {
            b.iter(|| train(kind, &data.train, &data.test, &data.scaler, black_box(&cfg)).unwrap())
        });
    }
    g.finish();

    let cfg = TrainConfig {
        epochs: 1,
        ..default_config(ModelKind::Tst)
    };
    let data = benchmark_data(600, cfg.seq_len);
    let model = train(ModelKind::Tst, &data.train, &data.test, &data.scaler, &cfg).unwrap();
    let window = &data.test.samples[0].inputs;
    c.bench_function("tst_predict", |b| {
        b.iter(|| model.params.predict(black_box(window)).unwrap())
    });
}

fn attribution(c: &mut Criterion) {
    let cfg = TrainConfig {
        epochs: 5,
        ..default_config(ModelKind::DLinear)
    };
    let data = benchmark_data(600, cfg.seq_len);
    let model = train(ModelKind::DLinear, &data.train, &data.test, &data.scaler, &cfg).unwrap();
    let opts = XaiOptions::default();
    let mut g = c.benchmark_group("final_instance_dlinear");
    g.sample_size(10);
    for method in [Method::KernelShap, Method::Lime] {
        g.bench_function(method.id(), |b| {
            b.iter(|| explain_final_instance(&model, &data.train, &data.test, method, black_box(&opts)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, features, forward_and_epoch, attribution);
criterion_main!(benches);
