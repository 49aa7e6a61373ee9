//! Shared fixtures for the criterion benchmarks under `benches/`.

use stockcast_core::{build_feature_table, prepare, synthetic_series, FeatureTable, PreparedData, WindowSpec};

/// Feature table of the seeded synthetic benchmark series.
pub fn benchmark_table(rows: usize) -> FeatureTable {
    build_feature_table(&synthetic_series("BENCH", rows, 0.05, 42)).expect("rows >= 300")
}

pub fn benchmark_data(rows: usize, seq_len: usize) -> PreparedData {
    let spec = WindowSpec::new(seq_len).expect("positive seq_len");
    prepare(&benchmark_table(rows), 0.8, spec).expect("enough rows for the split")
}
