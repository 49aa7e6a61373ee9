//! Daily-bar forecasting toolkit: OHLCV ingestion, technical-indicator
//! features, windowed datasets, four small forecasting architectures on a
//! reverse-mode autodiff engine, regression metrics, and SHAP/LIME
//! attribution over lagged window features.
//!
//! Everything is deterministic given its inputs and seed.

pub mod error;
pub mod indicators;
pub mod market_data;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod xai;

pub use error::{Error, Result};
pub use indicators::{build_feature_table, FeatureTable, FEATURE_COLUMNS};
pub use market_data::{parse_ohlcv_csv, read_ohlcv_csv, synthetic_series, Bar, OhlcvSeries, ValidationReport};
pub use metrics::{evaluate, MetricsReport};
pub use models::{init_params, ModelKind, ModelParams, ModelShape};
pub use pipeline::{prepare, PreparedData, Scaler, WindowSpec, WindowedDataset};
pub use tensor::Tensor;
pub use trainer::{default_config, predict, train, TrainConfig, TrainedModel};
pub use xai::{Attribution, GlobalSummary, Method};
