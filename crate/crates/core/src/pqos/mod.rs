//! The three predictive-QoS use cases as reproducible pipelines:
//! probabilistic latency regression, anomaly detection with threshold
//! tuning, and temporal and spatial forecasting, plus their metrics.

mod anomaly;
mod common;
mod forecast;
mod metrics;
mod regression;
mod spatial;
mod standardize;

use thiserror::Error;

pub use anomaly::{
    best_recall_at_full_precision, detect, fit_anomaly_detector, run_anomaly_pipeline,
    threshold_cost, tune_threshold, AnomalyConfig, AnomalyDetector, AnomalyReport, Cost,
    TimelineRow, Verdict,
};
pub use common::{feature_matrix, TrainConfig};
pub use forecast::{
    make_forecast_windows, run_forecast_pipeline, train_lstm_forecaster, ForecastConfig,
    ForecastPair, ForecastReport, LstmForecaster, STEP_WIDTH,
};
pub use metrics::{confusion, coverage, r2, Confusion};
pub use regression::{
    record_split, run_regression_pipeline, train_probabilistic_regressor, PredictionRow,
    PredictiveDistribution, ProbabilisticRegressor, RegressionConfig, RegressionReport,
};
pub use spatial::{train_spatial_models, SpatialConfig, SpatialModel, SpatialNet, SpatialReport};
pub use standardize::Standardizer;

#[derive(Debug, Error)]
pub enum PqosError {
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },
    #[error("threshold tuning: {0}")]
    Tuning(String),
    #[error("{0} is undefined: truths have zero variance")]
    Undefined(&'static str),
    #[error(transparent)]
    Kpi(#[from] crate::kpidata::KpiError),
    #[error(transparent)]
    Neuro(#[from] pqos_neuro::NeuroError),
}
