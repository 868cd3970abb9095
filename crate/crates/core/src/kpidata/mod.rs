//! Per-cell KPI datasets: the record schema, synthetic generation for three
//! traffic scenarios, CSV ingestion, correlation analysis and cell graphs.

mod analysis;
mod generate;
mod graph;
mod io;
mod profile;
mod record;

use thiserror::Error;

pub use analysis::{
    correlation_table, pearson, sign_pattern_matches, split_by_days, utilization_dominates,
    CorrelationRow,
};
pub use generate::{generate_dataset, grid_layout, GeneratedDataset, RecordLabel};
pub use graph::{build_graph, CellGraph, CellSite, Edge, GraphRule};
pub use io::{
    load_csv, load_graph, load_labels, read_records, save_csv, save_graph, save_labels,
    write_records,
};
pub use profile::{
    AnomalyWindow, LabelBackend, NoiseScales, ScenarioKind, ScenarioProfile, SpatialField,
};
pub use record::{KpiRecord, BIN_SECONDS, CSV_HEADER, DAY_SECONDS, FEATURE_NAMES};

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: field {field} = {value} {reason}")]
    Validation {
        row: usize,
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("correlation undefined for {0}: zero variance")]
    UndefinedCorrelation(String),
    #[error("dataset spans {have} days, need {need}")]
    InsufficientSpan { have: i64, need: i64 },
    #[error(transparent)]
    Sim(#[from] crate::ransim::SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
