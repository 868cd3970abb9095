use std::fs;
use std::path::{Path, PathBuf};

use pqos_core::kpidata::{GraphRule, LabelBackend, ScenarioKind, ScenarioProfile};
use pqos_core::latency::LatencyModelParams;
use pqos_core::pqos::{AnomalyConfig, ForecastConfig, RegressionConfig, SpatialConfig};
use pqos_core::ransim::{ArrivalLaw, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "PQOS_SEED";

/// Parses `path`, or returns the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, format!("invalid config: {e}")))
}

/// `--seed`, then the config, then `PQOS_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn resolve_out(flag: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or(config).unwrap_or_else(|| PathBuf::from("out"))
}

/// Downlink queue parameters shared by the simulation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueSpec {
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub bler: f64,
    pub harq_delay: f64,
    pub retx_priority: bool,
    pub n_max: u32,
    pub arrival: ArrivalLaw,
}

impl Default for QueueSpec {
    fn default() -> Self {
        Self {
            arrival_rate: 0.7,
            service_rate: 1.0,
            bler: 0.1,
            harq_delay: 0.0,
            retx_priority: true,
            n_max: 8,
            arrival: ArrivalLaw::Poisson,
        }
    }
}

impl QueueSpec {
    /// Simulation long enough for about `packets` arrivals after `warmup`.
    pub fn sim(&self, packets: u64, warmup: f64, seed: u64) -> SimConfig {
        SimConfig {
            arrival_rate: self.arrival_rate,
            service_rate: self.service_rate,
            bler: self.bler,
            harq_delay: self.harq_delay,
            retx_priority: self.retx_priority,
            n_max: self.n_max,
            duration: warmup + packets as f64 / self.arrival_rate,
            warmup,
            seed,
            arrival: self.arrival,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub queue: QueueSpec,
    pub packets: u64,
    pub warmup_ms: f64,
    pub order: usize,
    pub bin_width_ms: f64,
    pub ks_bound: f64,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            queue: QueueSpec::default(),
            packets: 100_000,
            warmup_ms: 2000.0,
            order: 4,
            bin_width_ms: 0.25,
            ks_bound: 0.05,
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub arrival_rates: Vec<f64>,
    pub blers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub queue: QueueSpec,
    pub packets: u64,
    pub warmup_ms: f64,
    /// Width of the delay KPI windows.
    pub window_ms: f64,
    pub resolution_ms: f64,
    /// Grid of `(arrival_rate, bler)` points summarized in `sweep.csv`.
    pub sweep: Option<SweepSpec>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            queue: QueueSpec::default(),
            packets: 20_000,
            warmup_ms: 1000.0,
            window_ms: 100.0,
            resolution_ms: 0.1,
            sweep: None,
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistsConfig {
    pub params: LatencyModelParams,
    pub points: usize,
    /// Upper end of the grid; defaults to the 1 − 1e-7 quantile.
    pub t_max_ms: Option<f64>,
    pub quantiles: Vec<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for DistsConfig {
    fn default() -> Self {
        Self {
            params: LatencyModelParams::new(1.0, 2.0, 0.0, 0.1, Some(8), 4)
                .expect("valid defaults"),
            points: 2001,
            t_max_ms: None,
            quantiles: vec![0.5, 0.9, 0.95, 0.99, 0.999],
            seed: None,
            out: None,
        }
    }
}

/// Synthetic dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub scenario: ScenarioKind,
    /// Replaces the built-in profile of `scenario`.
    pub profile: Option<ScenarioProfile>,
    pub days: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub spacing_km: f64,
    pub jitter_km: f64,
    pub graph_rule: GraphRule,
    pub qci: Option<u8>,
    pub label_backend: Option<LabelBackend>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::DenseUrban,
            profile: None,
            days: 30,
            grid_cols: 5,
            grid_rows: 4,
            spacing_km: 1.0,
            jitter_km: 0.05,
            graph_rule: GraphRule::Radius { r_km: 1.2 },
            qci: None,
            label_backend: None,
        }
    }
}

impl DatasetSpec {
    pub fn with_scenario(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenKpiConfig {
    pub dataset: DatasetSpec,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Either files written by `gen-kpi` or a recipe generated on the fly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub csv: Option<PathBuf>,
    /// Anomaly labels, for the anomaly task.
    pub labels: Option<PathBuf>,
    /// Cell graph, for the spatial task.
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub generate: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionAcceptance {
    pub min_r2: f64,
    pub coverage_range: [f64; 2],
}

impl Default for RegressionAcceptance {
    fn default() -> Self {
        Self {
            min_r2: 0.7,
            coverage_range: [0.90, 0.98],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyAcceptance {
    /// Smallest recall reachable by a threshold without false positives.
    pub min_recall_at_full_precision: f64,
}

impl Default for AnomalyAcceptance {
    fn default() -> Self {
        Self {
            min_recall_at_full_precision: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmAcceptance {
    /// Required margin of test R2 over the persistence forecast.
    pub min_gain: f64,
}

impl Default for LstmAcceptance {
    fn default() -> Self {
        Self { min_gain: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialAcceptance {
    /// Sage R2 must exceed DNN R2 by more than this.
    pub min_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfigFile<M, A> {
    pub data: DataSpec,
    pub model: M,
    pub acceptance: A,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub type RegressionTrain = TrainConfigFile<RegressionConfig, RegressionAcceptance>;
pub type AnomalyTrain = TrainConfigFile<AnomalyConfig, AnomalyAcceptance>;
pub type LstmTrain = TrainConfigFile<ForecastConfig, LstmAcceptance>;
pub type SpatialTrain = TrainConfigFile<SpatialConfig, SpatialAcceptance>;
