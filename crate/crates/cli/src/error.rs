use std::path::Path;

use pqos_core::kpidata::KpiError;
use pqos_core::pqos::PqosError;
use pqos_core::ransim::SimError;
use pqos_core::stochastics::StochasticsError;
use pqos_neuro::NeuroError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: config, data files, parameters.
    #[error("{0}")]
    Input(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Training(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<KpiError> for CliError {
    fn from(e: KpiError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<StochasticsError> for CliError {
    fn from(e: StochasticsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PqosError> for CliError {
    fn from(e: PqosError) -> Self {
        match e {
            PqosError::Neuro(NeuroError::Spec(_) | NeuroError::Checkpoint(_)) => {
                CliError::Input(e.to_string())
            }
            PqosError::Training { .. } | PqosError::Neuro(_) => CliError::Training(e.to_string()),
            PqosError::Kpi(e) => e.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}
