use serde::{Deserialize, Serialize};

use super::{check_positive, make_exponential, ContinuousDistribution, StochasticsError};

/// Stable M/M/1 queue: Poisson arrivals at `arrival_rate`, exponential
/// service at `service_rate` (both 1/ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MM1Params {
    arrival_rate: f64,
    service_rate: f64,
}

impl MM1Params {
    pub fn new(arrival_rate: f64, service_rate: f64) -> Result<Self, StochasticsError> {
        let arrival_rate = check_positive("arrival_rate", arrival_rate)?;
        let service_rate = check_positive("service_rate", service_rate)?;
        let rho = arrival_rate / service_rate;
        if rho >= 1.0 {
            return Err(StochasticsError::Unstable { rho });
        }
        Ok(Self {
            arrival_rate,
            service_rate,
        })
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    pub fn utilization(&self) -> f64 {
        self.arrival_rate / self.service_rate
    }

    /// Rate of the exponential sojourn time, μ(1 − ρ).
    pub fn sojourn_rate(&self) -> f64 {
        self.service_rate * (1.0 - self.utilization())
    }

    /// E[W] = ρ / (μ − β).
    pub fn mean_waiting(&self) -> f64 {
        self.utilization() / (self.service_rate - self.arrival_rate)
    }
}

/// Law of waiting plus service time in a stable M/M/1 queue: exponential
/// with rate μ(1 − ρ).
pub fn mm1_sojourn(params: &MM1Params) -> Result<ContinuousDistribution, StochasticsError> {
    make_exponential(params.sojourn_rate())
}

/// Pollaczek-Khinchine transform of the sojourn time with exponential
/// service, `S(s) = (1−ρ)·B(s)·s / (β·B(s) + s − β)`, `B(s) = μ/(μ+s)`.
///
/// The denominator is formed as `s − β·(1 − B(s))` with `1 − B(s) = s/(μ+s)`
/// so small `s` does not cancel.
pub fn sojourn_lst(s: f64, params: &MM1Params) -> Result<f64, StochasticsError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(StochasticsError::Parameter {
            name: "s",
            value: s,
            reason: "must be finite and >= 0",
        });
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    let beta = params.arrival_rate;
    let mu = params.service_rate;
    let rho = params.utilization();
    let service_lst = mu / (mu + s);
    let service_lst_complement = s / (mu + s);
    let numerator = (1.0 - rho) * service_lst * s;
    let denominator = s - beta * service_lst_complement;
    Ok(numerator / denominator)
}
