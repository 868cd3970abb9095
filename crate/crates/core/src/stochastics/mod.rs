//! Probability laws and queueing primitives behind the latency model.
//!
//! Everything here is expressed in milliseconds (and rates in 1/ms).
//!
//! - [`ContinuousDistribution`]: exponential, hypoexponential and shifted
//!   hypoexponential laws with pdf/cdf/quantile/sampling.
//! - [`GeometricLaw`]: the (optionally truncated) retransmission count.
//! - [`MM1Params`]: M/M/1 sojourn law and its Laplace-Stieltjes transform.
//! - [`numeric_convolution`]: brute-force density of a sum of two laws.
//! - [`stats`]: goodness-of-fit helpers (KS, Wasserstein-1, moments).

mod convolution;
mod distribution;
mod geometric;
mod queueing;
mod rng;
pub mod stats;

pub use convolution::{numeric_convolution, GridSpec};
pub use distribution::{
    make_exponential, make_hypoexponential, ContinuousDistribution, DistributionKind, MAX_STAGES,
    RATE_RELATIVE_GAP,
};
pub use geometric::{geometric_pmf, GeometricLaw};
pub use queueing::{mm1_sojourn, sojourn_lst, MM1Params};
pub use rng::{rng_stream, SimRng};

use thiserror::Error;

/// Errors raised while constructing or evaluating probability laws.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StochasticsError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("rates {a} and {b} are too close for the distinct-rates hypoexponential form (relative gap <= 1e-9)")]
    DegenerateRates { a: f64, b: f64 },
    #[error("hypoexponential law limited to {max} stages, got {got}")]
    TooManyStages { got: usize, max: usize },
    #[error("queue is unstable: utilization {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("numeric convolution did not converge: successive refinements differ by {diff:e}")]
    InsufficientResolution { diff: f64 },
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<f64, StochasticsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(StochasticsError::Parameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}
