use serde::{Deserialize, Serialize};

use super::{ContinuousDistribution, StochasticsError};

/// Resolution schedule for [`numeric_convolution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Trapezoid panels on the first pass.
    pub initial_panels: usize,
    /// How many times the panel count may be doubled.
    pub max_doublings: u32,
    /// Stop refining once successive estimates differ by less than this.
    pub converge_tol: f64,
    /// Report an error if the last two estimates still differ by more.
    pub fail_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            initial_panels: 32,
            max_doublings: 16,
            converge_tol: 1e-11,
            fail_tol: 1e-6,
        }
    }
}

/// Density of `A + B` at `t`, `∫_0^t f_A(τ) f_B(t − τ) dτ`, by repeatedly
/// halved trapezoid sums with one Richardson extrapolation step.
///
/// Works for equal rates too, which the closed form rejects.
pub fn numeric_convolution(
    a: &ContinuousDistribution,
    b: &ContinuousDistribution,
    t: f64,
    grid: &GridSpec,
) -> Result<f64, StochasticsError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(StochasticsError::Parameter {
            name: "t",
            value: t,
            reason: "must be finite and >= 0",
        });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let integrand = |tau: f64| a.pdf(tau) * b.pdf(t - tau);

    let mut panels = grid.initial_panels.max(1);
    let mut h = t / panels as f64;
    let sum_ends = 0.5 * (integrand(0.0) + integrand(t));
    let mut sum_inner: f64 = (1..panels).map(|i| integrand(i as f64 * h)).sum();
    let mut trap = h * (sum_ends + sum_inner);
    let mut extrapolated = trap;
    let mut diff = f64::INFINITY;

    for _ in 0..grid.max_doublings {
        // New midpoints of the current panels.
        let mids: f64 = (0..panels).map(|i| integrand((i as f64 + 0.5) * h)).sum();
        sum_inner += mids;
        panels *= 2;
        h *= 0.5;
        let refined = h * (sum_ends + sum_inner);
        let next = refined + (refined - trap) / 3.0;
        diff = (next - extrapolated).abs();
        trap = refined;
        extrapolated = next;
        if diff < grid.converge_tol {
            return Ok(extrapolated.max(0.0));
        }
    }
    if diff > grid.fail_tol {
        return Err(StochasticsError::InsufficientResolution { diff });
    }
    Ok(extrapolated.max(0.0))
}
