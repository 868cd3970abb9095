//! Hypoexponential model of the downlink U-plane latency.
//!
//! The latency of a packet is
//!
//! ```text
//! L = τ_tx + N · τ_rtx,   τ_tx ~ exp(λ1) + C,  τ_rtx ~ exp(λ2) + C
//! ```
//!
//! with `N ~ geom(1 − BLER)` retransmissions, truncated at `n_max`. Writing
//! `N` out as `Σ_j P_j · j` and keeping the first `order − 1` terms turns
//! `L` into a sum of independent exponentials with rates
//! `[λ1, λ2/(1·P_1), λ2/(2·P_2), …]`, i.e. a hypoexponential law, shifted by
//! the HARQ constants `C · (1 + Σ_j j·P_j)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stochastics::{
    make_exponential, make_hypoexponential, ContinuousDistribution, GeometricLaw, StochasticsError,
    MAX_STAGES,
};

/// Default HARQ retransmission limit.
pub const DEFAULT_N_MAX: u32 = 8;

fn default_n_max() -> Option<u32> {
    Some(DEFAULT_N_MAX)
}

fn default_order() -> usize {
    4
}

/// Parameters of the latency law.
///
/// `n_max = None` means an untruncated geometric retransmission count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLatencyModelParams")]
pub struct LatencyModelParams {
    /// Rate of the first-transmission scheduling + transmission time (1/ms).
    pub lambda1: f64,
    /// Rate of the retransmission scheduling + transmission time (1/ms).
    pub lambda2: f64,
    /// Fixed HARQ loop delay C (ms), paid once per attempt.
    pub harq_delay: f64,
    pub bler: f64,
    pub n_max: Option<u32>,
    /// Number of hypoexponential stages kept by the approximation.
    pub order: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLatencyModelParams {
    lambda1: f64,
    lambda2: f64,
    #[serde(default)]
    harq_delay: f64,
    bler: f64,
    #[serde(default = "default_n_max")]
    n_max: Option<u32>,
    #[serde(default = "default_order")]
    order: usize,
}

impl TryFrom<RawLatencyModelParams> for LatencyModelParams {
    type Error = StochasticsError;

    fn try_from(r: RawLatencyModelParams) -> Result<Self, Self::Error> {
        LatencyModelParams::new(r.lambda1, r.lambda2, r.harq_delay, r.bler, r.n_max, r.order)
    }
}

impl LatencyModelParams {
    pub fn new(
        lambda1: f64,
        lambda2: f64,
        harq_delay: f64,
        bler: f64,
        n_max: Option<u32>,
        order: usize,
    ) -> Result<Self, StochasticsError> {
        let p = Self {
            lambda1,
            lambda2,
            harq_delay,
            bler,
            n_max,
            order,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StochasticsError> {
        let param = |name, value, reason| StochasticsError::Parameter {
            name,
            value,
            reason,
        };
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(param(name, v, "must be finite and > 0"));
            }
        }
        if self.lambda2 < self.lambda1 {
            return Err(param(
                "lambda2",
                self.lambda2,
                "retransmissions cannot be slower than first transmissions (lambda2 >= lambda1)",
            ));
        }
        if !(self.harq_delay.is_finite() && self.harq_delay >= 0.0) {
            return Err(param(
                "harq_delay",
                self.harq_delay,
                "must be finite and >= 0",
            ));
        }
        if !(self.bler > 0.0 && self.bler < 1.0) {
            return Err(param("bler", self.bler, "must lie in (0, 1)"));
        }
        if self.order == 0 || self.order > MAX_STAGES {
            return Err(param("order", self.order as f64, "must lie in 1..=6"));
        }
        if let Some(n) = self.n_max {
            if n == 0 || self.order > n as usize + 1 {
                return Err(param(
                    "order",
                    self.order as f64,
                    "n_max must be >= 1 and order <= n_max + 1",
                ));
            }
        }
        Ok(())
    }

    pub fn with_order(mut self, order: usize) -> Result<Self, StochasticsError> {
        self.order = order;
        self.validate()?;
        Ok(self)
    }

    pub fn retransmissions(&self) -> GeometricLaw {
        GeometricLaw::from_bler(self.bler, self.n_max).expect("bler validated")
    }

    /// `P_j` for `j = 0..order`.
    fn stage_probabilities(&self) -> Vec<f64> {
        let law = self.retransmissions();
        (0..self.order as u32)
            .map(|j| law.pmf(j).expect("order <= n_max + 1"))
            .collect()
    }

    /// `Σ_{j=1}^{order−1} j·P_j`, the truncated expected retransmission count.
    fn weighted_retransmissions(&self) -> f64 {
        self.stage_probabilities()
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, p)| j as f64 * p)
            .sum()
    }
}

/// How [`sample_exact`] draws the retransmission time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencySampleMode {
    /// `τ_tx + N · (one exp(λ2) draw + C)`: the literal product form.
    Scaled,
    /// `τ_tx + Σ_{k=1}^{N} (fresh exp(λ2) draw + C)`.
    #[default]
    IidSum,
}

/// Stage rates `[λ1, λ2/(1·P_1), …, λ2/((order−1)·P_{order−1})]`.
pub fn hypoexp_rates(params: &LatencyModelParams) -> Result<Vec<f64>, StochasticsError> {
    params.validate()?;
    let probs = params.stage_probabilities();
    let mut rates = Vec::with_capacity(params.order);
    rates.push(params.lambda1);
    for (j, p) in probs.iter().enumerate().skip(1) {
        rates.push(params.lambda2 / (j as f64 * p));
    }
    // distinctness check
    make_hypoexponential(&rates)?;
    Ok(rates)
}

/// Shifted hypoexponential approximation of the latency law.
pub fn analytic_latency(
    params: &LatencyModelParams,
) -> Result<ContinuousDistribution, StochasticsError> {
    let rates = hypoexp_rates(params)?;
    let offset = params.harq_delay * (1.0 + params.weighted_retransmissions());
    make_hypoexponential(&rates)?.shifted(offset)
}

/// `E[L] = (1/λ1 + C) + E[N]·(1/λ2 + C)` under the truncated count.
pub fn exact_mean(params: &LatencyModelParams) -> f64 {
    let c = params.harq_delay;
    (1.0 / params.lambda1 + c) + params.retransmissions().mean() * (1.0 / params.lambda2 + c)
}

/// One draw of the full latency (not the approximation).
pub fn sample_exact<R: Rng + ?Sized>(
    params: &LatencyModelParams,
    mode: LatencySampleMode,
    rng: &mut R,
) -> f64 {
    let first = make_exponential(params.lambda1).expect("validated");
    let retx = make_exponential(params.lambda2).expect("validated");
    let c = params.harq_delay;
    let n = params.retransmissions().sample(rng);
    let tx = first.sample(rng) + c;
    match mode {
        LatencySampleMode::Scaled => tx + f64::from(n) * (retx.sample(rng) + c),
        LatencySampleMode::IidSum => tx + (0..n).map(|_| retx.sample(rng) + c).sum::<f64>(),
    }
}

/// Two-stage density obtained by convolving `exp(λ1)` with `exp(λ2/p1)`:
/// `λ1·λ2'/(λ2' − λ1) · (e^(−λ1 t) − e^(−λ2' t))`, `λ2' = λ2/p1`.
pub fn two_stage_pdf(lambda1: f64, lambda2: f64, p1: f64, t: f64) -> Result<f64, StochasticsError> {
    if !(p1 > 0.0 && p1 <= 1.0) {
        return Err(StochasticsError::Parameter {
            name: "p1",
            value: p1,
            reason: "must lie in (0, 1]",
        });
    }
    let l1 = lambda1;
    let l2 = lambda2 / p1;
    for (name, v) in [("lambda1", l1), ("lambda2", l2)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(StochasticsError::Parameter {
                name,
                value: v,
                reason: "must be finite and > 0",
            });
        }
    }
    if (l1 - l2).abs() <= crate::stochastics::RATE_RELATIVE_GAP * l1.max(l2) {
        return Err(StochasticsError::DegenerateRates { a: l1, b: l2 });
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(l1 * l2 / (l2 - l1) * ((-l1 * t).exp() - (-l2 * t).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::{rng_stream, stats, DistributionKind};

    fn params(
        l1: f64,
        l2: f64,
        c: f64,
        bler: f64,
        n_max: Option<u32>,
        order: usize,
    ) -> LatencyModelParams {
        LatencyModelParams::new(l1, l2, c, bler, n_max, order).unwrap()
    }

    #[test]
    fn rates_by_hand() {
        let p = params(1.0, 2.0, 0.0, 0.1, None, 1);
        assert_eq!(hypoexp_rates(&p).unwrap(), vec![1.0]);
        let r = hypoexp_rates(&p.with_order(2).unwrap()).unwrap();
        assert!((r[1] - 2.0 / 0.09).abs() < 1e-9);
        assert!((r[1] - 22.2222).abs() < 1e-4);
        let r = hypoexp_rates(&p.with_order(3).unwrap()).unwrap();
        assert!((r[2] - 2.0 / (2.0 * 0.009)).abs() < 1e-9);
        assert!((r[2] - 111.1111).abs() < 1e-4);
    }

    #[test]
    fn default_truncation_barely_moves_rates() {
        let r = hypoexp_rates(&params(1.0, 2.0, 0.0, 0.1, Some(8), 3)).unwrap();
        assert!((r[1] - 22.2222).abs() < 1e-4);
        assert!((r[2] - 111.1111).abs() < 1e-4);
    }

    #[test]
    fn pathological_bler_collides() {
        // 1·P_1 = 2·P_2 when BLER = 0.5.
        let p = params(1.0, 2.0, 0.0, 0.5, None, 3);
        assert!(matches!(
            hypoexp_rates(&p),
            Err(StochasticsError::DegenerateRates { .. })
        ));
    }

    #[test]
    fn validation() {
        assert!(LatencyModelParams::new(2.0, 1.0, 0.0, 0.1, None, 2).is_err());
        assert!(LatencyModelParams::new(1.0, 2.0, -1.0, 0.1, None, 2).is_err());
        assert!(LatencyModelParams::new(1.0, 2.0, 0.0, 0.0, None, 2).is_err());
        assert!(LatencyModelParams::new(1.0, 2.0, 0.0, 0.1, None, 0).is_err());
        assert!(LatencyModelParams::new(1.0, 2.0, 0.0, 0.1, Some(2), 4).is_err());
        assert!(LatencyModelParams::new(1.0, 2.0, 0.0, 0.1, None, 7).is_err());
    }

    #[test]
    fn order_one_is_exponential() {
        let d = analytic_latency(&params(1.0, 2.0, 0.0, 0.1, None, 1)).unwrap();
        assert_eq!(d.kind(), DistributionKind::Exponential);
        assert_eq!(d.rates(), &[1.0]);
        let d = analytic_latency(&params(1.0, 2.0, 1.0, 0.1, None, 1)).unwrap();
        assert_eq!(d.kind(), DistributionKind::Shifted);
        assert_eq!(d.offset(), 1.0);
    }

    #[test]
    fn analytic_mean_close_to_exact() {
        let p = params(1.0, 2.0, 0.0, 0.1, None, 4);
        let m = analytic_latency(&p).unwrap().mean();
        let target = 1.0 + (0.1 / 0.9) * 0.5;
        assert!((m - target).abs() / target < 0.01);
        assert!((exact_mean(&p) - target).abs() < 1e-12);
    }

    #[test]
    fn exact_mean_by_hand() {
        let p = params(1.0, 2.0, 0.5, 0.1, None, 2);
        assert!((exact_mean(&p) - (1.5 + 1.0 / 9.0)).abs() < 1e-12);
        let p = params(1.0, 2.0, 0.0, 0.5, Some(1), 2);
        assert!((exact_mean(&p) - (1.0 + 0.5 / 3.0)).abs() < 1e-12);
        let p = params(1.0, 2.0, 0.3, 1e-12, None, 1);
        assert!((exact_mean(&p) - 1.3).abs() < 1e-9);
    }

    #[test]
    fn mean_nondecreasing_in_order() {
        for bler in [0.05, 0.1, 0.2] {
            let base = params(1.0, 2.0, 0.0, bler, None, 1);
            let means: Vec<f64> = (1..=6)
                .map(|k| {
                    analytic_latency(&base.with_order(k).unwrap())
                        .unwrap()
                        .mean()
                })
                .collect();
            assert!(means.windows(2).all(|w| w[1] >= w[0]));
            let exact = exact_mean(&base);
            assert!((means[3] - exact).abs() / exact < 0.01);
        }
    }

    #[test]
    fn sampler_without_retransmissions_is_exponential() {
        let p = params(1.0, 2.0, 0.0, 1e-12, None, 1);
        let mut rng = rng_stream(21, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_exact(&p, LatencySampleMode::IidSum, &mut rng))
            .collect();
        let d = analytic_latency(&p).unwrap();
        assert!(stats::ks_statistic(&xs, &d) < 0.01);
    }

    #[test]
    fn both_modes_share_the_mean() {
        let p = params(0.8, 2.0, 0.5, 0.1, Some(8), 4);
        let exact = exact_mean(&p);
        for (i, mode) in [LatencySampleMode::Scaled, LatencySampleMode::IidSum]
            .into_iter()
            .enumerate()
        {
            let mut rng = rng_stream(17, i as u64);
            let m = (0..1_000_000)
                .map(|_| sample_exact(&p, mode, &mut rng))
                .sum::<f64>()
                / 1e6;
            assert!(
                (m - exact).abs() / exact < 0.005,
                "{mode:?}: {m} vs {exact}"
            );
        }
    }

    #[test]
    fn two_stage_matches_library_pdf() {
        assert_eq!(two_stage_pdf(1.0, 2.0, 0.09, 0.0).unwrap(), 0.0);
        let lib = make_hypoexponential(&[1.0, 2.0 / 0.09]).unwrap();
        let v = two_stage_pdf(1.0, 2.0, 0.09, 1.0).unwrap();
        assert!((v - lib.pdf(1.0)).abs() < 1e-12);
        assert!(two_stage_pdf(1.0, 0.09, 0.09, 1.0).is_err());
    }

    #[test]
    fn two_stage_integrates_to_one() {
        // closed-form antiderivative check via fine Simpson on [0, 40]
        let f = |t: f64| two_stage_pdf(1.0, 2.0, 0.09, t).unwrap();
        let n = 400_000;
        let h = 40.0 / n as f64;
        let mut s = f(0.0) + f(40.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_is_unimodal_and_vanishes_at_offset() {
        let p = params(1.0, 2.0, 0.5, 0.1, Some(8), 4);
        let d = analytic_latency(&p).unwrap();
        assert_eq!(d.pdf(d.offset()), 0.0);
        let grid: Vec<f64> = (0..2000)
            .map(|i| d.pdf(d.offset() + i as f64 * 0.005))
            .collect();
        let mode = grid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(grid[..=mode].windows(2).all(|w| w[1] >= w[0]));
        assert!(grid[mode..].windows(2).all(|w| w[1] <= w[0]));
        assert!(d.mean() > d.quantile(0.5));
    }

    #[test]
    fn params_json() {
        let p: LatencyModelParams =
            serde_json::from_str(r#"{"lambda1":1.0,"lambda2":2.0,"bler":0.1}"#).unwrap();
        assert_eq!(p.n_max, Some(8));
        assert_eq!(p.order, 4);
        assert!(serde_json::from_str::<LatencyModelParams>(
            r#"{"lambda1":1.0,"lambda2":2.0,"bler":0.1,"bogus":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<LatencyModelParams>(
            r#"{"lambda1":3.0,"lambda2":2.0,"bler":0.1}"#
        )
        .is_err());
        let back: LatencyModelParams =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
