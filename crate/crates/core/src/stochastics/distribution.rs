use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_positive, StochasticsError};

/// Maximum number of hypoexponential stages. The alternating-sign weights
/// lose accuracy quickly beyond this.
pub const MAX_STAGES: usize = 6;

/// Two rates closer than this (relative to the larger one) are rejected.
pub const RATE_RELATIVE_GAP: f64 = 1e-9;

/// Which family a [`ContinuousDistribution`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    Exponential,
    Hypoexponential,
    /// A one- or multi-stage law moved right by a fixed offset.
    Shifted,
}

/// Sum of independent exponential stages with pairwise distinct rates,
/// optionally shifted by a constant offset (ms).
///
/// Density of the unshifted law with sorted rates `λ_1 < … < λ_n`:
///
/// f(t) = Σ_i w_i λ_i e^(−λ_i t),  w_i = Π_{j≠i} λ_j / (λ_j − λ_i)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub struct ContinuousDistribution {
    rates: Vec<f64>,
    weights: Vec<f64>,
    offset: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionRepr {
    rates: Vec<f64>,
    #[serde(default)]
    offset_ms: f64,
}

impl TryFrom<DistributionRepr> for ContinuousDistribution {
    type Error = StochasticsError;

    fn try_from(repr: DistributionRepr) -> Result<Self, Self::Error> {
        make_hypoexponential(&repr.rates)?.shifted(repr.offset_ms)
    }
}

impl From<ContinuousDistribution> for DistributionRepr {
    fn from(d: ContinuousDistribution) -> Self {
        DistributionRepr {
            rates: d.rates,
            offset_ms: d.offset,
        }
    }
}

/// Exponential law with the given rate (1/ms).
pub fn make_exponential(rate: f64) -> Result<ContinuousDistribution, StochasticsError> {
    let rate = check_positive("rate", rate)?;
    Ok(ContinuousDistribution {
        rates: vec![rate],
        weights: vec![1.0],
        offset: 0.0,
    })
}

/// Hypoexponential law of the sum of exponential stages with the given rates.
///
/// A single rate yields the exponential law. Rates are stored sorted
/// ascending; the law does not depend on their order.
pub fn make_hypoexponential(rates: &[f64]) -> Result<ContinuousDistribution, StochasticsError> {
    if rates.is_empty() {
        return Err(StochasticsError::Parameter {
            name: "rates",
            value: 0.0,
            reason: "at least one stage is required",
        });
    }
    if rates.len() > MAX_STAGES {
        return Err(StochasticsError::TooManyStages {
            got: rates.len(),
            max: MAX_STAGES,
        });
    }
    let mut sorted = Vec::with_capacity(rates.len());
    for &r in rates {
        sorted.push(check_positive("rate", r)?);
    }
    sorted.sort_by(f64::total_cmp);
    for pair in sorted.windows(2) {
        if (pair[1] - pair[0]) <= RATE_RELATIVE_GAP * pair[1] {
            return Err(StochasticsError::DegenerateRates {
                a: pair[0],
                b: pair[1],
            });
        }
    }
    let weights = stage_weights(&sorted);
    Ok(ContinuousDistribution {
        rates: sorted,
        weights,
        offset: 0.0,
    })
}

/// w_i = Π_{j≠i} λ_j / (λ_j − λ_i) for ascending rates.
fn stage_weights(rates: &[f64]) -> Vec<f64> {
    rates
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            rates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &lj)| lj / (lj - li))
                .product()
        })
        .collect()
}

/// Neumaier-compensated sum; the hypoexponential terms alternate in sign and
/// cancel heavily near the origin.
pub(crate) fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl ContinuousDistribution {
    /// Moves the law right by `offset` ms (added to any existing offset).
    pub fn shifted(mut self, offset: f64) -> Result<Self, StochasticsError> {
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(StochasticsError::Parameter {
                name: "offset",
                value: offset,
                reason: "must be finite and >= 0",
            });
        }
        self.offset += offset;
        Ok(self)
    }

    pub fn kind(&self) -> DistributionKind {
        if self.offset > 0.0 {
            DistributionKind::Shifted
        } else if self.rates.len() == 1 {
            DistributionKind::Exponential
        } else {
            DistributionKind::Hypoexponential
        }
    }

    /// Stage rates, ascending.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn n_stages(&self) -> usize {
        self.rates.len()
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let x = t - self.offset;
        if x < 0.0 || x.is_nan() {
            return 0.0;
        }
        if self.rates.len() == 1 {
            let r = self.rates[0];
            return r * (-r * x).exp();
        }
        let v = compensated_sum(
            self.rates
                .iter()
                .zip(&self.weights)
                .map(|(&r, &w)| w * r * (-r * x).exp()),
        );
        v.max(0.0)
    }

    pub fn ln_pdf(&self, t: f64) -> f64 {
        let x = t - self.offset;
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if self.rates.len() == 1 {
            let r = self.rates[0];
            return r.ln() - r * x;
        }
        self.pdf(t).ln()
    }

    /// P(X > t).
    pub fn survival(&self, t: f64) -> f64 {
        let x = t - self.offset;
        if x <= 0.0 {
            return 1.0;
        }
        if self.rates.len() == 1 {
            return (-self.rates[0] * x).exp();
        }
        compensated_sum(
            self.rates
                .iter()
                .zip(&self.weights)
                .map(|(&r, &w)| w * (-r * x).exp()),
        )
        .clamp(0.0, 1.0)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let x = t - self.offset;
        if x <= 0.0 {
            return 0.0;
        }
        if self.rates.len() == 1 {
            return -(-self.rates[0] * x).exp_m1();
        }
        (1.0 - self.survival(t)).clamp(0.0, 1.0)
    }

    /// Smallest `t` with `cdf(t) >= u`. Returns +inf for `u >= 1`.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.offset;
        }
        if u >= 1.0 {
            return f64::INFINITY;
        }
        if self.rates.len() == 1 {
            return self.offset - (-u).ln_1p() / self.rates[0];
        }
        // Bracket on the unshifted law, then bisect. The survival form keeps
        // precision for u close to 1.
        let target_sf = 1.0 - u;
        let unshifted = |x: f64| self.survival(x + self.offset);
        let mut lo = 0.0;
        let mut hi = self.mean_unshifted().max(f64::MIN_POSITIVE);
        while unshifted(hi) > target_sf {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if unshifted(mid) > target_sf {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.offset + hi
    }

    fn mean_unshifted(&self) -> f64 {
        self.rates.iter().map(|r| 1.0 / r).sum()
    }

    pub fn mean(&self) -> f64 {
        self.offset + self.mean_unshifted()
    }

    pub fn variance(&self) -> f64 {
        self.rates.iter().map(|r| 1.0 / (r * r)).sum()
    }

    /// Stage-wise inverse-transform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.offset
            + self
                .rates
                .iter()
                .map(|&r| -(1.0 - rng.random::<f64>()).ln() / r)
                .sum::<f64>()
    }
}

impl rand::distr::Distribution<f64> for ContinuousDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        ContinuousDistribution::sample(self, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::rng_stream;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn exponential_basics() {
        let d = make_exponential(2.0).unwrap();
        assert_eq!(d.kind(), DistributionKind::Exponential);
        assert!(close(d.mean(), 0.5, 1e-15));
        let d = make_exponential(1.0).unwrap();
        assert_eq!(d.cdf(0.0), 0.0);
        assert!(close(d.pdf(1.0), 0.3678794, 5e-8));
        assert_eq!(d.pdf(-0.1), 0.0);
    }

    #[test]
    fn exponential_rejects_nonpositive_rate() {
        assert!(matches!(
            make_exponential(0.0),
            Err(StochasticsError::Parameter { .. })
        ));
        assert!(make_exponential(-1.0).is_err());
        assert!(make_exponential(f64::NAN).is_err());
    }

    #[test]
    fn two_stage_values() {
        let d = make_hypoexponential(&[1.0, 2.0]).unwrap();
        assert_eq!(d.kind(), DistributionKind::Hypoexponential);
        assert!(close(d.mean(), 1.5, 1e-15));
        assert_eq!(d.pdf(0.0), 0.0);
        // 2(e^-1 - e^-2), evaluated independently.
        let expected = 2.0 * ((-1.0f64).exp() - (-2.0f64).exp());
        assert!(close(d.pdf(1.0), expected, 1e-15));
        assert!(close(d.pdf(1.0), 0.4650883, 5e-8));
    }

    #[test]
    fn rate_order_does_not_matter() {
        let a = make_hypoexponential(&[3.0, 1.0, 7.5]).unwrap();
        let b = make_hypoexponential(&[7.5, 3.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn near_equal_rates_rejected() {
        let err = make_hypoexponential(&[1.0, 1.0 + 1e-12]).unwrap_err();
        assert!(matches!(err, StochasticsError::DegenerateRates { .. }));
        assert!(make_hypoexponential(&[1.0, 1.0 + 1e-6]).is_ok());
    }

    #[test]
    fn stage_cap_enforced() {
        let rates: Vec<f64> = (1..=7).map(f64::from).collect();
        assert!(matches!(
            make_hypoexponential(&rates),
            Err(StochasticsError::TooManyStages { got: 7, max: 6 })
        ));
        assert!(make_hypoexponential(&rates[..6]).is_ok());
        assert!(make_hypoexponential(&[]).is_err());
    }

    #[test]
    fn shifted_law() {
        let d = make_exponential(1.0).unwrap().shifted(1.0).unwrap();
        assert_eq!(d.kind(), DistributionKind::Shifted);
        assert_eq!(d.pdf(0.5), 0.0);
        assert_eq!(d.cdf(1.0), 0.0);
        assert!(close(d.pdf(2.0), (-1.0f64).exp(), 1e-15));
        assert!(close(d.mean(), 2.0, 1e-15));
        assert!(close(d.quantile(0.5), 1.0 + 2f64.ln(), 1e-12));
        assert!(make_exponential(1.0).unwrap().shifted(-1.0).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let d = make_hypoexponential(&[1.0, 4.0])
            .unwrap()
            .shifted(0.25)
            .unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: ContinuousDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(d, back);
        assert!(serde_json::from_str::<ContinuousDistribution>(r#"{"rates":[1.0,1.0]}"#).is_err());
        assert!(
            serde_json::from_str::<ContinuousDistribution>(r#"{"rates":[1.0],"x":1}"#).is_err()
        );
    }

    /// Composite Simpson on [a, b] with n (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + h * i as f64);
        }
        s * h / 3.0
    }

    #[test]
    fn normalization_over_quantile_range() {
        let laws = [
            make_exponential(0.5).unwrap(),
            make_hypoexponential(&[1.0, 2.0]).unwrap(),
            make_hypoexponential(&[1.0, 22.2222, 111.1111, 740.74]).unwrap(),
            make_hypoexponential(&[0.3, 0.9, 2.7, 8.1, 24.3, 72.9])
                .unwrap()
                .shifted(1.5)
                .unwrap(),
        ];
        for d in &laws {
            let hi = d.quantile(1.0 - 1e-9);
            let mass = simpson(|t| d.pdf(t), d.offset(), hi, 200_000);
            assert!(
                (1.0 - 1e-5..=1.0 + 1e-12).contains(&mass),
                "{:?}: mass {mass}",
                d.rates()
            );
        }
    }

    #[test]
    fn cdf_quantile_inversion_grid() {
        let laws = [
            make_exponential(3.0).unwrap(),
            make_hypoexponential(&[1.0, 2.0]).unwrap(),
            make_hypoexponential(&[0.4, 1.1, 5.0, 9.0])
                .unwrap()
                .shifted(2.0)
                .unwrap(),
        ];
        for d in &laws {
            for k in 1..=1000 {
                let u = k as f64 / 1001.0;
                let q = d.quantile(u);
                assert!((d.cdf(q) - u).abs() < 1e-8, "u={u} q={q}");
            }
        }
    }

    #[test]
    fn sample_means_match() {
        let n = 1_000_000;
        let d = make_exponential(2.0).unwrap();
        let mut rng = rng_stream(7, 0);
        let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());

        let d = make_hypoexponential(&[1.0, 2.0]).unwrap();
        let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - 1.5).abs() < 3.0 * 1.25f64.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let d = make_hypoexponential(&[0.7, 3.0]).unwrap();
        let a: Vec<f64> = {
            let mut r = rng_stream(99, 3);
            (0..1000).map(|_| d.sample(&mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = rng_stream(99, 3);
            (0..1000).map(|_| d.sample(&mut r)).collect()
        };
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut other = rng_stream(99, 4);
        assert_ne!(a[0], d.sample(&mut other));
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(r1 in 0.1f64..5.0, gap in 0.05f64..5.0, t in 0.0f64..20.0, dt in 0.0f64..1.0) {
            let d = make_hypoexponential(&[r1, r1 + gap]).unwrap();
            prop_assert!(d.cdf(t) <= d.cdf(t + dt) + 1e-15);
            prop_assert!(d.pdf(t) >= 0.0);
        }
    }
}
