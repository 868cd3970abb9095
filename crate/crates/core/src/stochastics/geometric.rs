use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StochasticsError;

/// Number of failures before the first success, `pmf(j) ∝ (1−p)^j · p`.
///
/// With a truncation `n_max` the support is `{0, …, n_max}` and the pmf is
/// renormalized over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricLaw {
    success_prob: f64,
    n_max: Option<u32>,
}

impl GeometricLaw {
    pub fn new(success_prob: f64, n_max: Option<u32>) -> Result<Self, StochasticsError> {
        if !(success_prob > 0.0 && success_prob <= 1.0) {
            return Err(StochasticsError::Parameter {
                name: "success_prob",
                value: success_prob,
                reason: "must lie in (0, 1]",
            });
        }
        Ok(Self {
            success_prob,
            n_max,
        })
    }

    /// Retransmission count for a block error rate: `geom(1 − bler)`.
    pub fn from_bler(bler: f64, n_max: Option<u32>) -> Result<Self, StochasticsError> {
        if !(0.0..1.0).contains(&bler) {
            return Err(StochasticsError::Parameter {
                name: "bler",
                value: bler,
                reason: "must lie in [0, 1)",
            });
        }
        Self::new(1.0 - bler, n_max)
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn n_max(&self) -> Option<u32> {
        self.n_max
    }

    fn failure_prob(&self) -> f64 {
        1.0 - self.success_prob
    }

    /// Probability mass kept by the truncation, `1 − (1−p)^(n_max+1)`.
    fn kept_mass(&self) -> f64 {
        match self.n_max {
            None => 1.0,
            Some(n) => 1.0 - self.failure_prob().powi(n as i32 + 1),
        }
    }

    pub fn pmf(&self, j: u32) -> Result<f64, StochasticsError> {
        if let Some(n) = self.n_max {
            if j > n {
                return Err(StochasticsError::Parameter {
                    name: "j",
                    value: f64::from(j),
                    reason: "outside the truncated support",
                });
            }
        }
        Ok(self.failure_prob().powi(j as i32) * self.success_prob / self.kept_mass())
    }

    /// E[N] under the (possibly truncated) law.
    pub fn mean(&self) -> f64 {
        let q = self.failure_prob();
        match self.n_max {
            None => q / self.success_prob,
            Some(n) => {
                (1..=n)
                    .map(|j| f64::from(j) * q.powi(j as i32) * self.success_prob)
                    .sum::<f64>()
                    / self.kept_mass()
            }
        }
    }

    /// Inverse-transform draw over the cumulative pmf.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.success_prob >= 1.0 {
            return 0;
        }
        let q = self.failure_prob();
        let u: f64 = rng.random();
        match self.n_max {
            None => {
                // P(N >= k) = q^k; N = floor(ln(1−u) / ln q).
                let k = ((1.0 - u).ln() / q.ln()).floor();
                if k >= f64::from(u32::MAX) {
                    u32::MAX
                } else {
                    k as u32
                }
            }
            Some(n) => {
                let target = u * self.kept_mass();
                let mut cum = 0.0;
                let mut mass = self.success_prob;
                for j in 0..n {
                    cum += mass;
                    if target < cum {
                        return j;
                    }
                    mass *= q;
                }
                n
            }
        }
    }
}

/// `P(N = j)` for the law; errors when `j` is outside the truncated support.
pub fn geometric_pmf(law: &GeometricLaw, j: u32) -> Result<f64, StochasticsError> {
    law.pmf(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::rng_stream;

    #[test]
    fn untruncated_pmf() {
        let law = GeometricLaw::from_bler(0.1, None).unwrap();
        assert!((geometric_pmf(&law, 1).unwrap() - 0.09).abs() < 1e-15);
        assert!((law.mean() - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_bler_is_point_mass() {
        let law = GeometricLaw::new(1.0, Some(8)).unwrap();
        assert_eq!(law.pmf(0).unwrap(), 1.0);
        assert_eq!(law.pmf(3).unwrap(), 0.0);
        let mut rng = rng_stream(1, 0);
        assert!((0..1000).all(|_| law.sample(&mut rng) == 0));
    }

    #[test]
    fn truncated_renormalizes() {
        let law = GeometricLaw::new(0.9, Some(2)).unwrap();
        let p2 = law.pmf(2).unwrap();
        assert!((p2 - 0.009 / (0.9 + 0.09 + 0.009)).abs() < 1e-15);
        assert!((p2 - 0.0090090).abs() < 1e-7);
        let total: f64 = (0..=2).map(|j| law.pmf(j).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(law.pmf(3).is_err());
    }

    #[test]
    fn truncated_mean_by_hand() {
        // P0 = 0.5/0.75, P1 = 0.25/0.75 -> E[N] = 1/3.
        let law = GeometricLaw::from_bler(0.5, Some(1)).unwrap();
        assert!((law.mean() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(GeometricLaw::new(0.0, None).is_err());
        assert!(GeometricLaw::new(1.5, None).is_err());
        assert!(GeometricLaw::from_bler(1.0, None).is_err());
    }

    #[test]
    fn sample_frequencies() {
        for n_max in [None, Some(3)] {
            let law = GeometricLaw::from_bler(0.3, n_max).unwrap();
            let mut rng = rng_stream(5, 1);
            let n = 200_000;
            let mut counts = [0usize; 4];
            for _ in 0..n {
                let k = law.sample(&mut rng) as usize;
                if k < 4 {
                    counts[k] += 1;
                }
            }
            for (j, &c) in counts.iter().enumerate() {
                let p = law.pmf(j as u32).unwrap();
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                assert!((c as f64 / n as f64 - p).abs() < 5.0 * sd, "j={j}");
            }
        }
    }
}
