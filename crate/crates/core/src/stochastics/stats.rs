//! Sample statistics and goodness-of-fit distances.

use super::ContinuousDistribution;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Moment skewness `E[(X−m)^3] / σ^3`.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n − F|` against a
/// continuous law.
pub fn ks_statistic(samples: &[f64], law: &ContinuousDistribution) -> f64 {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            let above = (i as f64 + 1.0) / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Wasserstein-1 distance to a continuous law via the quantile coupling,
/// `Σ_i |x_(i) − Q((i − ½)/n)| / n`.
pub fn wasserstein1(samples: &[f64], law: &ContinuousDistribution) -> f64 {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - law.quantile((i as f64 + 0.5) / n)).abs())
        .sum::<f64>()
        / n
}

/// Exact `∫ |F_a − F_b| dt` between two empirical laws.
pub fn wasserstein1_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut points: Vec<f64> = a.iter().chain(&b).copied().collect();
    points.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    for w in points.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::{make_exponential, rng_stream};

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!(skewness(&xs).abs() < 1e-15);
        assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [0.0, 10.0];
        assert_eq!(quantile_sorted(&xs, 0.25), 2.5);
        assert_eq!(quantile_sorted(&[3.0], 0.9), 3.0);
    }

    #[test]
    fn ks_single_point() {
        // F(1) for exp(1) is 1 − e^-1; the step at x=1 goes 0 -> 1.
        let law = make_exponential(1.0).unwrap();
        let f = 1.0 - (-1.0f64).exp();
        assert!((ks_statistic(&[1.0], &law) - f.max(1.0 - f)).abs() < 1e-15);
    }

    #[test]
    fn self_comparisons_are_zero() {
        let law = make_exponential(2.0).unwrap();
        let mut rng = rng_stream(3, 0);
        let xs: Vec<f64> = (0..5000).map(|_| law.sample(&mut rng)).collect();
        assert_eq!(ks_two_sample(&xs, &xs), 0.0);
        assert_eq!(wasserstein1_two_sample(&xs, &xs), 0.0);
        assert!(ks_statistic(&xs, &law) < 0.03);
        assert!(wasserstein1(&xs, &law) < 0.02);
    }

    #[test]
    fn shifted_samples_have_w1_equal_to_shift() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.5, 3.5];
        assert!((wasserstein1_two_sample(&a, &b) - 0.5).abs() < 1e-15);
        assert!((ks_two_sample(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }
}
