//! Hypoexponential log-density and its gradient, stable for nearly equal
//! rates.
//!
//! With `F[x_1..x_n]` the divided difference of `x ↦ e^{−x·y}`,
//!
//! ```text
//! pdf(y) = (−1)^{n−1} · Π λ_i · F[λ_1..λ_n]
//! ∂ log pdf / ∂λ_k = 1/λ_k + F[λ_1..λ_n, λ_k] / F[λ_1..λ_n]
//! ∂ log pdf / ∂y   = −λ_1 − F[λ_2..λ_n] / F[λ_1..λ_n]
//! ```
//!
//! Divided differences are read off `exp(−y·J)`, `J` the upper bidiagonal
//! matrix with the nodes on its diagonal and ones above it, computed by
//! scaling and squaring with the diagonal and first superdiagonal refreshed
//! from their closed forms at every squaring.

use crate::NeuroError;

/// `sinh(x)/x`
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// Upper-triangular `exp(−y·(J − m·I))` for `m = min(nodes)`, row-major
/// `n×n`, together with `m`.
fn expm_bidiagonal(nodes: &[f64], y: f64) -> (Vec<f64>, f64) {
    let n = nodes.len();
    let m = nodes.iter().copied().fold(f64::INFINITY, f64::min);
    let diag: Vec<f64> = nodes.iter().map(|&x| -y * (x - m)).collect();
    let sup = -y;
    let norm = diag.iter().map(|d| d.abs()).fold(0.0, f64::max) + sup.abs();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);

    let mut b = vec![0.0; n * n];
    for i in 0..n {
        b[i * n + i] = diag[i] * scale;
        if i + 1 < n {
            b[i * n + i + 1] = sup * scale;
        }
    }
    // Taylor series of exp(B)
    let mut e = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        e[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..=16 {
        term = tri_mul(&term, &b, n);
        let inv = 1.0 / k as f64;
        for v in &mut term {
            *v *= inv;
        }
        for (a, t) in e.iter_mut().zip(&term) {
            *a += t;
        }
    }
    let refresh = |e: &mut [f64], scale: f64| {
        for i in 0..n {
            e[i * n + i] = (diag[i] * scale).exp();
            if i + 1 < n {
                let (a, c) = (diag[i] * scale, diag[i + 1] * scale);
                e[i * n + i + 1] = sup * scale * (0.5 * (a + c)).exp() * sinhc(0.5 * (c - a));
            }
        }
    };
    refresh(&mut e, scale);
    for j in 1..=s {
        e = tri_mul(&e, &e, n);
        refresh(&mut e, 0.5f64.powi(s - j));
    }
    (e, m)
}

fn tri_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in k..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Log-density with gradients w.r.t. the rates and `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypoexpLogPdf {
    pub value: f64,
    pub d_rates: Vec<f64>,
    pub d_y: f64,
}

/// `log pdf(y)` of a sum of independent exponentials with the given rates.
/// Rates may coincide.
pub fn hypoexp_log_pdf(rates: &[f64], y: f64) -> Result<HypoexpLogPdf, NeuroError> {
    if rates.is_empty() || rates.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
        return Err(NeuroError::Data(format!(
            "rates must be finite and > 0, got {rates:?}"
        )));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(NeuroError::Data(format!("y must be > 0, got {y}")));
    }
    if let Some(fast) = log_pdf_partial_fractions(rates, y) {
        return Ok(fast);
    }
    log_pdf_divided_differences(rates, y)
}

fn log_pdf_divided_differences(rates: &[f64], y: f64) -> Result<HypoexpLogPdf, NeuroError> {
    let n = rates.len();
    let (e, m) = expm_bidiagonal(rates, y);
    // F[λ_1..λ_n] = e^{−y m}·base; sign (−1)^{n−1} makes it positive
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    let base = sign * e[n - 1];
    if !(base > 0.0) {
        return Err(NeuroError::Numeric(format!(
            "density underflow at y = {y} for rates {rates:?}"
        )));
    }
    let value = rates.iter().map(|r| r.ln()).sum::<f64>() + base.ln() - y * m;

    let mut d_rates = Vec::with_capacity(n);
    let mut ext = rates.to_vec();
    ext.push(0.0);
    for k in 0..n {
        ext[n] = rates[k];
        let (ek, mk) = expm_bidiagonal(&ext, y);
        debug_assert_eq!(mk, m);
        // sign of an (n+1)-node difference is opposite
        let ratio = -sign * ek[n] / base;
        d_rates.push(1.0 / rates[k] - ratio);
    }
    let tail = if n > 1 { sign * e[2 * n - 1] } else { 0.0 };
    let d_y = -rates[0] - tail / base;
    Ok(HypoexpLogPdf {
        value,
        d_rates,
        d_y,
    })
}

/// `−log pdf(y)`; `y ≤ 0` is a data error.
pub fn hypoexp_nll(rates: &[f64], y: f64) -> Result<f64, NeuroError> {
    Ok(-hypoexp_log_pdf(rates, y)?.value)
}

/// Partial-fraction results are used only while the rounding error of
/// the cancelling sum stays below this bound (relative for densities,
/// absolute for the CDF).
const MAX_CANCELLATION: f64 = 1e-10;

/// `e^{−λ_i y} / Π_{j≠i}(λ_j − λ_i)` for each `i`; `None` on coinciding rates.
fn partial_terms(rates: &[f64], y: f64) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(rates.len());
    for (i, &li) in rates.iter().enumerate() {
        let mut d = 1.0;
        for (j, &lj) in rates.iter().enumerate() {
            if j != i {
                d *= lj - li;
            }
        }
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        out.push((-li * y).exp() / d);
    }
    Some(out)
}

/// Closed-form log-density and gradients when cancellation is harmless.
fn log_pdf_partial_fractions(rates: &[f64], y: f64) -> Option<HypoexpLogPdf> {
    let terms = partial_terms(rates, y)?;
    let s: f64 = terms.iter().sum();
    let mag: f64 = terms.iter().map(|t| t.abs()).sum();
    if !(s > 0.0) || mag * f64::EPSILON > MAX_CANCELLATION * s {
        return None;
    }
    let n = rates.len();
    let d_rates = (0..n)
        .map(|k| {
            let lk = rates[k];
            let mut own = -y;
            let mut cross = 0.0;
            for i in 0..n {
                if i != k {
                    own += 1.0 / (rates[i] - lk);
                    cross += terms[i] / (lk - rates[i]);
                }
            }
            1.0 / lk + (terms[k] * own - cross) / s
        })
        .collect();
    let d_y = -rates.iter().zip(&terms).map(|(l, t)| l * t).sum::<f64>() / s;
    Some(HypoexpLogPdf {
        value: rates.iter().map(|r| r.ln()).sum::<f64>() + s.ln(),
        d_rates,
        d_y,
    })
}

/// Density at `y`; 0 for `y ≤ 0`. No gradients.
pub fn hypoexp_pdf(rates: &[f64], y: f64) -> f64 {
    if !(y > 0.0) || !y.is_finite() {
        return 0.0;
    }
    hypoexp_log_pdf(rates, y).map_or(0.0, |l| l.value.exp())
}

/// `P(Y ≤ y)`. The slow path is the divided difference with an extra node
/// at 0, accurate for nearly equal rates.
pub fn hypoexp_cdf(rates: &[f64], y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y.is_infinite() {
        return 1.0;
    }
    // survival = Σ_i Π_{j≠i} λ_j/(λ_j − λ_i) · e^{−λ_i y}
    if let Some(terms) = partial_terms(rates, y) {
        let prod: f64 = rates.iter().product();
        let (mut surv, mut mag) = (0.0, 0.0);
        for (t, l) in terms.iter().zip(rates) {
            let v = t * prod / l;
            surv += v;
            mag += v.abs();
        }
        if mag * f64::EPSILON <= MAX_CANCELLATION {
            return (1.0 - surv).clamp(0.0, 1.0);
        }
    }
    let n = rates.len();
    let mut ext = rates.to_vec();
    ext.push(0.0);
    let (e, _) = expm_bidiagonal(&ext, y);
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let prod: f64 = rates.iter().product();
    (sign * prod * e[n]).clamp(0.0, 1.0)
}

/// Closed-form distinct-rates density, for cross-checks.
pub fn hypoexp_pdf_distinct(rates: &[f64], y: f64) -> f64 {
    let prod: f64 = rates.iter().product();
    rates
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            let denom: f64 = rates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &lj)| lj - li)
                .product();
            (-li * y).exp() / denom
        })
        .sum::<f64>()
        * prod
}
