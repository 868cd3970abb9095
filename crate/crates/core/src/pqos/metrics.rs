use serde::{Deserialize, Serialize};

use super::PqosError;

/// `1 − SS_res / SS_tot`.
pub fn r2(preds: &[f64], truths: &[f64]) -> Result<f64, PqosError> {
    if preds.len() != truths.len() || truths.is_empty() {
        return Err(PqosError::Data(format!(
            "r2 needs equal nonempty inputs, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(PqosError::Undefined("r2"));
    }
    let ss_res: f64 = preds.iter().zip(truths).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing is flagged.
    pub fn precision(&self) -> Option<f64> {
        let flagged = self.tp + self.fp;
        (flagged > 0).then(|| self.tp as f64 / flagged as f64)
    }

    /// `None` without positives.
    pub fn recall(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }
}

pub fn confusion(flags: &[bool], labels: &[bool]) -> Confusion {
    assert_eq!(
        flags.len(),
        labels.len(),
        "flags and labels differ in length"
    );
    let mut c = Confusion::default();
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Fraction of truths inside their closed interval `[lo, hi]`.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> f64 {
    assert_eq!(
        intervals.len(),
        truths.len(),
        "intervals and truths differ in length"
    );
    if truths.is_empty() {
        return 0.0;
    }
    let hit = intervals
        .iter()
        .zip(truths)
        .filter(|&(&(lo, hi), &t)| lo <= t && t <= hi)
        .count();
    hit as f64 / truths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        assert!(r2(&[3.5; 4], &t).unwrap().abs() < 1e-15);
        assert!(matches!(
            r2(&[1.0, 2.0], &[3.0, 3.0]),
            Err(PqosError::Undefined(_))
        ));
    }

    #[test]
    fn all_negative_flags_on_38_positives() {
        let labels: Vec<bool> = (0..755).map(|i| i < 38).collect();
        let c = confusion(&vec![false; 755], &labels);
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (0, 38, 0, 717));
        assert_eq!(c.total(), 755);
        assert_eq!(c.precision(), None);
    }

    #[test]
    fn coverage_counts_closed_intervals() {
        let iv = [(0.0, 1.0), (0.0, 1.0), (2.0, 3.0), (1.0, 1.0)];
        assert_eq!(coverage(&iv, &[1.0, 0.5, 1.0, 1.0]), 0.75);
    }
}
