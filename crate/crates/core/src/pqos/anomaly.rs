use std::collections::HashMap;

use pqos_neuro::{
    load_checkpoint, save_checkpoint, Activation, Autoencoder, AutoencoderSpec, Graph, ParamStore,
    Tensor,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::common::{gather, train_loop, TrainConfig};
use super::metrics::{confusion, Confusion};
use super::{PqosError, Standardizer};
use crate::kpidata::{KpiRecord, RecordLabel, DAY_SECONDS};
use crate::stochastics::rng_stream;

/// Misclassification costs of the threshold tuner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cost {
    pub c_fp: f64,
    pub c_fn: f64,
}

impl Default for Cost {
    fn default() -> Self {
        Self {
            c_fp: 1.0,
            c_fn: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Anomaly,
}

/// Scores are "higher is more anomalous"; a score equal to `gamma` is
/// normal.
pub fn detect(score: f64, gamma: f64) -> Verdict {
    if score > gamma {
        Verdict::Anomaly
    } else {
        Verdict::Normal
    }
}

/// `c_fp·FP + c_fn·FN` when flagging `score > gamma`.
pub fn threshold_cost(scores: &[f64], labels: &[bool], gamma: f64, cost: Cost) -> f64 {
    let (mut fp, mut fn_) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > gamma, l) {
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    cost.c_fp * fp as f64 + cost.c_fn * fn_ as f64
}

/// Cost-minimizing threshold over the midpoints of consecutive distinct
/// scores plus one sentinel below the minimum and one above the maximum.
/// Ties go to the smaller threshold.
pub fn tune_threshold(scores: &[f64], labels: &[bool], cost: Cost) -> Result<f64, PqosError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(PqosError::Tuning(
            "scores and labels must be nonempty and of equal length".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PqosError::Tuning("scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(PqosError::Tuning("labels contain a single class".into()));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // distinct scores with the label counts at each
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for &(s, l) in &pairs {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if l {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, usize::from(l), usize::from(!l))),
        }
    }
    let negatives = labels.len() - positives;
    let first = groups[0].0;
    let last = groups[groups.len() - 1].0;

    // below everything: all flagged
    let mut best_gamma = first - (1.0 + first.abs());
    let mut best = cost.c_fp * negatives as f64;
    let (mut pos_le, mut neg_le) = (0usize, 0usize);
    for (i, &(s, p, n)) in groups.iter().enumerate() {
        pos_le += p;
        neg_le += n;
        let gamma = match groups.get(i + 1) {
            Some(next) => 0.5 * (s + next.0),
            None => last + (1.0 + last.abs()),
        };
        let c = cost.c_fp * (negatives - neg_le) as f64 + cost.c_fn * pos_le as f64;
        if c < best {
            best = c;
            best_gamma = gamma;
        }
    }
    Ok(best_gamma)
}

/// Largest recall of any threshold that flags no negative.
pub fn best_recall_at_full_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let max_negative = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let above = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| l && s > max_negative)
        .count();
    Some(above as f64 / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyConfig {
    pub hidden: Vec<usize>,
    pub bottleneck: usize,
    /// Days from the start used to train on normal traffic.
    pub train_days: u32,
    /// Feeds `ln(1 + x)` of traffic volume and active UEs and `ln` of the
    /// label to the autoencoder.
    pub log_scale: bool,
    /// Divides each column's squared error by its mean on the training
    /// rows before summing.
    pub normalize_errors: bool,
    /// Stddev of the Gaussian noise added to the standardized inputs while
    /// training; the target stays clean. 0 trains a plain autoencoder.
    pub denoise_sigma: f64,
    pub cost: Cost,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![8],
            bottleneck: 5,
            train_days: 14,
            log_scale: true,
            normalize_errors: true,
            denoise_sigma: 1.0,
            cost: Cost::default(),
            train: TrainConfig {
                epochs: 40,
                batch_size: 256,
                lr: 3e-3,
                final_lr_fraction: 0.1,
            },
            seed: 0,
        }
    }
}

/// Autoencoder on standardized features and label; score = squared
/// reconstruction error, each column weighted by `1 / error_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDetector {
    pub standardizer: Standardizer,
    pub autoencoder: Autoencoder,
    pub log_scale: bool,
    pub error_scale: Vec<f64>,
    #[serde(skip)]
    pub store: ParamStore,
}

fn ae_row(r: &KpiRecord, log_scale: bool) -> Vec<f64> {
    let mut row = r.features().to_vec();
    row.push(r.label_latency_ms);
    if log_scale {
        row[0] = row[0].ln_1p();
        row[2] = row[2].ln_1p();
        row[10] = row[10].max(1e-9).ln();
    }
    row
}

impl AnomalyDetector {
    fn rows(&self, records: &[KpiRecord]) -> Vec<Vec<f64>> {
        records
            .iter()
            .map(|r| self.standardizer.apply(&ae_row(r, self.log_scale)))
            .collect()
    }

    pub fn scores(&self, records: &[KpiRecord]) -> Vec<f64> {
        if records.is_empty() {
            return Vec::new();
        }
        column_errors(&self.autoencoder, &self.store, &self.rows(records))
            .iter()
            .map(|e| e.iter().zip(&self.error_scale).map(|(v, s)| v / s).sum())
            .collect()
    }

    /// Per-column terms of each score, in `ae_row` column order.
    pub fn score_terms(&self, records: &[KpiRecord]) -> Vec<Vec<f64>> {
        column_errors(&self.autoencoder, &self.store, &self.rows(records))
            .into_iter()
            .map(|e| {
                e.iter()
                    .zip(&self.error_scale)
                    .map(|(v, s)| v / s)
                    .collect()
            })
            .collect()
    }

    pub fn score(&self, record: &KpiRecord) -> f64 {
        self.scores(std::slice::from_ref(record))[0]
    }

    pub fn detect(&self, record: &KpiRecord, gamma: f64) -> Verdict {
        detect(self.score(record), gamma)
    }

    pub fn checkpoint(&self) -> Result<String, PqosError> {
        Ok(save_checkpoint(&self.store, self)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, PqosError> {
        let ck = load_checkpoint(text)?;
        let mut model: Self = ck.model()?;
        model.store = ck.to_store()?;
        Ok(model)
    }
}

/// Squared reconstruction error of every column of every row.
fn column_errors(ae: &Autoencoder, store: &ParamStore, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let idx: Vec<usize> = (0..rows.len()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in idx.chunks(8192) {
        let mut g = Graph::new();
        let x = g.input(gather(rows, chunk));
        let recon = ae.forward(&mut g, store, x);
        let recon = g.value(recon);
        for (r, &i) in chunk.iter().enumerate() {
            out.push(
                recon
                    .row(r)
                    .iter()
                    .zip(&rows[i])
                    .map(|(a, b)| (a - b).powi(2))
                    .collect(),
            );
        }
    }
    out
}

pub fn fit_anomaly_detector(
    normal_train: &[KpiRecord],
    config: &AnomalyConfig,
) -> Result<AnomalyDetector, PqosError> {
    if normal_train.is_empty() {
        return Err(PqosError::Data("empty training set".into()));
    }
    if !(config.denoise_sigma.is_finite() && config.denoise_sigma >= 0.0) {
        return Err(PqosError::Data(
            "denoise_sigma must be finite and >= 0".into(),
        ));
    }
    let raw: Vec<Vec<f64>> = normal_train
        .iter()
        .map(|r| ae_row(r, config.log_scale))
        .collect();
    let standardizer = Standardizer::fit(&raw);
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let spec = AutoencoderSpec {
        input_dim: rows[0].len(),
        hidden: config.hidden.clone(),
        bottleneck: config.bottleneck,
        activation: Activation::Tanh,
    };
    let mut store = ParamStore::new();
    let autoencoder = Autoencoder::new(&mut store, "ae", spec, &mut rng_stream(config.seed, 20))?;
    let dim = rows[0].len() as f64;
    let sigma = config.denoise_sigma;
    train_loop(
        &config.train,
        rows.len(),
        &mut store,
        config.seed,
        21,
        |g, s, batch, rng| {
            let clean = gather(&rows, batch);
            let e = if sigma > 0.0 {
                let [r, c] = clean.shape();
                let noisy: Vec<f64> = clean
                    .data()
                    .iter()
                    .map(|v| v + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let xin = g.input(Tensor::new(r, c, noisy));
                let target = g.input(clean);
                let recon = autoencoder.forward(g, s, xin);
                let d = g.sub(recon, target);
                let d2 = g.square(d);
                g.row_sum(d2)
            } else {
                let x = g.input(clean);
                autoencoder.reconstruction_error(g, s, x)
            };
            let m = g.mean(e);
            Ok(g.scale(m, 1.0 / dim))
        },
    )?;
    let dim = rows[0].len();
    let error_scale = if config.normalize_errors {
        let errs = column_errors(&autoencoder, &store, &rows);
        (0..dim)
            .map(|d| (errs.iter().map(|e| e[d]).sum::<f64>() / errs.len() as f64).max(1e-12))
            .collect()
    } else {
        vec![1.0; dim]
    };
    Ok(AnomalyDetector {
        standardizer,
        autoencoder,
        log_scale: config.log_scale,
        error_scale,
        store,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub timestamp: i64,
    pub cell_id: u32,
    pub score: f64,
    pub flag: u8,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub threshold: f64,
    pub confusion: Confusion,
    pub cost: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Best recall of any threshold with zero false positives.
    pub recall_at_full_precision: Option<f64>,
    pub n_train: usize,
    pub n_samples: usize,
    pub n_anomalies: usize,
    #[serde(skip)]
    pub timeline: Vec<TimelineRow>,
}

/// Trains on the first `train_days` days (labeled anomalies excluded),
/// then scores and tunes the threshold on the remaining days.
pub fn run_anomaly_pipeline(
    records: &[KpiRecord],
    labels: &[RecordLabel],
    config: &AnomalyConfig,
) -> Result<(AnomalyDetector, AnomalyReport), PqosError> {
    let by_key: HashMap<(i64, u32), bool> = labels
        .iter()
        .map(|l| ((l.timestamp, l.cell_id), l.anomaly != 0))
        .collect();
    let label_of = |r: &KpiRecord| -> Result<bool, PqosError> {
        by_key
            .get(&(r.timestamp, r.cell_id))
            .copied()
            .ok_or_else(|| {
                PqosError::Data(format!(
                    "no anomaly label for timestamp {} cell {}",
                    r.timestamp, r.cell_id
                ))
            })
    };
    let Some(first) = records.iter().map(|r| r.timestamp).min() else {
        return Err(PqosError::Data("empty dataset".into()));
    };
    let boundary =
        first - first.rem_euclid(DAY_SECONDS) + i64::from(config.train_days) * DAY_SECONDS;

    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.timestamp, r.cell_id));
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut eval_labels = Vec::new();
    let mut dropped = 0;
    for r in sorted {
        let l = label_of(&r)?;
        if r.timestamp < boundary {
            if l {
                dropped += 1;
            } else {
                train.push(r);
            }
        } else {
            eval.push(r);
            eval_labels.push(l);
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} labeled anomalies removed from the training days");
    }
    if eval.is_empty() {
        return Err(PqosError::Data(format!(
            "no records after the {} training days",
            config.train_days
        )));
    }
    let detector = fit_anomaly_detector(&train, config)?;
    let scores = detector.scores(&eval);
    let threshold = tune_threshold(&scores, &eval_labels, config.cost)?;
    let flags: Vec<bool> = scores
        .iter()
        .map(|&s| detect(s, threshold) == Verdict::Anomaly)
        .collect();
    let conf = confusion(&flags, &eval_labels);
    let timeline = eval
        .iter()
        .zip(&scores)
        .zip(flags.iter().zip(&eval_labels))
        .map(|((r, &score), (&f, &l))| TimelineRow {
            timestamp: r.timestamp,
            cell_id: r.cell_id,
            score,
            flag: u8::from(f),
            label: u8::from(l),
        })
        .collect();
    let report = AnomalyReport {
        threshold,
        confusion: conf,
        cost: threshold_cost(&scores, &eval_labels, threshold, config.cost),
        precision: conf.precision(),
        recall: conf.recall(),
        recall_at_full_precision: best_recall_at_full_precision(&scores, &eval_labels),
        n_train: train.len(),
        n_samples: eval.len(),
        n_anomalies: eval_labels.iter().filter(|&&l| l).count(),
        timeline,
    };
    Ok((detector, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tune_threshold_examples() {
        let unit = Cost::default();
        let g = tune_threshold(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true], unit).unwrap();
        assert_eq!(g, 2.5);
        assert_eq!(
            threshold_cost(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true], g, unit),
            0.0
        );

        // overlapping classes, expensive false positives
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
        let labels = [false, true, false, true, true];
        let strict = Cost {
            c_fp: 1e9,
            c_fn: 1.0,
        };
        let g = tune_threshold(&scores, &labels, strict).unwrap();
        assert!(g > 3.0 && g < 4.0);

        assert!(matches!(
            tune_threshold(&[1.0, 2.0], &[true, true], unit),
            Err(PqosError::Tuning(_))
        ));
    }

    #[test]
    fn detect_boundaries() {
        assert_eq!(detect(2.0, 2.0), Verdict::Normal);
        assert_eq!(detect(2.0, f64::INFINITY), Verdict::Normal);
        assert_eq!(detect(-1e300, f64::NEG_INFINITY), Verdict::Anomaly);
    }

    #[test]
    fn full_precision_recall() {
        let s = [0.1, 0.5, 0.9, 0.7, 0.95];
        let l = [false, false, true, true, true];
        assert_eq!(best_recall_at_full_precision(&s, &l), Some(1.0));
        let l = [false, true, true, false, true];
        assert_eq!(best_recall_at_full_precision(&s, &l), Some(2.0 / 3.0));
    }
}
