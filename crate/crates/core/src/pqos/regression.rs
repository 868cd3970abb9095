use pqos_neuro::{
    elbo_loss, hypoexp_cdf, hypoexp_pdf, load_checkpoint, save_checkpoint, Activation,
    BayesianDense, Graph, HypoexpHead, HypoexpOutput, KlMode, Noise, ParamStore, Var,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::common::{feature_matrix, gather, gather_column, r2_or_zero, train_loop, TrainConfig};
use super::metrics::coverage;
use super::{PqosError, Standardizer};
use crate::kpidata::KpiRecord;
use crate::stochastics::rng_stream;

/// Lower end of the exact likelihood in scaled label units; see
/// `Graph::hypoexp_nll`.
const Z_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub hidden: Vec<usize>,
    pub n_stages: usize,
    /// Adds a learned per-record location shift to the head.
    pub shifted: bool,
    pub prior_sigma: f64,
    /// Initial posterior stddev of every weight.
    pub init_sigma: f64,
    pub kl_mode: KlMode,
    /// Defaults to `1 / n_train`.
    pub kl_weight: Option<f64>,
    pub mc_samples: usize,
    pub predict_samples: usize,
    pub test_fraction: f64,
    /// Share of the training records held back to recalibrate the
    /// predictive spread; 0 disables recalibration.
    pub calibration_fraction: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            n_stages: 3,
            shifted: true,
            prior_sigma: 1.0,
            init_sigma: 0.01,
            kl_mode: KlMode::ClosedForm,
            kl_weight: None,
            mc_samples: 1,
            predict_samples: 64,
            test_fraction: 0.2,
            calibration_fraction: 0.1,
            train: TrainConfig {
                epochs: 30,
                batch_size: 256,
                lr: 3e-3,
                final_lr_fraction: 0.1,
            },
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<(), PqosError> {
        self.train.validate()?;
        if self.mc_samples == 0 || self.predict_samples == 0 {
            return Err(PqosError::Data("sample counts must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PqosError::Data("test_fraction must be in (0, 1)".into()));
        }
        if !(0.0..0.5).contains(&self.calibration_fraction) {
            return Err(PqosError::Data(
                "calibration_fraction must be in [0, 0.5)".into(),
            ));
        }
        if !(self.prior_sigma > 0.0 && self.init_sigma > 0.0) {
            return Err(PqosError::Data(
                "prior_sigma and init_sigma must be > 0".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(PqosError::Data("hidden widths must be positive".into()));
        }
        HypoexpHead::new(self.n_stages, self.shifted)?;
        Ok(())
    }
}

/// Bayesian network with a Hypoexponential output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticRegressor {
    pub config: RegressionConfig,
    pub standardizer: Standardizer,
    /// Labels are divided by this before training.
    pub label_scale: f64,
    /// Spread factor `κ ≥ 1`: every component `(s, λ)` becomes
    /// `(s + m·(1 − 1/κ), κ·λ)` with `m = Σ 1/λ_i`, which keeps its mean.
    pub calibration: f64,
    pub layers: Vec<BayesianDense>,
    pub head: HypoexpHead,
    #[serde(skip)]
    pub store: ParamStore,
}

/// Equal-weight mixture of shifted Hypoexponential laws, in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    /// `(shift, rates)` per weight sample, in scaled units.
    pub components: Vec<(f64, Vec<f64>)>,
    pub scale: f64,
}

impl PredictiveDistribution {
    pub fn mean(&self) -> f64 {
        let m: f64 = self
            .components
            .iter()
            .map(|(s, r)| s + r.iter().map(|l| 1.0 / l).sum::<f64>())
            .sum();
        self.scale * m / self.components.len() as f64
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let z = y / self.scale;
        self.components
            .iter()
            .map(|(s, r)| hypoexp_cdf(r, z - s))
            .sum::<f64>()
            / self.components.len() as f64
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let z = y / self.scale;
        self.components
            .iter()
            .map(|(s, r)| hypoexp_pdf(r, z - s))
            .sum::<f64>()
            / (self.components.len() as f64 * self.scale)
    }

    /// `−log pdf(y)`, with the density floored at `1e-300`.
    pub fn nll(&self, y: f64) -> f64 {
        -self.pdf(y).max(1e-300).ln()
    }

    /// Mixture quantile by bisection.
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
        let mut lo = self
            .components
            .iter()
            .map(|c| c.0)
            .fold(f64::INFINITY, f64::min)
            * self.scale;
        let mut hi = self
            .components
            .iter()
            .map(|(s, r)| s + r.iter().map(|l| 1.0 / l).sum::<f64>())
            .fold(0.0, f64::max)
            * self.scale
            * 2.0;
        while self.cdf(hi) < q {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-10 * hi {
                break;
            }
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub timestamp: i64,
    pub cell_id: u32,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub r2: f64,
    pub mean_nll: f64,
    pub ci95_coverage: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub samples: Vec<PredictionRow>,
}

/// Record-level shuffled split; both index lists are sorted.
pub fn record_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_stream(seed, 11));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

impl ProbabilisticRegressor {
    fn forward(&self, g: &mut Graph, x: Var, noise: &mut Noise) -> (HypoexpOutput, Var) {
        self.forward_with(&self.store, g, x, noise)
    }

    fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: Var,
        noise: &mut Noise,
    ) -> (HypoexpOutput, Var) {
        let last = self.layers.len() - 1;
        let mut h = x;
        let mut kl_total: Option<Var> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, kl) = layer.forward(g, store, h, noise);
            kl_total = Some(match kl_total {
                Some(k) => g.add(k, kl),
                None => kl,
            });
            h = if i < last {
                Activation::Tanh.apply(g, y)
            } else {
                y
            };
        }
        (
            self.head.forward(g, h),
            kl_total.expect("at least one layer"),
        )
    }

    fn inputs(&self, records: &[KpiRecord]) -> Vec<Vec<f64>> {
        feature_matrix(records)
            .iter()
            .map(|r| self.standardizer.apply(r))
            .collect()
    }

    /// Predictive distributions from `k` weight samples. Sample `j` uses
    /// the same weights for every record.
    pub fn predict_with_samples(
        &self,
        records: &[KpiRecord],
        k: usize,
    ) -> Vec<PredictiveDistribution> {
        let x = self.inputs(records);
        let all: Vec<usize> = (0..x.len()).collect();
        let xt = gather(&x, &all);
        let mut rng = rng_stream(self.config.seed, 7);
        let mut out: Vec<PredictiveDistribution> = (0..x.len())
            .map(|_| PredictiveDistribution {
                components: Vec::with_capacity(k),
                scale: self.label_scale,
            })
            .collect();
        for _ in 0..k {
            let mut g = Graph::new();
            let xv = g.input(xt.clone());
            let (head, _) = self.forward(&mut g, xv, &mut Noise::Sample(&mut rng));
            let rates = g.value(head.rates);
            let shift = head.shift.map(|s| g.value(s).clone());
            for (i, d) in out.iter_mut().enumerate() {
                let s = shift.as_ref().map_or(0.0, |t| t.get(i, 0));
                d.components.push(self.calibrated(s, rates.row(i)));
            }
        }
        out
    }

    fn calibrated(&self, shift: f64, rates: &[f64]) -> (f64, Vec<f64>) {
        let k = self.calibration;
        let m: f64 = rates.iter().map(|l| 1.0 / l).sum();
        (
            shift + m * (1.0 - 1.0 / k),
            rates.iter().map(|l| l * k).collect(),
        )
    }

    /// Distributions from the configured number of weight samples.
    pub fn predict(&self, records: &[KpiRecord]) -> Vec<PredictiveDistribution> {
        self.predict_with_samples(records, self.config.predict_samples)
    }

    /// Posterior-mean weights only.
    pub fn predict_frozen(&self, records: &[KpiRecord]) -> Vec<PredictiveDistribution> {
        let x = self.inputs(records);
        let all: Vec<usize> = (0..x.len()).collect();
        let mut g = Graph::new();
        let xv = g.input(gather(&x, &all));
        let (head, _) = self.forward(&mut g, xv, &mut Noise::Zero);
        let rates = g.value(head.rates);
        (0..x.len())
            .map(|i| PredictiveDistribution {
                components: vec![self.calibrated(
                    head.shift.map_or(0.0, |s| g.value(s).get(i, 0)),
                    rates.row(i),
                )],
                scale: self.label_scale,
            })
            .collect()
    }

    /// Predictive NLL of each record's label (higher is more anomalous).
    pub fn conditional_anomaly_scores(&self, records: &[KpiRecord]) -> Vec<f64> {
        self.predict(records)
            .iter()
            .zip(records)
            .map(|(d, r)| d.nll(r.label_latency_ms))
            .collect()
    }

    pub fn conditional_anomaly_score(&self, record: &KpiRecord) -> f64 {
        self.conditional_anomaly_scores(std::slice::from_ref(record))[0]
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

/// Trains on `train`; features are standardized on `train` only. A
/// `calibration_fraction` share of it is held back to fit the spread
/// factor.
pub fn train_probabilistic_regressor(
    all_train: &[KpiRecord],
    config: &RegressionConfig,
) -> Result<(ProbabilisticRegressor, Vec<f64>), PqosError> {
    config.validate()?;
    let (fit_idx, cal_idx) = record_split(
        all_train.len(),
        config.calibration_fraction,
        config.seed.wrapping_add(1),
    );
    let train: Vec<KpiRecord> = fit_idx.iter().map(|&i| all_train[i]).collect();
    let calib: Vec<KpiRecord> = cal_idx.iter().map(|&i| all_train[i]).collect();
    if train.is_empty() {
        return Err(PqosError::Data("empty training set".into()));
    }
    let raw = feature_matrix(&train);
    let standardizer = Standardizer::fit(&raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let labels: Vec<f64> = train.iter().map(|r| r.label_latency_ms).collect();
    if labels.iter().any(|&y| !(y > 0.0)) {
        return Err(PqosError::Data("latency labels must be > 0".into()));
    }
    let label_scale = labels.iter().sum::<f64>() / labels.len() as f64;
    let y: Vec<f64> = labels.iter().map(|v| v / label_scale).collect();

    let head = HypoexpHead::new(config.n_stages, config.shifted)?;
    let mut store = ParamStore::new();
    let mut init_rng = rng_stream(config.seed, 5);
    let mut dims = vec![x[0].len()];
    dims.extend(&config.hidden);
    dims.push(head.width());
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            let mut l = BayesianDense::new(
                &mut store,
                &format!("bnn{i}"),
                d[0],
                d[1],
                config.prior_sigma,
                config.init_sigma,
                &mut init_rng,
            );
            l.kl_mode = config.kl_mode;
            l
        })
        .collect();
    let mut model = ProbabilisticRegressor {
        config: config.clone(),
        standardizer,
        label_scale,
        calibration: 1.0,
        layers,
        head,
        store: ParamStore::new(),
    };
    let kl_weight = config.kl_weight.unwrap_or(1.0 / x.len() as f64);
    let history = train_loop(
        &config.train,
        x.len(),
        &mut store,
        config.seed,
        6,
        |g, s, batch, rng| {
            let xb = gather(&x, batch);
            let yb = gather_column(&y, batch);
            let mut samples = Vec::with_capacity(config.mc_samples);
            for _ in 0..config.mc_samples {
                let xv = g.input(xb.clone());
                let yv = g.input(yb.clone());
                let (out, kl) = model.forward_with(s, g, xv, &mut Noise::Sample(rng));
                let nll = model.head.nll(g, out, yv, Z_MIN)?;
                let nll = g.mean(nll);
                samples.push((kl, nll));
            }
            Ok(elbo_loss(g, &samples, kl_weight)?)
        },
    )?;
    model.store = store;
    if !calib.is_empty() {
        model.calibration = fit_calibration(&model, &calib);
        log::info!("spread calibration factor {:.4}", model.calibration);
    }
    if history.last().is_some_and(|l| !l.is_finite()) {
        return Err(PqosError::Training {
            epoch: history.len(),
            message: "non-finite final loss".into(),
        });
    }
    Ok((model, history))
}

/// Spread factor whose central 95% intervals cover 95% of `calib`.
fn fit_calibration(model: &ProbabilisticRegressor, calib: &[KpiRecord]) -> f64 {
    let base = ProbabilisticRegressor {
        calibration: 1.0,
        ..model.clone()
    };
    let raw = base.predict(calib);
    let coverage_at = |k: f64| -> f64 {
        let probe = ProbabilisticRegressor {
            calibration: k,
            store: ParamStore::new(),
            ..base.clone()
        };
        let inside = raw
            .iter()
            .zip(calib)
            .filter(|(d, r)| {
                let d = PredictiveDistribution {
                    components: d
                        .components
                        .iter()
                        .map(|(s, l)| probe.calibrated(*s, l))
                        .collect(),
                    scale: d.scale,
                };
                let p = d.cdf(r.label_latency_ms);
                (0.025..=0.975).contains(&p)
            })
            .count();
        inside as f64 / calib.len() as f64
    };
    if coverage_at(1.0) <= 0.95 {
        return 1.0;
    }
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while coverage_at(hi) > 0.95 && hi < 1e3 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        if coverage_at(mid) > 0.95 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Record-level split, training and held-out evaluation.
pub fn run_regression_pipeline(
    records: &[KpiRecord],
    config: &RegressionConfig,
) -> Result<(ProbabilisticRegressor, RegressionReport), PqosError> {
    config.validate()?;
    let (train_idx, test_idx) = record_split(records.len(), config.test_fraction, config.seed);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(PqosError::Data("split leaves an empty side".into()));
    }
    let train: Vec<KpiRecord> = train_idx.iter().map(|&i| records[i]).collect();
    let test: Vec<KpiRecord> = test_idx.iter().map(|&i| records[i]).collect();
    let (model, history) = train_probabilistic_regressor(&train, config)?;
    let dists = model.predict(&test);

    let mut samples = Vec::with_capacity(test.len());
    let mut nll = 0.0;
    for (d, r) in dists.iter().zip(&test) {
        nll += d.nll(r.label_latency_ms);
        samples.push(PredictionRow {
            timestamp: r.timestamp,
            cell_id: r.cell_id,
            mean: d.mean(),
            q025: d.quantile(0.025),
            q975: d.quantile(0.975),
            truth: r.label_latency_ms,
        });
    }
    let preds: Vec<f64> = samples.iter().map(|s| s.mean).collect();
    let truths: Vec<f64> = samples.iter().map(|s| s.truth).collect();
    let mut warnings = Vec::new();
    let r2 = r2_or_zero(&preds, &truths, &mut warnings)?;
    let intervals: Vec<(f64, f64)> = samples.iter().map(|s| (s.q025, s.q975)).collect();
    let report = RegressionReport {
        r2,
        mean_nll: nll / test.len() as f64,
        ci95_coverage: coverage(&intervals, &truths),
        n_train: train.len(),
        n_test: test.len(),
        final_train_loss: *history.last().expect("epochs >= 1"),
        warnings,
        samples,
    };
    Ok((model, report))
}
