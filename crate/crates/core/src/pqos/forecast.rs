use std::collections::BTreeMap;

use pqos_neuro::{
    load_checkpoint, save_checkpoint, Dense, GaussianHead, Graph, LstmCell, ParamStore, Tensor, Var,
};
use serde::{Deserialize, Serialize};

use super::common::{gather_column, r2_or_zero, train_loop, TrainConfig};
use super::{PqosError, Standardizer};
use crate::kpidata::{split_by_days, KpiRecord, BIN_SECONDS};
use crate::stochastics::rng_stream;

/// Columns of one window step: the ten features, then the label.
pub const STEP_WIDTH: usize = 11;

/// `lookback` consecutive bins of one cell and the label `horizon` bins
/// after the last of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPair {
    pub cell_id: u32,
    /// Timestamp of the target bin.
    pub timestamp: i64,
    pub window: Vec<[f64; STEP_WIDTH]>,
    pub target: f64,
}

impl ForecastPair {
    /// Label of the last bin in the window.
    pub fn last_label(&self) -> f64 {
        self.window.last().expect("nonempty window")[STEP_WIDTH - 1]
    }
}

fn step_row(r: &KpiRecord) -> [f64; STEP_WIDTH] {
    let mut row = [0.0; STEP_WIDTH];
    row[..10].copy_from_slice(&r.features());
    row[10] = r.label_latency_ms;
    row
}

/// Supervised pairs from per-cell series. Windows never span a missing
/// bin; gaps are logged. Every cell needs at least `lookback + horizon`
/// records.
pub fn make_forecast_windows(
    records: &[KpiRecord],
    lookback: usize,
    horizon: usize,
) -> Result<Vec<ForecastPair>, PqosError> {
    if lookback == 0 || horizon == 0 {
        return Err(PqosError::Data("lookback and horizon must be >= 1".into()));
    }
    let mut cells: BTreeMap<u32, Vec<&KpiRecord>> = BTreeMap::new();
    for r in records {
        cells.entry(r.cell_id).or_default().push(r);
    }
    let mut pairs = Vec::new();
    for (cell, mut series) in cells {
        series.sort_by_key(|r| r.timestamp);
        series.dedup_by_key(|r| r.timestamp);
        if series.len() < lookback + horizon {
            return Err(PqosError::Data(format!(
                "cell {cell} has {} bins, windows need {}",
                series.len(),
                lookback + horizon
            )));
        }
        let mut runs: Vec<&[&KpiRecord]> = Vec::new();
        let mut start = 0;
        for i in 1..=series.len() {
            if i == series.len() || series[i].timestamp - series[i - 1].timestamp != BIN_SECONDS {
                runs.push(&series[start..i]);
                start = i;
            }
        }
        if runs.len() > 1 {
            log::warn!(
                "cell {cell}: {} gaps in the series, windows split there",
                runs.len() - 1
            );
        }
        for run in runs {
            for t in lookback - 1..run.len().saturating_sub(horizon) {
                let target = run[t + horizon];
                pairs.push(ForecastPair {
                    cell_id: cell,
                    timestamp: target.timestamp,
                    window: run[t + 1 - lookback..=t]
                        .iter()
                        .map(|r| step_row(r))
                        .collect(),
                    target: target.label_latency_ms,
                });
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub train_days: u32,
    pub test_days: u32,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            lookback: 8,
            horizon: 1,
            hidden: 32,
            train_days: 20,
            test_days: 10,
            train: TrainConfig {
                epochs: 15,
                batch_size: 128,
                lr: 3e-3,
                final_lr_fraction: 0.1,
            },
            seed: 0,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<(), PqosError> {
        self.train.validate()?;
        if self.lookback == 0 || self.horizon == 0 || self.hidden == 0 {
            return Err(PqosError::Data(
                "lookback, horizon and hidden must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model: String,
    pub horizon: usize,
    pub lookback: usize,
    pub r2: f64,
    pub baseline: String,
    pub baseline_r2: f64,
    pub n_params: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
    pub warnings: Vec<String>,
}

/// LSTM over the window with a Gaussian head on the standardized target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmForecaster {
    pub config: ForecastConfig,
    pub standardizer: Standardizer,
    pub target_mean: f64,
    pub target_std: f64,
    pub cell: LstmCell,
    pub out: Dense,
    #[serde(skip)]
    pub store: ParamStore,
}

impl LstmForecaster {
    fn steps(&self, pairs: &[ForecastPair], idx: &[usize]) -> Vec<Tensor> {
        (0..self.config.lookback)
            .map(|s| {
                let mut data = Vec::with_capacity(idx.len() * STEP_WIDTH);
                for &i in idx {
                    data.extend(self.standardizer.apply(&pairs[i].window[s]));
                }
                Tensor::new(idx.len(), STEP_WIDTH, data)
            })
            .collect()
    }

    fn raw_output(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        steps: Vec<Tensor>,
    ) -> Result<Var, PqosError> {
        let xs: Vec<Var> = steps.into_iter().map(|t| g.input(t)).collect();
        let h = self.cell.forward(g, store, &xs)?;
        Ok(self.out.forward(g, store, h))
    }

    fn check_windows(&self, pairs: &[ForecastPair]) -> Result<(), PqosError> {
        match pairs
            .iter()
            .find(|p| p.window.len() != self.config.lookback)
        {
            Some(p) => Err(PqosError::Data(format!(
                "window of {} steps, model expects {}",
                p.window.len(),
                self.config.lookback
            ))),
            None => Ok(()),
        }
    }

    /// Predictive `(mean, stddev)` of each target, in ms.
    pub fn predict(&self, pairs: &[ForecastPair]) -> Result<Vec<(f64, f64)>, PqosError> {
        self.check_windows(pairs)?;
        let mut out = Vec::with_capacity(pairs.len());
        let idx: Vec<usize> = (0..pairs.len()).collect();
        for chunk in idx.chunks(4096) {
            let mut g = Graph::new();
            let raw = self.raw_output(&self.store, &mut g, self.steps(pairs, chunk))?;
            let (mu, sigma) = GaussianHead.forward(&mut g, raw);
            let (mu, sigma) = (g.value(mu), g.value(sigma));
            for r in 0..chunk.len() {
                out.push((
                    self.target_mean + self.target_std * mu.get(r, 0),
                    self.target_std * sigma.get(r, 0),
                ));
            }
        }
        Ok(out)
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

/// Trains on `train` by Gaussian NLL and scores `test` against the
/// persistence forecast `ŷ(t+h) = y(t)`.
pub fn train_lstm_forecaster(
    train: &[ForecastPair],
    test: &[ForecastPair],
    config: &ForecastConfig,
) -> Result<(LstmForecaster, ForecastReport), PqosError> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(PqosError::Data("need training and test windows".into()));
    }
    let steps: Vec<&[f64; STEP_WIDTH]> = train.iter().flat_map(|p| &p.window).collect();
    let standardizer = Standardizer::fit(&steps);
    let targets: Vec<f64> = train.iter().map(|p| p.target).collect();
    let target_mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let var = targets
        .iter()
        .map(|y| (y - target_mean).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    let target_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
    let z: Vec<f64> = targets
        .iter()
        .map(|y| (y - target_mean) / target_std)
        .collect();

    let mut store = ParamStore::new();
    let mut rng = rng_stream(config.seed, 30);
    let cell = LstmCell::new(&mut store, "lstm", STEP_WIDTH, config.hidden, &mut rng);
    let out = Dense::new(
        &mut store,
        "out",
        config.hidden,
        GaussianHead::WIDTH,
        &mut rng,
    );
    let mut model = LstmForecaster {
        config: config.clone(),
        standardizer,
        target_mean,
        target_std,
        cell,
        out,
        store: ParamStore::new(),
    };
    model.check_windows(train)?;
    let history = train_loop(
        &config.train,
        train.len(),
        &mut store,
        config.seed,
        31,
        |g, s, batch, _| {
            let raw = model.raw_output(s, g, model.steps(train, batch))?;
            let y = g.input(gather_column(&z, batch));
            let nll = GaussianHead.nll(g, raw, y);
            Ok(g.mean(nll))
        },
    )?;
    model.store = store;

    let preds: Vec<f64> = model.predict(test)?.into_iter().map(|(m, _)| m).collect();
    let truths: Vec<f64> = test.iter().map(|p| p.target).collect();
    let persistence: Vec<f64> = test.iter().map(ForecastPair::last_label).collect();
    let mut warnings = Vec::new();
    let r2 = r2_or_zero(&preds, &truths, &mut warnings)?;
    let baseline_r2 = r2_or_zero(&persistence, &truths, &mut Vec::new())?;
    let report = ForecastReport {
        model: "lstm".into(),
        horizon: config.horizon,
        lookback: config.lookback,
        r2,
        baseline: "persistence".into(),
        baseline_r2,
        n_params: model.store.scalar_count(),
        n_train: train.len(),
        n_test: test.len(),
        final_train_loss: *history.last().expect("epochs >= 1"),
        warnings,
    };
    Ok((model, report))
}

/// Day-level split, windowing of each side, training and evaluation.
pub fn run_forecast_pipeline(
    records: &[KpiRecord],
    config: &ForecastConfig,
) -> Result<(LstmForecaster, ForecastReport), PqosError> {
    config.validate()?;
    let (train, test) = split_by_days(records, config.train_days, config.test_days)?;
    let train = make_forecast_windows(&train, config.lookback, config.horizon)?;
    let test = make_forecast_windows(&test, config.lookback, config.horizon)?;
    train_lstm_forecaster(&train, &test, config)
}
