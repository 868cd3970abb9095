use pqos_neuro::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::r2;
use super::PqosError;
use crate::kpidata::KpiRecord;
use crate::stochastics::rng_stream;

/// Optimization settings shared by every pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate decays linearly to `lr · final_lr_fraction`.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PqosError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(PqosError::Data(
                "epochs, batch_size and lr must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(PqosError::Data(
                "final_lr_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// The ten model features of every record, in `FEATURE_NAMES` order.
pub fn feature_matrix(records: &[KpiRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| r.features().to_vec()).collect()
}

pub(crate) fn gather(rows: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let cols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::new(idx.len(), cols, data)
}

pub(crate) fn gather_column(values: &[f64], idx: &[usize]) -> Tensor {
    Tensor::column(idx.iter().map(|&i| values[i]).collect())
}

/// Minibatch Adam over `n` examples; `loss` builds the batch loss. The
/// shuffling order comes from `rng_stream(seed, stream)`. Returns the mean
/// loss of each epoch.
pub(crate) fn train_loop<F>(
    cfg: &TrainConfig,
    n: usize,
    store: &mut ParamStore,
    seed: u64,
    stream: u64,
    mut loss: F,
) -> Result<Vec<f64>, PqosError>
where
    F: FnMut(&mut Graph, &ParamStore, &[usize], &mut ChaCha8Rng) -> Result<Var, PqosError>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(PqosError::Data("empty training set".into()));
    }
    let mut rng = rng_stream(seed, stream);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let frac = if cfg.epochs > 1 {
            epoch as f64 / (cfg.epochs - 1) as f64
        } else {
            0.0
        };
        adam.config.lr = cfg.lr * (1.0 - frac * (1.0 - cfg.final_lr_fraction));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let l = loss(&mut g, store, batch, &mut rng)?;
            let value = g.value(l).item();
            if !value.is_finite() {
                return Err(PqosError::Training {
                    epoch,
                    message: format!("non-finite loss {value} after {batches} batches"),
                });
            }
            let grads = g.backward(l)?;
            adam.step(store, &grads)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}

/// `r2`, with constant truths reported as 0 plus a warning.
pub(crate) fn r2_or_zero(
    preds: &[f64],
    truths: &[f64],
    warnings: &mut Vec<String>,
) -> Result<f64, PqosError> {
    match r2(preds, truths) {
        Ok(v) => Ok(v),
        Err(PqosError::Undefined(_)) => {
            let w = "held-out labels are constant; r2 undefined, reported as 0".to_string();
            log::warn!("{w}");
            warnings.push(w);
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}
