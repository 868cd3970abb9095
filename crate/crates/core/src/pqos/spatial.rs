use std::collections::BTreeMap;
use std::rc::Rc;

use pqos_neuro::{
    load_checkpoint, save_checkpoint, Activation, Dense, Graph, Mlp, ParamStore, SageLayer, Tensor,
    Var,
};
use serde::{Deserialize, Serialize};

use super::common::{r2_or_zero, train_loop, TrainConfig};
use super::forecast::{ForecastReport, STEP_WIDTH};
use super::{PqosError, Standardizer};
use crate::kpidata::{split_by_days, CellGraph, KpiRecord, BIN_SECONDS};
use crate::stochastics::rng_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    /// Width of each of the three sage layers.
    pub hidden: usize,
    pub train_days: u32,
    pub test_days: u32,
    /// `batch_size` counts snapshots of the whole graph.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            train_days: 20,
            test_days: 10,
            train: TrainConfig {
                epochs: 30,
                batch_size: 8,
                lr: 3e-3,
                final_lr_fraction: 0.1,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpatialNet {
    /// Three sage layers and a linear readout.
    Sage { layers: Vec<SageLayer>, out: Dense },
    /// Node-wise network that never sees neighbors.
    Dnn(Mlp),
}

/// Predicts every cell's label one bin ahead from the current bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel {
    pub net: SpatialNet,
    pub standardizer: Standardizer,
    pub target_mean: f64,
    pub target_std: f64,
    #[serde(skip)]
    pub store: ParamStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialReport {
    pub sage: ForecastReport,
    pub dnn: ForecastReport,
}

/// One bin of every cell, in graph order, and the labels one bin later.
#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    rows: Vec<[f64; STEP_WIDTH]>,
    targets: Vec<f64>,
}

fn snapshots(records: &[KpiRecord], graph: &CellGraph) -> Result<Vec<Snapshot>, PqosError> {
    let n = graph.n_cells();
    let mut bins: BTreeMap<i64, Vec<Option<&KpiRecord>>> = BTreeMap::new();
    for r in records {
        let i = graph
            .index_of(r.cell_id)
            .ok_or_else(|| PqosError::Data(format!("cell {} is not in the graph", r.cell_id)))?;
        bins.entry(r.timestamp).or_insert_with(|| vec![None; n])[i] = Some(r);
    }
    let complete: BTreeMap<i64, Vec<&KpiRecord>> = bins
        .into_iter()
        .filter_map(|(t, cells)| {
            cells
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .map(|c| (t, c))
        })
        .collect();
    let mut out = Vec::new();
    for (t, now) in &complete {
        if let Some(next) = complete.get(&(t + BIN_SECONDS)) {
            out.push(Snapshot {
                rows: now
                    .iter()
                    .map(|r| {
                        let mut row = [0.0; STEP_WIDTH];
                        row[..10].copy_from_slice(&r.features());
                        row[10] = r.label_latency_ms;
                        row
                    })
                    .collect(),
                targets: next.iter().map(|r| r.label_latency_ms).collect(),
            });
        }
    }
    Ok(out)
}

impl SpatialModel {
    pub fn scalar_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn forward(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: Var,
        neighbors: &Rc<Vec<Vec<usize>>>,
    ) -> Result<Var, PqosError> {
        Ok(match &self.net {
            SpatialNet::Sage { layers, out } => {
                let mut h = x;
                for l in layers {
                    h = l.forward(g, store, h, neighbors)?;
                }
                out.forward(g, store, h)
            }
            SpatialNet::Dnn(mlp) => mlp.forward(g, store, x),
        })
    }

    fn inputs(&self, snaps: &[Snapshot], idx: &[usize]) -> Tensor {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .flat_map(|&i| snaps[i].rows.iter().map(|r| self.standardizer.apply(r)))
            .collect();
        Tensor::from_rows(&rows)
    }

    fn predict_snapshots(
        &self,
        snaps: &[Snapshot],
        neighbors: &Rc<Vec<Vec<usize>>>,
    ) -> Result<Vec<f64>, PqosError> {
        let idx: Vec<usize> = (0..snaps.len()).collect();
        let mut out = Vec::new();
        for chunk in idx.chunks(64) {
            let mut g = Graph::new();
            let x = g.input(self.inputs(snaps, chunk));
            let y = self.forward(&self.store, &mut g, x, neighbors)?;
            out.extend(
                g.value(y)
                    .data()
                    .iter()
                    .map(|z| self.target_mean + self.target_std * z),
            );
        }
        Ok(out)
    }

    /// One-bin-ahead label of every cell whose current record is given,
    /// in graph order. `current` must hold one record per graph cell.
    pub fn predict(&self, current: &[KpiRecord], graph: &CellGraph) -> Result<Vec<f64>, PqosError> {
        let n = graph.n_cells();
        let mut rows = vec![None; n];
        for r in current {
            let i = graph.index_of(r.cell_id).ok_or_else(|| {
                PqosError::Data(format!("cell {} is not in the graph", r.cell_id))
            })?;
            rows[i] = Some(r);
        }
        let rows: Vec<[f64; STEP_WIDTH]> = rows
            .into_iter()
            .map(|r| {
                let r = r.ok_or_else(|| PqosError::Data("a graph cell has no record".into()))?;
                let mut row = [0.0; STEP_WIDTH];
                row[..10].copy_from_slice(&r.features());
                row[10] = r.label_latency_ms;
                Ok(row)
            })
            .collect::<Result<_, PqosError>>()?;
        let snap = Snapshot {
            rows,
            targets: vec![0.0; n],
        };
        self.predict_snapshots(&[snap], &Rc::new(graph.adjacency().to_vec()))
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

/// Parameter count of the node-wise network `[in, d, d, d, 1]`.
fn dnn_params(input: usize, d: usize) -> usize {
    (input + 1) * d + 2 * (d + 1) * d + d + 1
}

/// Width whose parameter count is closest to `target` on a log scale.
fn matched_width(input: usize, target: usize) -> usize {
    (1..=4 * target.max(1))
        .min_by(|&a, &b| {
            let ra = (dnn_params(input, a) as f64 / target as f64).ln().abs();
            let rb = (dnn_params(input, b) as f64 / target as f64).ln().abs();
            ra.total_cmp(&rb)
        })
        .expect("nonempty range")
}

fn fit(
    mut model: SpatialModel,
    mut store: ParamStore,
    train: &[Snapshot],
    neighbors: &Rc<Vec<Vec<usize>>>,
    config: &SpatialConfig,
) -> Result<(SpatialModel, f64), PqosError> {
    let z: Vec<Vec<f64>> = train
        .iter()
        .map(|s| {
            s.targets
                .iter()
                .map(|y| (y - model.target_mean) / model.target_std)
                .collect()
        })
        .collect();
    let history = train_loop(
        &config.train,
        train.len(),
        &mut store,
        config.seed,
        41,
        |g, s, batch, _| {
            let x = g.input(model.inputs(train, batch));
            let y = g.input(Tensor::column(
                batch.iter().flat_map(|&i| z[i].iter().copied()).collect(),
            ));
            let pred = model.forward(s, g, x, neighbors)?;
            let err = g.sub(pred, y);
            let sq = g.square(err);
            Ok(g.mean(sq))
        },
    )?;
    model.store = store;
    Ok((model, *history.last().expect("epochs >= 1")))
}

/// Sage network against a node-wise network of matched size, both trained
/// by squared error on the same day-level split with the same seed.
pub fn train_spatial_models(
    records: &[KpiRecord],
    graph: &CellGraph,
    config: &SpatialConfig,
) -> Result<(SpatialModel, SpatialModel, SpatialReport), PqosError> {
    config.train.validate()?;
    if config.hidden == 0 {
        return Err(PqosError::Data("hidden must be >= 1".into()));
    }
    let (train, test) = split_by_days(records, config.train_days, config.test_days)?;
    let train = snapshots(&train, graph)?;
    let test = snapshots(&test, graph)?;
    if train.is_empty() || test.is_empty() {
        return Err(PqosError::Data(
            "no complete graph snapshots on one side of the split".into(),
        ));
    }
    let steps: Vec<&[f64; STEP_WIDTH]> = train.iter().flat_map(|s| &s.rows).collect();
    let standardizer = Standardizer::fit(&steps);
    let targets: Vec<f64> = train
        .iter()
        .flat_map(|s| s.targets.iter().copied())
        .collect();
    let target_mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let var = targets
        .iter()
        .map(|y| (y - target_mean).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    let target_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
    let neighbors = Rc::new(graph.adjacency().to_vec());

    let hd = config.hidden;
    let mut sage_store = ParamStore::new();
    let mut rng = rng_stream(config.seed, 40);
    let layers = [STEP_WIDTH, hd, hd, hd]
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            SageLayer::new(
                &mut sage_store,
                &format!("sage{i}"),
                d[0],
                d[1],
                Activation::Tanh,
                &mut rng,
            )
        })
        .collect();
    let out = Dense::new(&mut sage_store, "out", hd, 1, &mut rng);
    let sage_params = sage_store.scalar_count();
    let width = matched_width(STEP_WIDTH, sage_params);
    let mut dnn_store = ParamStore::new();
    let mut rng = rng_stream(config.seed, 40);
    let mlp = Mlp::new(
        &mut dnn_store,
        "dnn",
        &[STEP_WIDTH, width, width, width, 1],
        Activation::Tanh,
        &mut rng,
    );
    let base = SpatialModel {
        net: SpatialNet::Dnn(mlp),
        standardizer,
        target_mean,
        target_std,
        store: ParamStore::new(),
    };
    let sage = SpatialModel {
        net: SpatialNet::Sage { layers, out },
        ..base.clone()
    };
    let (sage, sage_loss) = fit(sage, sage_store, &train, &neighbors, config)?;
    let (dnn, dnn_loss) = fit(base, dnn_store, &train, &neighbors, config)?;

    let truths: Vec<f64> = test
        .iter()
        .flat_map(|s| s.targets.iter().copied())
        .collect();
    let persistence: Vec<f64> = test
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r[STEP_WIDTH - 1]))
        .collect();
    let mut sage_warnings = Vec::new();
    let mut dnn_warnings = Vec::new();
    let sage_r2 = r2_or_zero(
        &sage.predict_snapshots(&test, &neighbors)?,
        &truths,
        &mut sage_warnings,
    )?;
    let dnn_r2 = r2_or_zero(
        &dnn.predict_snapshots(&test, &neighbors)?,
        &truths,
        &mut dnn_warnings,
    )?;
    let persistence_r2 = r2_or_zero(&persistence, &truths, &mut Vec::new())?;
    let report =
        |model: &str, r2, baseline: &str, baseline_r2, n_params, final_train_loss, warnings| {
            ForecastReport {
                model: model.into(),
                horizon: 1,
                lookback: 1,
                r2,
                baseline: baseline.into(),
                baseline_r2,
                n_params,
                n_train: targets.len(),
                n_test: truths.len(),
                final_train_loss,
                warnings,
            }
        };
    let reports = SpatialReport {
        sage: report(
            "sage",
            sage_r2,
            "dnn",
            dnn_r2,
            sage.scalar_count(),
            sage_loss,
            sage_warnings,
        ),
        dnn: report(
            "dnn",
            dnn_r2,
            "persistence",
            persistence_r2,
            dnn.scalar_count(),
            dnn_loss,
            dnn_warnings,
        ),
    };
    Ok((sage, dnn, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matched_width_stays_within_half_again() {
        for hd in [4, 8, 16, 32, 64] {
            let sage = (2 * STEP_WIDTH + 1) * hd + 2 * (2 * hd + 1) * hd + hd + 1;
            let d = matched_width(STEP_WIDTH, sage);
            let ratio = dnn_params(STEP_WIDTH, d) as f64 / sage as f64;
            assert!((1.0 / 1.5..=1.5).contains(&ratio), "hd {hd}: ratio {ratio}");
        }
    }
}
