use std::collections::BTreeMap;

use pqos_core::kpidata::{split_by_days, KpiRecord, ScenarioKind, BIN_SECONDS};
use pqos_core::pqos::{
    make_forecast_windows, run_anomaly_pipeline, run_regression_pipeline, train_lstm_forecaster,
    train_spatial_models, ForecastReport, SpatialModel,
};
use serde::Serialize;

use crate::config::{AnomalyTrain, LstmTrain, RegressionTrain, SpatialTrain};
use crate::data::resolve;
use crate::error::CliError;
use crate::output::OutDir;

fn report_line(name: &str, pass: bool, detail: &str) {
    println!("{name}: {detail} -> {}", if pass { "pass" } else { "fail" });
}

#[derive(Serialize)]
struct Wrapped<'a, R: Serialize> {
    #[serde(flatten)]
    report: &'a R,
    seed: u64,
    pass: bool,
}

pub fn regression(cfg: &RegressionTrain, seed: u64, out: &OutDir) -> Result<bool, CliError> {
    let data = resolve(&cfg.data, ScenarioKind::DenseUrban, seed)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let (model, report) = run_regression_pipeline(&data.records, &model_cfg)?;
    let [lo, hi] = cfg.acceptance.coverage_range;
    let pass = report.r2 >= cfg.acceptance.min_r2
        && report.ci95_coverage >= lo
        && report.ci95_coverage <= hi;
    out.csv("predictions.csv", &report.samples)?;
    out.text("model.json", &model.checkpoint()?)?;
    out.json(
        "report.json",
        &Wrapped {
            report: &report,
            seed,
            pass,
        },
    )?;
    report_line(
        "regression",
        pass,
        &format!(
            "r2 {:.4}, 95% coverage {:.4}",
            report.r2, report.ci95_coverage
        ),
    );
    Ok(pass)
}

pub fn anomaly(cfg: &AnomalyTrain, seed: u64, out: &OutDir) -> Result<bool, CliError> {
    let data = resolve(&cfg.data, ScenarioKind::Event, seed)?;
    let labels = data.labels.ok_or_else(|| {
        CliError::Input("the anomaly task needs data.labels alongside data.csv".into())
    })?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let (detector, report) = run_anomaly_pipeline(&data.records, &labels, &model_cfg)?;
    let recall = report.recall_at_full_precision;
    let pass = recall.is_some_and(|r| r >= cfg.acceptance.min_recall_at_full_precision);
    out.csv("timeline.csv", &report.timeline)?;
    out.text("model.json", &detector.checkpoint()?)?;
    out.json(
        "report.json",
        &Wrapped {
            report: &report,
            seed,
            pass,
        },
    )?;
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    report_line(
        "anomaly",
        pass,
        &format!(
            "threshold {:.4}, precision {}, recall {}, recall at full precision {}",
            report.threshold,
            show(report.precision),
            show(report.recall),
            show(recall)
        ),
    );
    Ok(pass)
}

#[derive(Serialize)]
struct ForecastRow {
    timestamp: i64,
    cell_id: u32,
    mean: f64,
    std: f64,
    persistence: f64,
    truth: f64,
}

pub fn lstm(cfg: &LstmTrain, seed: u64, out: &OutDir) -> Result<bool, CliError> {
    let data = resolve(&cfg.data, ScenarioKind::Vehicular, seed)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    model_cfg.validate()?;
    let (train, test) = split_by_days(&data.records, model_cfg.train_days, model_cfg.test_days)?;
    let train = make_forecast_windows(&train, model_cfg.lookback, model_cfg.horizon)?;
    let test = make_forecast_windows(&test, model_cfg.lookback, model_cfg.horizon)?;
    let (model, report) = train_lstm_forecaster(&train, &test, &model_cfg)?;
    let rows: Vec<ForecastRow> = model
        .predict(&test)?
        .into_iter()
        .zip(&test)
        .map(|((mean, std), p)| ForecastRow {
            timestamp: p.timestamp,
            cell_id: p.cell_id,
            mean,
            std,
            persistence: p.last_label(),
            truth: p.target,
        })
        .collect();
    let pass = report.r2 > report.baseline_r2 + cfg.acceptance.min_gain;
    out.csv("forecasts.csv", &rows)?;
    out.text("model.json", &model.checkpoint()?)?;
    out.json(
        "report.json",
        &Wrapped {
            report: &report,
            seed,
            pass,
        },
    )?;
    report_line(
        "lstm",
        pass,
        &format!(
            "r2 {:.4} vs persistence {:.4}",
            report.r2, report.baseline_r2
        ),
    );
    Ok(pass)
}

#[derive(Serialize)]
struct SpatialRow {
    timestamp: i64,
    cell_id: u32,
    sage: f64,
    dnn: f64,
    truth: f64,
}

#[derive(Serialize)]
struct SpatialOut<'a> {
    sage: &'a ForecastReport,
    dnn: &'a ForecastReport,
    seed: u64,
    pass: bool,
}

pub fn spatial(cfg: &SpatialTrain, seed: u64, out: &OutDir) -> Result<bool, CliError> {
    let data = resolve(&cfg.data, ScenarioKind::Vehicular, seed)?;
    let graph = data.graph.ok_or_else(|| {
        CliError::Input(
            "the spatial task needs data.nodes and data.edges alongside data.csv".into(),
        )
    })?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let (sage, dnn, report) = train_spatial_models(&data.records, &graph, &model_cfg)?;
    let (_, test) = split_by_days(&data.records, model_cfg.train_days, model_cfg.test_days)?;
    let rows = spatial_rows(&test, &graph, &sage, &dnn)?;
    let pass = report.sage.r2 > report.dnn.r2 + cfg.acceptance.min_gain;
    out.csv("spatial.csv", &rows)?;
    out.text("sage.json", &sage.checkpoint()?)?;
    out.text("dnn.json", &dnn.checkpoint()?)?;
    out.json(
        "report.json",
        &SpatialOut {
            sage: &report.sage,
            dnn: &report.dnn,
            seed,
            pass,
        },
    )?;
    report_line(
        "spatial",
        pass,
        &format!("sage r2 {:.4} vs dnn {:.4}", report.sage.r2, report.dnn.r2),
    );
    Ok(pass)
}

/// Predictions for every bin whose snapshot and successor are complete.
fn spatial_rows(
    test: &[KpiRecord],
    graph: &pqos_core::kpidata::CellGraph,
    sage: &SpatialModel,
    dnn: &SpatialModel,
) -> Result<Vec<SpatialRow>, CliError> {
    let mut bins: BTreeMap<i64, Vec<KpiRecord>> = BTreeMap::new();
    for r in test {
        bins.entry(r.timestamp).or_default().push(*r);
    }
    let n = graph.n_cells();
    let mut rows = Vec::new();
    for (t, current) in &bins {
        let Some(next) = bins.get(&(t + BIN_SECONDS)) else {
            continue;
        };
        if current.len() != n || next.len() != n {
            continue;
        }
        let a = sage.predict(current, graph)?;
        let b = dnn.predict(current, graph)?;
        let mut truth = vec![f64::NAN; n];
        for r in next {
            if let Some(i) = graph.index_of(r.cell_id) {
                truth[i] = r.label_latency_ms;
            }
        }
        for (i, cell) in graph.cells().iter().enumerate() {
            rows.push(SpatialRow {
                timestamp: t + BIN_SECONDS,
                cell_id: cell.cell_id,
                sage: a[i],
                dnn: b[i],
                truth: truth[i],
            });
        }
    }
    Ok(rows)
}
