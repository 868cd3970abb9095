use std::path::Path;

use pqos_core::kpidata::{
    build_graph, correlation_table, generate_dataset, grid_layout, load_csv, load_graph,
    load_labels, save_csv, save_graph, save_labels, sign_pattern_matches, utilization_dominates,
    CellGraph, KpiRecord, RecordLabel, ScenarioKind, ScenarioProfile,
};
use serde::Serialize;

use crate::config::{DataSpec, DatasetSpec, GenKpiConfig};
use crate::error::CliError;
use crate::output::OutDir;

pub struct Dataset {
    pub records: Vec<KpiRecord>,
    pub labels: Option<Vec<RecordLabel>>,
    pub graph: Option<CellGraph>,
}

/// Generates the records, labels and graph described by `spec`.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<Dataset, CliError> {
    let mut profile = match &spec.profile {
        Some(p) => p.clone(),
        None => ScenarioProfile::for_kind(spec.scenario, seed),
    };
    profile.seed = seed;
    if let Some(q) = spec.qci {
        profile = profile.with_qci(q);
    }
    if let Some(b) = spec.label_backend {
        profile.label_backend = b;
    }
    let cells = grid_layout(
        spec.grid_cols,
        spec.grid_rows,
        spec.spacing_km,
        spec.jitter_km,
        seed,
    );
    let graph = build_graph(&cells, spec.graph_rule)?;
    let data = generate_dataset(&profile, spec.days, &graph)?;
    Ok(Dataset {
        records: data.records,
        labels: Some(data.labels),
        graph: Some(graph),
    })
}

/// Loads the files named in `spec`, or generates a dataset when no CSV is
/// given (`scenario` picks the default recipe).
pub fn resolve(spec: &DataSpec, scenario: ScenarioKind, seed: u64) -> Result<Dataset, CliError> {
    let Some(csv) = &spec.csv else {
        let recipe = spec
            .generate
            .clone()
            .unwrap_or_else(|| DatasetSpec::with_scenario(scenario));
        return generate(&recipe, seed);
    };
    if spec.generate.is_some() {
        return Err(CliError::Input(
            "data.csv and data.generate are mutually exclusive".into(),
        ));
    }
    let records = load_csv(csv)?;
    let labels = spec.labels.as_deref().map(load_labels).transpose()?;
    let graph = match (&spec.nodes, &spec.edges) {
        (Some(n), Some(e)) => Some(load_graph(n, e)?),
        (None, None) => None,
        _ => {
            return Err(CliError::Input(
                "data.nodes and data.edges must be given together".into(),
            ))
        }
    };
    Ok(Dataset {
        records,
        labels,
        graph,
    })
}

#[derive(Serialize)]
struct GenKpiReport {
    n_records: usize,
    n_cells: usize,
    n_edges: usize,
    n_anomalous: usize,
    days: u32,
    seed: u64,
}

pub fn gen_kpi(cfg: &GenKpiConfig, seed: u64, out: &OutDir) -> Result<bool, CliError> {
    let data = generate(&cfg.dataset, seed)?;
    let labels = data.labels.expect("generated");
    let graph = data.graph.expect("generated");
    save_csv(&data.records, &out.path("kpi.csv"))?;
    save_labels(&labels, &out.path("labels.csv"))?;
    save_graph(&graph, &out.path("nodes.csv"), &out.path("edges.csv"))?;
    let report = GenKpiReport {
        n_records: data.records.len(),
        n_cells: graph.n_cells(),
        n_edges: graph.edges().len(),
        n_anomalous: labels.iter().filter(|l| l.anomaly != 0).count(),
        days: cfg.dataset.days,
        seed,
    };
    out.json("gen_kpi.json", &report)?;
    println!(
        "{} records over {} cells, {} anomalous",
        report.n_records, report.n_cells, report.n_anomalous
    );
    Ok(true)
}

#[derive(Serialize)]
struct CorrelateReport<'a> {
    rows: &'a [pqos_core::kpidata::CorrelationRow],
    sign_pattern_matches: bool,
    utilization_dominates: bool,
    n_records: usize,
}

pub fn correlate(data: &Path, out: &OutDir) -> Result<bool, CliError> {
    let records = load_csv(data)?;
    let table = correlation_table(&records)?;
    let signs = sign_pattern_matches(&table);
    let util = utilization_dominates(&table);
    out.csv("correlation.csv", &table)?;
    out.json(
        "correlation.json",
        &CorrelateReport {
            rows: &table,
            sign_pattern_matches: signs,
            utilization_dominates: util,
            n_records: records.len(),
        },
    )?;
    println!("{:<26} {:>8} {:>10}", "feature", "r", "reference");
    for row in &table {
        println!("{:<26} {:>8.3} {:>10.2}", row.feature, row.r, row.reference);
    }
    println!(
        "sign pattern {}, utilization {}",
        if signs { "matches" } else { "differs" },
        if util {
            "dominates"
        } else {
            "does not dominate"
        }
    );
    Ok(signs)
}
