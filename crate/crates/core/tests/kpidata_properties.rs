use pqos_core::kpidata::*;
use pqos_core::stochastics::stats;

fn default_graph() -> CellGraph {
    build_graph(
        &grid_layout(5, 4, 1.0, 0.05, 0),
        GraphRule::Radius { r_km: 1.2 },
    )
    .unwrap()
}

fn label_series(d: &GeneratedDataset, cell: u32) -> Vec<f64> {
    d.records
        .iter()
        .filter(|r| r.cell_id == cell)
        .map(|r| r.label_latency_ms)
        .collect()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn autocorr(x: &[f64], lag: usize) -> f64 {
    corr(&x[..x.len() - lag], &x[lag..])
}

#[test]
fn default_dataset_matches_reference_signs() {
    let g = default_graph();
    let d = generate_dataset(&ScenarioProfile::dense_urban(42), 30, &g).unwrap();
    assert_eq!(d.records.len(), 30 * 96 * 20);
    for r in &d.records {
        r.check().unwrap();
    }
    let table = correlation_table(&d.records).unwrap();
    assert!(sign_pattern_matches(&table), "{table:?}");
    assert!(utilization_dominates(&table), "{table:?}");
    assert!(pearson(&d.records, "prb_util_dl").unwrap() > 0.6);
    assert!(pearson(&d.records, "avg_cqi").unwrap() < 0.0);
    assert!(table.iter().all(|row| (-1.0..=1.0).contains(&row.r)));
    assert_eq!(table, correlation_table(&d.records).unwrap());
}

#[test]
fn neighbors_are_more_alike_than_distant_cells() {
    let g = default_graph();
    let d = generate_dataset(&ScenarioProfile::dense_urban(7), 30, &g).unwrap();
    let series: Vec<Vec<f64>> = g
        .cells()
        .iter()
        .map(|c| label_series(&d, c.cell_id))
        .collect();
    let (mut near, mut far) = (Vec::new(), Vec::new());
    for i in 0..g.n_cells() {
        let hops = g.hop_distances(i);
        for j in i + 1..g.n_cells() {
            match hops[j] {
                Some(1) => near.push(corr(&series[i], &series[j])),
                Some(h) if h >= 3 => far.push(corr(&series[i], &series[j])),
                _ => {}
            }
        }
    }
    assert!(!near.is_empty() && !far.is_empty());
    assert!(stats::mean(&near) > stats::mean(&far));
}

#[test]
fn daily_cycle_dominates_half_day() {
    let g = default_graph();
    for p in [
        ScenarioProfile::dense_urban(3),
        ScenarioProfile::vehicular(3),
    ] {
        let d = generate_dataset(&p, 20, &g).unwrap();
        for cell in [0, 7, 19] {
            let y = label_series(&d, cell);
            assert!(
                autocorr(&y, 96) > autocorr(&y, 48),
                "{:?} cell {cell}",
                p.kind
            );
        }
    }
}

#[test]
fn surge_windows_raise_latency() {
    let g = default_graph();
    let p = ScenarioProfile::event(5, &[0, 1]);
    let d = generate_dataset(&p, 30, &g).unwrap();
    let flagged: Vec<_> = d
        .records
        .iter()
        .zip(&d.labels)
        .filter(|(_, l)| l.anomaly == 1)
        .collect();
    assert_eq!(flagged.len(), 2 * 2 * 18);
    for cell in [0u32, 1] {
        let in_window: Vec<f64> = flagged
            .iter()
            .filter(|(r, _)| r.cell_id == cell)
            .map(|(r, _)| r.label_latency_ms)
            .collect();
        let clock: Vec<i64> = flagged.iter().map(|(r, _)| r.timestamp % 86_400).collect();
        let same_clock: Vec<f64> = d
            .records
            .iter()
            .zip(&d.labels)
            .filter(|(r, l)| {
                l.anomaly == 0 && r.cell_id == cell && clock.contains(&(r.timestamp % 86_400))
            })
            .map(|(r, _)| r.label_latency_ms)
            .collect();
        assert!(stats::mean(&in_window) > stats::mean(&same_clock));
    }
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let g = default_graph();
    let d = generate_dataset(&ScenarioProfile::vehicular(1), 6, &g).unwrap();
    let records = &d.records[..10_000];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kpi.csv");
    save_csv(records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let back = load_csv(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(records) {
        assert_eq!(
            a.features().map(f64::to_bits),
            b.features().map(f64::to_bits)
        );
        assert_eq!(a.label_latency_ms.to_bits(), b.label_latency_ms.to_bits());
        assert_eq!(
            (a.timestamp, a.cell_id, a.qci),
            (b.timestamp, b.cell_id, b.qci)
        );
    }

    let (nodes, edges) = (dir.path().join("nodes.csv"), dir.path().join("edges.csv"));
    save_graph(&g, &nodes, &edges).unwrap();
    assert!(std::fs::read_to_string(&edges)
        .unwrap()
        .starts_with("cell_a,cell_b\n"));
    assert!(std::fs::read_to_string(&nodes)
        .unwrap()
        .starts_with("cell_id,x_km,y_km\n"));
    assert_eq!(load_graph(&nodes, &edges).unwrap(), g);
}

#[test]
fn qci_datasets_are_separate_populations() {
    let g = default_graph();
    let voice = generate_dataset(&ScenarioProfile::dense_urban(2).with_qci(1), 2, &g).unwrap();
    let data = generate_dataset(&ScenarioProfile::dense_urban(2), 2, &g).unwrap();
    assert!(voice.records.iter().all(|r| r.qci == 1));
    let mean = |d: &GeneratedDataset| {
        stats::mean(
            &d.records
                .iter()
                .map(|r| r.label_latency_ms)
                .collect::<Vec<_>>(),
        )
    };
    assert!(mean(&voice) < mean(&data));
}
