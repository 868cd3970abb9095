use pqos_core::kpidata::{
    build_graph, generate_dataset, grid_layout, split_by_days, GeneratedDataset, GraphRule,
    KpiRecord, ScenarioKind, ScenarioProfile, DAY_SECONDS,
};
use pqos_core::pqos::{
    confusion, fit_anomaly_detector, make_forecast_windows, r2, record_split, run_anomaly_pipeline,
    run_forecast_pipeline, run_regression_pipeline, threshold_cost, train_lstm_forecaster,
    train_spatial_models, tune_threshold, AnomalyConfig, Cost, ForecastConfig, LstmForecaster,
    PqosError, PredictiveDistribution, ProbabilisticRegressor, RegressionConfig, SpatialConfig,
    SpatialModel, TrainConfig,
};
use pqos_core::stochastics::rng_stream;
use proptest::prelude::*;
use rand::Rng;

fn dataset(kind: ScenarioKind, days: u32, cols: u32, rows: u32, seed: u64) -> GeneratedDataset {
    let graph = build_graph(
        &grid_layout(cols, rows, 1.0, 0.05, seed),
        GraphRule::Radius { r_km: 1.2 },
    )
    .unwrap();
    generate_dataset(&ScenarioProfile::for_kind(kind, seed), days, &graph).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 128,
        lr: 3e-3,
        final_lr_fraction: 1.0,
    }
}

fn small_regression() -> RegressionConfig {
    RegressionConfig {
        hidden: vec![16],
        predict_samples: 16,
        train: quick(5),
        ..RegressionConfig::default()
    }
}

fn brute_force(scores: &[f64], labels: &[bool], cost: Cost) -> f64 {
    let mut d = scores.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    let mut cands = vec![d[0] - (1.0 + d[0].abs())];
    cands.extend(d.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let hi = d[d.len() - 1];
    cands.push(hi + (1.0 + hi.abs()));
    let mut best = cands[0];
    for &c in &cands[1..] {
        if threshold_cost(scores, labels, c, cost) < threshold_cost(scores, labels, best, cost) {
            best = c;
        }
    }
    best
}

fn scored_sets() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, f64, f64)> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..12).prop_map(f64::from), n),
                prop::collection::vec(any::<bool>(), n),
                0.1f64..5.0,
                0.1f64..5.0,
            )
        })
        .prop_map(|(s, mut l, a, b)| {
            l[0] = true;
            l[1] = false;
            (s, l, a, b)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn tuned_threshold_equals_brute_force((scores, labels, c_fp, c_fn) in scored_sets()) {
        let cost = Cost { c_fp, c_fn };
        prop_assert_eq!(tune_threshold(&scores, &labels, cost).unwrap(), brute_force(&scores, &labels, cost));
    }

    #[test]
    fn mixture_quantiles_are_ordered(
        shift in 0.0f64..2.0,
        r1 in 0.2f64..3.0,
        gaps in prop::collection::vec(0.1f64..3.0, 1..3),
        scale in 0.5f64..20.0,
    ) {
        let mut rates = vec![r1];
        for g in gaps {
            let last = *rates.last().unwrap();
            rates.push(last + g);
        }
        let d = PredictiveDistribution { components: vec![(shift, rates)], scale };
        let (lo, mid, hi) = (d.quantile(0.025), d.quantile(0.5), d.quantile(0.975));
        prop_assert!(lo < mid && mid < hi);
    }
}

#[test]
fn expensive_false_positives_push_threshold_above_normals() {
    let scores = [0.5, 1.0, 4.0, 2.0, 3.0, 6.0];
    let labels = [false, false, false, true, true, true];
    let g = tune_threshold(
        &scores,
        &labels,
        Cost {
            c_fp: 1e9,
            c_fn: 1.0,
        },
    )
    .unwrap();
    assert!(g > 4.0);
    let sep = tune_threshold(
        &[1.0, 2.0, 8.0, 9.0],
        &[false, false, true, true],
        Cost::default(),
    )
    .unwrap();
    assert_eq!(
        threshold_cost(
            &[1.0, 2.0, 8.0, 9.0],
            &[false, false, true, true],
            sep,
            Cost::default()
        ),
        0.0
    );
    assert!(matches!(
        tune_threshold(&[1.0, 2.0], &[true, true], Cost::default()),
        Err(PqosError::Tuning(_))
    ));
}

#[test]
fn metric_definitions() {
    let truths = [1.0, 2.0, 4.0, 7.0];
    assert_eq!(r2(&truths, &truths).unwrap(), 1.0);
    assert!(r2(&[3.5; 4], &truths).unwrap().abs() < 1e-15);
    assert!(matches!(
        r2(&[1.0, 2.0], &[3.0, 3.0]),
        Err(PqosError::Undefined(_))
    ));
    let labels: Vec<bool> = (0..100).map(|i| i < 38).collect();
    let c = confusion(&[false; 100], &labels);
    assert_eq!((c.tp, c.fn_, c.fp, c.tn), (0, 38, 0, 62));
}

#[test]
fn unit_rate_pair_has_mean_one_and_a_half() {
    let d = PredictiveDistribution {
        components: vec![(0.0, vec![1.0, 2.0])],
        scale: 1.0,
    };
    assert!((d.mean() - 1.5).abs() < 1e-15);
}

#[test]
fn regression_intervals_and_conditional_scores() {
    let data = dataset(ScenarioKind::DenseUrban, 4, 3, 2, 3);
    let cfg = small_regression();
    let (model, report) = run_regression_pipeline(&data.records, &cfg).unwrap();
    assert!(report.r2.is_finite() && (0.0..=1.0).contains(&report.ci95_coverage));
    assert!(report
        .samples
        .iter()
        .all(|s| s.q025 <= s.mean && s.mean <= s.q975));

    let test: Vec<KpiRecord> = data.records.iter().step_by(7).copied().collect();
    // pooled K=64 intervals against the mean width of their single-sample parts
    let width = |d: &PredictiveDistribution| d.quantile(0.975) - d.quantile(0.025);
    let (mut pooled, mut single) = (0.0, 0.0);
    for d in model.predict_with_samples(&test, 64) {
        pooled += width(&d);
        single += d
            .components
            .iter()
            .map(|c| {
                width(&PredictiveDistribution {
                    components: vec![c.clone()],
                    scale: d.scale,
                })
            })
            .sum::<f64>()
            / d.components.len() as f64;
    }
    assert!(pooled >= single, "pooled {pooled} vs single {single}");

    let scores = model.conditional_anomaly_scores(&test);
    assert!(scores.iter().all(|s| s.is_finite()));
    let frozen = model.predict_frozen(&test[..20]);
    for (d, r) in frozen.iter().zip(&test) {
        let mut at_mean = *r;
        at_mean.label_latency_ms = d.mean();
        let mut in_tail = *r;
        in_tail.label_latency_ms = d.quantile(0.999);
        assert!(d.nll(at_mean.label_latency_ms) < d.nll(in_tail.label_latency_ms));
    }

    let restored = ProbabilisticRegressor::from_checkpoint(&model.checkpoint().unwrap()).unwrap();
    assert_eq!(restored.predict(&test[..10]), model.predict(&test[..10]));
}

#[test]
fn constant_labels_give_zero_r2_with_warning() {
    let mut records = dataset(ScenarioKind::DenseUrban, 2, 2, 2, 5).records;
    for r in &mut records {
        r.label_latency_ms = 4.0;
    }
    let (_, report) = run_regression_pipeline(&records, &small_regression()).unwrap();
    assert!(report.r2 <= 0.0);
    assert!(!report.warnings.is_empty());
}

#[test]
fn regressor_standardizes_on_training_rows_only() {
    let data = dataset(ScenarioKind::DenseUrban, 2, 2, 2, 6);
    let cfg = small_regression();
    let (a, _) = run_regression_pipeline(&data.records, &cfg).unwrap();
    let (_, test_idx) = record_split(data.records.len(), cfg.test_fraction, cfg.seed);
    let mut perturbed = data.records.clone();
    for &i in &test_idx {
        perturbed[i].traffic_volume_dl *= 100.0;
        perturbed[i].label_latency_ms *= 3.0;
    }
    let (b, _) = run_regression_pipeline(&perturbed, &cfg).unwrap();
    assert_eq!(a.standardizer, b.standardizer);
    assert_eq!(a.label_scale, b.label_scale);
}

#[test]
fn anomaly_detector_flags_off_manifold_rows() {
    let data = dataset(ScenarioKind::DenseUrban, 6, 3, 2, 8);
    let (train, test) = split_by_days(&data.records, 4, 2).unwrap();
    let cfg = AnomalyConfig {
        train: quick(20),
        ..AnomalyConfig::default()
    };
    let det = fit_anomaly_detector(&train, &cfg).unwrap();
    let mut normal = det.scores(&test);
    normal.sort_by(f64::total_cmp);
    let p99 = normal[normal.len() * 99 / 100];

    let sd = det.standardizer.std[3];
    let mut odd = test[test.len() / 2];
    odd.avg_cqi += 10.0 * sd;
    assert!(det.score(&odd) > p99);

    let train_scores = det.scores(&train);
    let median = {
        let mut s = train_scores.clone();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    assert!(median < p99);

    let wide = AnomalyConfig {
        bottleneck: 11,
        ..cfg.clone()
    };
    assert!(fit_anomaly_detector(&train, &wide).is_err());
}

#[test]
fn anomaly_pipeline_ignores_evaluation_rows_when_fitting() {
    let data = dataset(ScenarioKind::Event, 17, 2, 2, 9);
    let cfg = AnomalyConfig {
        train: quick(3),
        ..AnomalyConfig::default()
    };
    let (a, report) = run_anomaly_pipeline(&data.records, &data.labels, &cfg).unwrap();
    let c = report.confusion;
    assert_eq!(c.tp + c.fp + c.fn_ + c.tn, report.n_samples);
    let boundary = data.records[0].timestamp + 14 * DAY_SECONDS;
    let perturbed: Vec<KpiRecord> = data
        .records
        .iter()
        .map(|r| {
            if r.timestamp >= boundary {
                KpiRecord { avg_cqi: 0.0, ..*r }
            } else {
                *r
            }
        })
        .collect();
    let (b, _) = run_anomaly_pipeline(&perturbed, &data.labels, &cfg).unwrap();
    assert_eq!(a.standardizer, b.standardizer);
    assert_eq!(a.error_scale, b.error_scale);
}

#[test]
fn forecast_windows_count_and_boundary() {
    let data = dataset(ScenarioKind::Vehicular, 3, 2, 1, 10);
    let per_cell = data.records.len() / 2;
    for w in [1usize, 4, 8] {
        let pairs = make_forecast_windows(&data.records, w, 1).unwrap();
        assert_eq!(pairs.len(), 2 * (per_cell - w));
        assert!(pairs.iter().all(|p| p.window.len() == w));
    }
    let markov = make_forecast_windows(&data.records, 1, 1).unwrap();
    assert!(markov.iter().all(|p| p.window.len() == 1));

    let (train, test) = split_by_days(&data.records, 2, 1).unwrap();
    let cut = test.iter().map(|r| r.timestamp).min().unwrap();
    let train_pairs = make_forecast_windows(&train, 4, 1).unwrap();
    assert!(train_pairs.iter().all(|p| p.timestamp < cut));
    let test_pairs = make_forecast_windows(&test, 4, 1).unwrap();
    let first_target = cut + 4 * pqos_core::kpidata::BIN_SECONDS;
    assert!(test_pairs.iter().all(|p| p.timestamp >= first_target));

    assert!(make_forecast_windows(&data.records[..4], 8, 1).is_err());

    let gapped: Vec<KpiRecord> = data
        .records
        .iter()
        .filter(|r| r.cell_id != data.records[0].cell_id || (r.timestamp / 900) % 50 != 7)
        .copied()
        .collect();
    let pairs = make_forecast_windows(&gapped, 4, 1).unwrap();
    for p in &pairs {
        assert!(gapped
            .iter()
            .any(|r| r.cell_id == p.cell_id && r.timestamp == p.timestamp));
    }
}

fn lstm_config(seed: u64) -> ForecastConfig {
    ForecastConfig {
        lookback: 4,
        hidden: 8,
        train_days: 3,
        test_days: 2,
        train: quick(4),
        seed,
        ..ForecastConfig::default()
    }
}

#[test]
fn lstm_on_pure_noise_explains_nothing() {
    let mut records = dataset(ScenarioKind::Vehicular, 5, 3, 2, 11).records;
    let mut rng = rng_stream(11, 99);
    for r in &mut records {
        r.label_latency_ms = 5.0 + rng.random::<f64>();
    }
    let (_, report) = run_forecast_pipeline(&records, &lstm_config(1)).unwrap();
    assert!(report.r2.abs() <= 0.05, "r2 {}", report.r2);
}

#[test]
fn lstm_training_is_deterministic() {
    let records = dataset(ScenarioKind::Vehicular, 5, 2, 2, 12).records;
    let (m1, r1) = run_forecast_pipeline(&records, &lstm_config(4)).unwrap();
    let (m2, r2_) = run_forecast_pipeline(&records, &lstm_config(4)).unwrap();
    assert_eq!(r1, r2_);
    assert_eq!(m1.checkpoint().unwrap(), m2.checkpoint().unwrap());

    let (train, test) = split_by_days(&records, 3, 2).unwrap();
    let test = make_forecast_windows(&test, 4, 1).unwrap();
    let train = make_forecast_windows(&train, 4, 1).unwrap();
    let (m3, _) = train_lstm_forecaster(&train, &test, &lstm_config(4)).unwrap();
    let restored = LstmForecaster::from_checkpoint(&m3.checkpoint().unwrap()).unwrap();
    assert_eq!(restored.predict(&test).unwrap(), m3.predict(&test).unwrap());
}

#[test]
fn spatial_models_are_deterministic_and_restorable() {
    let data = dataset(ScenarioKind::Vehicular, 4, 3, 2, 13);
    let graph = build_graph(
        &grid_layout(3, 2, 1.0, 0.05, 13),
        GraphRule::Radius { r_km: 1.2 },
    )
    .unwrap();
    let cfg = SpatialConfig {
        hidden: 6,
        train_days: 3,
        test_days: 1,
        train: TrainConfig {
            batch_size: 8,
            ..quick(3)
        },
        seed: 2,
    };
    let (sage, dnn, a) = train_spatial_models(&data.records, &graph, &cfg).unwrap();
    let (_, _, b) = train_spatial_models(&data.records, &graph, &cfg).unwrap();
    assert_eq!(a, b);
    let ratio = sage.scalar_count() as f64 / dnn.scalar_count() as f64;
    assert!((1.0 / 1.5..=1.5).contains(&ratio));

    let current: Vec<KpiRecord> = data.records[..graph.n_cells()].to_vec();
    let restored = SpatialModel::from_checkpoint(&sage.checkpoint().unwrap()).unwrap();
    assert_eq!(
        restored.predict(&current, &graph).unwrap(),
        sage.predict(&current, &graph).unwrap()
    );
}

#[test]
fn congestion_is_explained_by_the_conditional_score() {
    let data = dataset(ScenarioKind::DenseUrban, 6, 3, 2, 14);
    let (train, test) = split_by_days(&data.records, 4, 2).unwrap();
    let reg = RegressionConfig {
        train: quick(15),
        ..small_regression()
    };
    let (regressor, _) = run_regression_pipeline(&train, &reg).unwrap();
    let detector = fit_anomaly_detector(
        &train,
        &AnomalyConfig {
            train: quick(20),
            ..AnomalyConfig::default()
        },
    )
    .unwrap();
    let rank = |scores: &[f64], v: f64| {
        scores.iter().filter(|&&s| s < v).count() as f64 / scores.len() as f64
    };

    // busiest test record: high latency that its load explains
    let busy = *test
        .iter()
        .max_by(|a, b| a.label_latency_ms.total_cmp(&b.label_latency_ms))
        .unwrap();
    let mut congested = busy;
    congested.prb_util_dl = 1.0;
    congested.traffic_volume_dl *= 3.0;
    congested.active_ues_dl *= 3.0;
    congested.label_latency_ms = regressor.predict_frozen(&[congested])[0].mean();

    let cond = regressor.conditional_anomaly_scores(&test);
    let recon = detector.scores(&test);
    let c_rank = rank(&cond, regressor.conditional_anomaly_score(&congested));
    let r_rank = rank(&recon, detector.score(&congested));
    assert!(
        c_rank < 0.9 && r_rank > 0.99,
        "conditional rank {c_rank}, reconstruction rank {r_rank}"
    );
}
