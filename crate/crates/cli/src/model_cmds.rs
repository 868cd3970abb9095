use pqos_core::latency::{analytic_latency, exact_mean, hypoexp_rates};
use pqos_core::ransim::{
    empirical_vs_analytic, pdelay_windows, run_des_with_stats, write_delay_series_csv,
    write_histogram_csv, write_traces_csv, PacketTrace, Reference, SimStats,
};
use serde::Serialize;

use crate::config::{DistsConfig, SimulateConfig, ValidateConfig};
use crate::error::CliError;
use crate::output::OutDir;

/// Whether the command's acceptance bound held.
pub type Verdict = bool;

#[derive(Serialize)]
struct ValidateReport {
    ks: f64,
    ks_bound: f64,
    wasserstein1: f64,
    empirical_mean: f64,
    reference_mean: f64,
    n_samples: usize,
    order: usize,
    seed: u64,
    pass: bool,
}

fn csv_file(out: &OutDir, name: &str) -> Result<std::fs::File, CliError> {
    let path = out.path(name);
    std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))
}

pub fn validate_model(cfg: &ValidateConfig, seed: u64, out: &OutDir) -> Result<Verdict, CliError> {
    let sim = cfg.queue.sim(cfg.packets, cfg.warmup_ms, seed);
    let law = sim.implied_latency_law(cfg.order)?;
    let run = run_des_with_stats(&sim)?;
    let lat: Vec<f64> = run.traces.iter().map(PacketTrace::latency).collect();
    let fit = empirical_vs_analytic(&lat, &Reference::Analytic(law), cfg.bin_width_ms)?;
    write_histogram_csv(&fit.histogram, csv_file(out, "fig3.csv")?)?;
    let pass = fit.ks <= cfg.ks_bound;
    out.json(
        "validate.json",
        &ValidateReport {
            ks: fit.ks,
            ks_bound: cfg.ks_bound,
            wasserstein1: fit.wasserstein1,
            empirical_mean: fit.empirical_mean,
            reference_mean: fit.reference_mean,
            n_samples: fit.n_samples,
            order: cfg.order,
            seed,
            pass,
        },
    )?;
    println!(
        "ks {:.5} (bound {}) over {} packets: {}",
        fit.ks,
        cfg.ks_bound,
        fit.n_samples,
        if pass { "pass" } else { "fail" }
    );
    Ok(pass)
}

#[derive(Serialize)]
struct SimulateReport {
    n_packets: usize,
    mean_latency: f64,
    predicted_mean_latency: f64,
    effective_utilization: f64,
    retransmitted_fraction: f64,
    stats: SimStats,
    seed: u64,
}

#[derive(Serialize)]
struct SweepRow {
    arrival_rate: f64,
    bler: f64,
    effective_utilization: f64,
    mean_latency: f64,
    predicted_mean_latency: f64,
    n_packets: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn simulate(cfg: &SimulateConfig, seed: u64, out: &OutDir) -> Result<Verdict, CliError> {
    let sim = cfg.queue.sim(cfg.packets, cfg.warmup_ms, seed);
    let run = run_des_with_stats(&sim)?;
    let lat: Vec<f64> = run.traces.iter().map(PacketTrace::latency).collect();
    write_traces_csv(&run.traces, csv_file(out, "traces.csv")?)?;
    let series = pdelay_windows(&run.traces, cfg.window_ms, cfg.resolution_ms)?;
    write_delay_series_csv(&series, csv_file(out, "pdelay.csv")?)?;
    let retx = run.traces.iter().filter(|t| t.retx_count > 0).count();
    let report = SimulateReport {
        n_packets: lat.len(),
        mean_latency: mean(&lat),
        predicted_mean_latency: sim.mean_latency(),
        effective_utilization: sim.effective_utilization(),
        retransmitted_fraction: retx as f64 / lat.len().max(1) as f64,
        stats: run.stats,
        seed,
    };
    out.json("simulate.json", &report)?;
    println!(
        "{} packets, mean latency {:.4} ms (model {:.4} ms)",
        report.n_packets, report.mean_latency, report.predicted_mean_latency
    );

    if let Some(sweep) = &cfg.sweep {
        let mut rows = Vec::new();
        for &beta in &sweep.arrival_rates {
            for &bler in &sweep.blers {
                let mut q = cfg.queue.clone();
                q.arrival_rate = beta;
                q.bler = bler;
                let sim = q.sim(cfg.packets, cfg.warmup_ms, seed);
                let traces = run_des_with_stats(&sim)?.traces;
                let lat: Vec<f64> = traces.iter().map(PacketTrace::latency).collect();
                rows.push(SweepRow {
                    arrival_rate: beta,
                    bler,
                    effective_utilization: sim.effective_utilization(),
                    mean_latency: mean(&lat),
                    predicted_mean_latency: sim.mean_latency(),
                    n_packets: lat.len(),
                });
            }
        }
        out.csv("sweep.csv", &rows)?;
        println!("sweep: {} points", rows.len());
    }
    Ok(true)
}

#[derive(Serialize)]
struct DistRow {
    t_ms: f64,
    pdf: f64,
    cdf: f64,
}

#[derive(Serialize)]
struct QuantileRow {
    q: f64,
    t_ms: f64,
}

#[derive(Serialize)]
struct DistsReport {
    rates: Vec<f64>,
    offset_ms: f64,
    mean_ms: f64,
    exact_mean_ms: f64,
    variance: f64,
    /// Trapezoid integral of the pdf column.
    pdf_integral: f64,
}

pub fn dists(cfg: &DistsConfig, out: &OutDir) -> Result<Verdict, CliError> {
    if cfg.points < 2 {
        return Err(CliError::Input("points must be >= 2".into()));
    }
    if let Some(q) = cfg.quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(CliError::Input(format!("quantile {q} is outside (0, 1)")));
    }
    let law = analytic_latency(&cfg.params)?;
    let lo = law.offset();
    let hi = cfg.t_max_ms.unwrap_or_else(|| law.quantile(1.0 - 1e-7));
    if !(hi > lo) {
        return Err(CliError::Input(format!(
            "t_max_ms must exceed the offset {lo}"
        )));
    }
    let step = (hi - lo) / (cfg.points - 1) as f64;
    let rows: Vec<DistRow> = (0..cfg.points)
        .map(|i| {
            let t = lo + i as f64 * step;
            DistRow {
                t_ms: t,
                pdf: law.pdf(t),
                cdf: law.cdf(t),
            }
        })
        .collect();
    let integral = rows
        .windows(2)
        .map(|w| 0.5 * (w[0].pdf + w[1].pdf) * (w[1].t_ms - w[0].t_ms))
        .sum();
    let quantiles: Vec<QuantileRow> = cfg
        .quantiles
        .iter()
        .map(|&q| QuantileRow {
            q,
            t_ms: law.quantile(q),
        })
        .collect();
    out.csv("dists.csv", &rows)?;
    out.csv("quantiles.csv", &quantiles)?;
    let report = DistsReport {
        rates: hypoexp_rates(&cfg.params)?,
        offset_ms: lo,
        mean_ms: law.mean(),
        exact_mean_ms: exact_mean(&cfg.params),
        variance: law.variance(),
        pdf_integral: integral,
    };
    out.json("dists.json", &report)?;
    println!(
        "{} grid points on [{lo:.4}, {hi:.4}] ms, mean {:.4} ms",
        rows.len(),
        report.mean_ms
    );
    Ok(true)
}
