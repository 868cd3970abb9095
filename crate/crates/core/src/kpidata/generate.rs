use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::{CellGraph, CellSite};
use super::profile::{LabelBackend, ScenarioProfile, BINS_PER_DAY};
use super::record::{KpiRecord, BIN_SECONDS, DAY_SECONDS};
use super::KpiError;
use crate::ransim::{floor_to, run_des, ArrivalLaw, SimConfig, DEFAULT_DELAY_RESOLUTION_MS};
use crate::stochastics::{rng_stream, stats, SimRng};

/// Ground-truth anomaly flag of one generated record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordLabel {
    pub timestamp: i64,
    pub cell_id: u32,
    pub anomaly: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    /// Ordered by timestamp, then by the graph's cell order.
    pub records: Vec<KpiRecord>,
    /// Aligned with `records`.
    pub labels: Vec<RecordLabel>,
}

/// Cells on a `cols × rows` lattice with `spacing_km`, each displaced by up
/// to `jitter_km` per axis. Ids run row-major from 0.
pub fn grid_layout(
    cols: u32,
    rows: u32,
    spacing_km: f64,
    jitter_km: f64,
    seed: u64,
) -> Vec<CellSite> {
    let mut rng = rng_stream(seed, 7);
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| CellSite {
            cell_id: r * cols + c,
            x_km: f64::from(c) * spacing_km + jitter_km * (2.0 * rng.random::<f64>() - 1.0),
            y_km: f64::from(r) * spacing_km + jitter_km * (2.0 * rng.random::<f64>() - 1.0),
        })
        .collect()
}

fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

struct CellState {
    capacity: f64,
    demand: f64,
    quality: f64,
    idio: f64,
    rng: SimRng,
}

impl ScenarioProfile {
    fn bler_at(&self, load: f64, quality: f64) -> f64 {
        let l = load.clamp(0.0, 1.0);
        let b = self.bler_min + (self.bler_max - self.bler_min) * l * l;
        (b * (-0.3 * quality).exp()).clamp(0.0, 0.5)
    }

    /// Largest served load whose utilization with retransmissions stays at
    /// the cap.
    fn load_cap(&self, quality: f64) -> f64 {
        let util = |l: f64| {
            let b = self.bler_at(l, quality);
            l * (1.0 + (1..=8).map(|k| b.powi(k)).sum::<f64>())
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if util(mid) < self.max_utilization {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Synthetic KPI records for every cell and 15-minute bin of `n_days`.
///
/// A pure function of `(profile, n_days, cells)`; the profile carries the
/// seed.
pub fn generate_dataset(
    profile: &ScenarioProfile,
    n_days: u32,
    cells: &CellGraph,
) -> Result<GeneratedDataset, KpiError> {
    profile.validate()?;
    if n_days == 0 {
        return Err(KpiError::Parameter("n_days must be >= 1".into()));
    }
    let n = cells.n_cells();
    if n == 0 {
        return Err(KpiError::Parameter("cell graph is empty".into()));
    }
    let span_end = profile.start_timestamp + i64::from(n_days) * DAY_SECONDS;
    for w in &profile.anomaly_windows {
        if w.start < profile.start_timestamp || w.end > span_end {
            return Err(KpiError::Parameter(format!(
                "anomaly window [{}, {}) lies outside the dataset span",
                w.start, w.end
            )));
        }
    }
    if profile.start_timestamp.rem_euclid(BIN_SECONDS) != 0 {
        return Err(KpiError::Parameter(
            "start_timestamp must be bin-aligned".into(),
        ));
    }

    let sp = profile.spatial;
    // row-normalized so every F_c has unit variance
    let kernel: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let w: Vec<f64> = (0..n)
                .map(|j| {
                    let d = cells.distance_km(i, j) / sp.length_scale_km;
                    (-0.5 * d * d).exp()
                })
                .collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            w.into_iter().map(|v| v / norm).collect()
        })
        .collect();

    let mut field_rng = rng_stream(profile.seed, 1);
    let mut factors: Vec<f64> = (0..n).map(|_| normal(&mut field_rng)).collect();
    let mut states: Vec<CellState> = (0..n)
        .map(|i| {
            let mut rng = rng_stream(profile.seed, 1000 + i as u64);
            CellState {
                capacity: profile.service_rate
                    * (1.0 + profile.capacity_spread * (2.0 * rng.random::<f64>() - 1.0)),
                demand: (profile.demand_spread * normal(&mut rng)).exp(),
                quality: normal(&mut rng),
                idio: normal(&mut rng),
                rng,
            }
        })
        .collect();
    let caps: Vec<f64> = states.iter().map(|s| profile.load_cap(s.quality)).collect();

    let ns = profile.noise;
    let n_bins = n_days as usize * BINS_PER_DAY;
    let mut records = Vec::with_capacity(n_bins * n);
    let mut labels = Vec::with_capacity(n_bins * n);
    let innov = |phi: f64| (1.0 - phi * phi).sqrt();

    for t in 0..n_bins {
        let timestamp = profile.start_timestamp + t as i64 * BIN_SECONDS;
        if t > 0 {
            for z in &mut factors {
                *z = sp.field_persistence * *z
                    + innov(sp.field_persistence) * normal(&mut field_rng);
            }
        }
        let diurnal = profile.diurnal_curve[t % BINS_PER_DAY];
        let (tod_sin, tod_cos) = KpiRecord::tod_encoding(timestamp);

        for (i, site) in cells.cells().iter().enumerate() {
            let field: f64 = kernel[i].iter().zip(&factors).map(|(k, z)| k * z).sum();
            let st = &mut states[i];
            if t > 0 {
                st.idio = sp.idio_persistence * st.idio
                    + innov(sp.idio_persistence) * normal(&mut st.rng);
            }
            let surge: f64 = profile
                .anomaly_windows
                .iter()
                .filter(|w| w.covers(timestamp, site.cell_id))
                .map(|w| w.multiplier)
                .product();
            let arrivals = profile.arrival_rate
                * st.demand
                * diurnal
                * (sp.field_weight * field + sp.idio_weight * st.idio).exp()
                * surge;
            let offered = arrivals / st.capacity;
            let load = offered.clamp(0.01, caps[i]);
            let bler = profile.bler_at(load, st.quality);
            let queue = SimConfig {
                arrival_rate: load * st.capacity,
                service_rate: st.capacity,
                bler,
                harq_delay: profile.harq_delay,
                retx_priority: true,
                n_max: crate::latency::DEFAULT_N_MAX,
                duration: 1.0,
                warmup: 0.0,
                seed: 0,
                arrival: ArrivalLaw::Poisson,
            };
            let util = queue.effective_utilization();
            let q = st.quality;
            let rng = &mut st.rng;

            let latency = match profile.label_backend {
                LabelBackend::Analytic => {
                    let s = ns.label;
                    queue.mean_latency() * (s * normal(rng) - 0.5 * s * s).exp()
                }
                LabelBackend::Des { packets } => {
                    let warmup = 200.0 / (queue.service_rate * (1.0 - util));
                    let sim = SimConfig {
                        duration: warmup + f64::from(packets) / queue.arrival_rate,
                        warmup,
                        seed: profile.seed ^ ((t * n + i) as u64).wrapping_mul(0x9E37_79B9),
                        ..queue
                    };
                    let lat: Vec<f64> = run_des(&sim)?.iter().map(|p| p.latency()).collect();
                    if lat.is_empty() {
                        queue.mean_latency()
                    } else {
                        stats::mean(&lat)
                    }
                }
            } * surge;

            let bin_ms = BIN_SECONDS as f64 * 1000.0;
            let rec = KpiRecord {
                timestamp,
                cell_id: site.cell_id,
                qci: profile.qci,
                traffic_volume_dl: (load * st.capacity * bin_ms * (ns.volume * normal(rng)).exp())
                    .round(),
                prb_util_dl: (util + ns.prb * normal(rng)).clamp(0.0, 1.0),
                active_ues_dl: 60.0 * arrivals / profile.service_rate
                    * (ns.ues * normal(rng)).exp(),
                avg_cqi: (11.5 + 0.8 * q - 5.5 * util + ns.cqi * normal(rng)).clamp(0.0, 15.0),
                avg_rssi_ul: (-88.0 + 2.0 * q - 10.0 * util + ns.rssi * normal(rng))
                    .clamp(-130.0, -60.0),
                avg_sinr_ul: (20.0 + 2.5 * q - 16.0 * util + ns.sinr * normal(rng))
                    .clamp(-10.0, 40.0),
                avg_mcs_dl: (18.0 + 1.0 * q - 2.0 * util + ns.mcs_dl * normal(rng))
                    .clamp(0.0, 28.0),
                avg_mcs_ul: (16.0 + 1.2 * q - 9.0 * util + ns.mcs_ul * normal(rng))
                    .clamp(0.0, 28.0),
                tod_sin,
                tod_cos,
                label_latency_ms: floor_to(latency, DEFAULT_DELAY_RESOLUTION_MS),
            };
            records.push(rec);
            labels.push(RecordLabel {
                timestamp,
                cell_id: site.cell_id,
                anomaly: u8::from(surge != 1.0),
            });
        }
    }
    Ok(GeneratedDataset { records, labels })
}
