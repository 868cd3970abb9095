use serde::{Deserialize, Serialize};

use super::record::{BIN_SECONDS, DAY_SECONDS};
use super::KpiError;

pub const BINS_PER_DAY: usize = (DAY_SECONDS / BIN_SECONDS) as usize;

/// 2023-03-01 00:00:00 UTC.
pub const DEFAULT_START: i64 = 1_677_628_800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DenseUrban,
    Vehicular,
    Event,
}

/// How latency labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "backend")]
pub enum LabelBackend {
    /// Predicted mean latency of the implied queue, with multiplicative noise.
    #[default]
    Analytic,
    /// Mean latency of a simulated run of `packets` packets per record.
    Des { packets: u32 },
}

/// Load surge on some cells over `[start, end)` (Unix seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyWindow {
    pub start: i64,
    pub end: i64,
    /// Factor applied to offered load and to the latency label.
    pub multiplier: f64,
    /// Affected cells; empty means every cell.
    #[serde(default)]
    pub cells: Vec<u32>,
}

impl AnomalyWindow {
    pub fn covers(&self, timestamp: i64, cell_id: u32) -> bool {
        timestamp >= self.start
            && timestamp < self.end
            && (self.cells.is_empty() || self.cells.contains(&cell_id))
    }
}

/// Standard deviations of the per-feature noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseScales {
    /// Additive, on the utilization fraction.
    pub prb: f64,
    /// Log-scale.
    pub volume: f64,
    /// Log-scale.
    pub ues: f64,
    pub cqi: f64,
    pub rssi: f64,
    pub sinr: f64,
    pub mcs_dl: f64,
    pub mcs_ul: f64,
    /// Log-scale, on the latency label.
    pub label: f64,
}

/// Latent load perturbation `a·F_c(t) + b·e_c(t)`: `F` is a smooth spatial
/// field (Gaussian kernel over cell positions applied to per-site AR(1)
/// factors), `e` an idiosyncratic AR(1) per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialField {
    pub length_scale_km: f64,
    pub field_weight: f64,
    /// Lag-one autocorrelation per 15-minute bin.
    pub field_persistence: f64,
    pub idio_weight: f64,
    pub idio_persistence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioProfile {
    pub kind: ScenarioKind,
    /// Traffic multiplier per 15-minute bin of the day (96 entries).
    pub diurnal_curve: Vec<f64>,
    /// Peak-hour arrival rate β0 (packets/ms).
    pub arrival_rate: f64,
    /// Nominal per-attempt service rate μ (1/ms).
    pub service_rate: f64,
    /// Relative spread of per-cell capacity around μ.
    pub capacity_spread: f64,
    /// Log-scale spread of per-cell demand.
    pub demand_spread: f64,
    /// BLER at zero and at full load; quadratic in between.
    pub bler_min: f64,
    pub bler_max: f64,
    pub harq_delay: f64,
    /// Cap on utilization including retransmissions.
    pub max_utilization: f64,
    pub spatial: SpatialField,
    pub noise: NoiseScales,
    #[serde(default)]
    pub anomaly_windows: Vec<AnomalyWindow>,
    pub qci: u8,
    #[serde(default = "default_start")]
    pub start_timestamp: i64,
    #[serde(default)]
    pub label_backend: LabelBackend,
    #[serde(default)]
    pub seed: u64,
}

fn default_start() -> i64 {
    DEFAULT_START
}

/// Sum of circular Gaussian bumps `(hour, height, width_h)` over a floor,
/// scaled to peak at 1.
fn diurnal(floor: f64, bumps: &[(f64, f64, f64)]) -> Vec<f64> {
    let raw: Vec<f64> = (0..BINS_PER_DAY)
        .map(|b| {
            let h = b as f64 * 24.0 / BINS_PER_DAY as f64;
            floor
                + bumps
                    .iter()
                    .map(|&(c, a, w)| {
                        let d = (h - c).abs();
                        let d = d.min(24.0 - d);
                        a * (-0.5 * (d / w).powi(2)).exp()
                    })
                    .sum::<f64>()
        })
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    raw.into_iter().map(|v| v / peak).collect()
}

impl ScenarioProfile {
    pub fn dense_urban(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::DenseUrban,
            diurnal_curve: diurnal(0.3, &[(12.5, 0.45, 2.5), (20.0, 0.6, 2.2)]),
            arrival_rate: 0.62,
            service_rate: 1.0,
            capacity_spread: 0.1,
            demand_spread: 0.08,
            bler_min: 0.02,
            bler_max: 0.15,
            harq_delay: 1.0,
            max_utilization: 0.92,
            spatial: SpatialField {
                length_scale_km: 1.0,
                field_weight: 0.2,
                field_persistence: 0.97,
                idio_weight: 0.12,
                idio_persistence: 0.8,
            },
            noise: NoiseScales {
                prb: 0.015,
                volume: 0.2,
                ues: 0.3,
                cqi: 0.9,
                rssi: 3.0,
                sinr: 3.5,
                mcs_dl: 2.5,
                mcs_ul: 2.0,
                label: 0.06,
            },
            anomaly_windows: Vec::new(),
            qci: 7,
            start_timestamp: DEFAULT_START,
            label_backend: LabelBackend::Analytic,
            seed,
        }
    }

    /// Commuter peaks, fast-moving demand and noisier measurements.
    pub fn vehicular(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Vehicular,
            diurnal_curve: diurnal(
                0.25,
                &[(8.0, 0.7, 1.3), (17.5, 0.75, 1.6), (13.0, 0.3, 2.0)],
            ),
            arrival_rate: 0.6,
            spatial: SpatialField {
                length_scale_km: 1.0,
                field_weight: 0.3,
                field_persistence: 0.92,
                idio_weight: 0.25,
                idio_persistence: 0.3,
            },
            noise: NoiseScales {
                prb: 0.03,
                volume: 0.25,
                ues: 0.35,
                cqi: 1.1,
                rssi: 3.5,
                sinr: 4.0,
                mcs_dl: 2.5,
                mcs_ul: 2.2,
                label: 0.15,
            },
            ..Self::dense_urban(seed)
        }
    }

    /// Dense-urban traffic with a fourfold evening surge (19:00 to 23:30) on
    /// `stadium_cells` on days 14 and 15 of the dataset.
    pub fn event(seed: u64, stadium_cells: &[u32]) -> Self {
        let base = Self::dense_urban(seed);
        let windows = [14i64, 15]
            .iter()
            .map(|&day| {
                let day_start = base.start_timestamp + day * DAY_SECONDS;
                AnomalyWindow {
                    start: day_start + 19 * 3600,
                    end: day_start + 23 * 3600 + 1800,
                    multiplier: 4.0,
                    cells: stadium_cells.to_vec(),
                }
            })
            .collect();
        Self {
            kind: ScenarioKind::Event,
            anomaly_windows: windows,
            ..base
        }
    }

    pub fn for_kind(kind: ScenarioKind, seed: u64) -> Self {
        match kind {
            ScenarioKind::DenseUrban => Self::dense_urban(seed),
            ScenarioKind::Vehicular => Self::vehicular(seed),
            ScenarioKind::Event => Self::event(seed, &[0, 1]),
        }
    }

    /// Conversational voice bearers: lighter load, tighter BLER target.
    pub fn with_qci(mut self, qci: u8) -> Self {
        self.qci = qci;
        if qci == 1 {
            self.arrival_rate *= 0.6;
            self.bler_min = 0.01;
            self.bler_max = 0.05;
        }
        self
    }

    pub fn validate(&self) -> Result<(), KpiError> {
        let bad = |m: String| Err(KpiError::Parameter(m));
        if self.diurnal_curve.len() != BINS_PER_DAY {
            return bad(format!(
                "diurnal_curve needs {BINS_PER_DAY} entries, got {}",
                self.diurnal_curve.len()
            ));
        }
        if self
            .diurnal_curve
            .iter()
            .any(|&v| !(v.is_finite() && v > 0.0))
        {
            return bad("diurnal multipliers must be > 0".into());
        }
        let positive = [
            ("arrival_rate", self.arrival_rate),
            ("service_rate", self.service_rate),
            ("spatial.length_scale_km", self.spatial.length_scale_km),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0"));
            }
        }
        let nonneg = [
            ("capacity_spread", self.capacity_spread),
            ("demand_spread", self.demand_spread),
            ("harq_delay", self.harq_delay),
            ("spatial.field_weight", self.spatial.field_weight),
            ("spatial.idio_weight", self.spatial.idio_weight),
            ("noise.prb", self.noise.prb),
            ("noise.volume", self.noise.volume),
            ("noise.ues", self.noise.ues),
            ("noise.cqi", self.noise.cqi),
            ("noise.rssi", self.noise.rssi),
            ("noise.sinr", self.noise.sinr),
            ("noise.mcs_dl", self.noise.mcs_dl),
            ("noise.mcs_ul", self.noise.mcs_ul),
            ("noise.label", self.noise.label),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        if self.capacity_spread >= 1.0 {
            return bad("capacity_spread must be < 1".into());
        }
        for (name, v) in [
            ("spatial.field_persistence", self.spatial.field_persistence),
            ("spatial.idio_persistence", self.spatial.idio_persistence),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(0.0 <= self.bler_min && self.bler_min <= self.bler_max && self.bler_max < 1.0) {
            return bad("need 0 <= bler_min <= bler_max < 1".into());
        }
        if !(self.max_utilization > 0.0 && self.max_utilization < 1.0) {
            return bad("max_utilization must lie in (0, 1)".into());
        }
        if self.qci != 1 && self.qci != 7 {
            return bad("qci must be 1 or 7".into());
        }
        if let LabelBackend::Des { packets } = self.label_backend {
            if packets == 0 {
                return bad("des backend needs packets > 0".into());
            }
        }
        for w in &self.anomaly_windows {
            if !(w.multiplier.is_finite() && w.multiplier > 0.0) {
                return bad("anomaly multipliers must be > 0".into());
            }
            if w.end <= w.start {
                return bad("anomaly window end must follow its start".into());
            }
        }
        Ok(())
    }
}
