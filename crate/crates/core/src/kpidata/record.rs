use serde::{Deserialize, Serialize};

/// Width of one KPI aggregation bin.
pub const BIN_SECONDS: i64 = 900;
pub const DAY_SECONDS: i64 = 86_400;

pub const CSV_HEADER: &str = "timestamp,cell_id,qci,traffic_volume_dl,prb_util_dl,active_ues_dl,\
avg_cqi,avg_rssi_ul,avg_sinr_ul,avg_mcs_dl,avg_mcs_ul,tod_sin,tod_cos,label_latency_ms";

/// Numeric model inputs, in column order.
pub const FEATURE_NAMES: [&str; 10] = [
    "traffic_volume_dl",
    "prb_util_dl",
    "active_ues_dl",
    "avg_cqi",
    "avg_rssi_ul",
    "avg_sinr_ul",
    "avg_mcs_dl",
    "avg_mcs_ul",
    "tod_sin",
    "tod_cos",
];

/// One cell, one QCI, one 15-minute bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiRecord {
    /// Bin start, seconds since the Unix epoch.
    pub timestamp: i64,
    pub cell_id: u32,
    pub qci: u8,
    /// PDCP SDUs delivered in the bin.
    pub traffic_volume_dl: f64,
    pub prb_util_dl: f64,
    pub active_ues_dl: f64,
    pub avg_cqi: f64,
    /// dBm
    pub avg_rssi_ul: f64,
    /// dB
    pub avg_sinr_ul: f64,
    pub avg_mcs_dl: f64,
    pub avg_mcs_ul: f64,
    pub tod_sin: f64,
    pub tod_cos: f64,
    pub label_latency_ms: f64,
}

type Range = (f64, f64);

const RANGES: [(&str, Range); 11] = [
    ("traffic_volume_dl", (0.0, f64::INFINITY)),
    ("prb_util_dl", (0.0, 1.0)),
    ("active_ues_dl", (0.0, f64::INFINITY)),
    ("avg_cqi", (0.0, 15.0)),
    ("avg_rssi_ul", (-130.0, -60.0)),
    ("avg_sinr_ul", (-10.0, 40.0)),
    ("avg_mcs_dl", (0.0, 28.0)),
    ("avg_mcs_ul", (0.0, 28.0)),
    ("tod_sin", (-1.0, 1.0)),
    ("tod_cos", (-1.0, 1.0)),
    ("label_latency_ms", (0.0, f64::INFINITY)),
];

impl KpiRecord {
    /// Time-of-day encoding of a bin start.
    pub fn tod_encoding(timestamp: i64) -> (f64, f64) {
        let phase = std::f64::consts::TAU * Self::day_fraction_of(timestamp);
        (phase.sin(), phase.cos())
    }

    fn day_fraction_of(timestamp: i64) -> f64 {
        timestamp.rem_euclid(DAY_SECONDS) as f64 / DAY_SECONDS as f64
    }

    /// Fraction of the (UTC) day elapsed at the bin start.
    pub fn day_fraction(&self) -> f64 {
        Self::day_fraction_of(self.timestamp)
    }

    /// Numeric column by name. `time_of_day` is the day fraction.
    pub fn feature(&self, name: &str) -> Option<f64> {
        Some(match name {
            "timestamp" => self.timestamp as f64,
            "time_of_day" => self.day_fraction(),
            "traffic_volume_dl" => self.traffic_volume_dl,
            "prb_util_dl" => self.prb_util_dl,
            "active_ues_dl" => self.active_ues_dl,
            "avg_cqi" => self.avg_cqi,
            "avg_rssi_ul" => self.avg_rssi_ul,
            "avg_sinr_ul" => self.avg_sinr_ul,
            "avg_mcs_dl" => self.avg_mcs_dl,
            "avg_mcs_ul" => self.avg_mcs_ul,
            "tod_sin" => self.tod_sin,
            "tod_cos" => self.tod_cos,
            "label_latency_ms" => self.label_latency_ms,
            _ => return None,
        })
    }

    /// The ten [`FEATURE_NAMES`] columns in order.
    pub fn features(&self) -> [f64; 10] {
        [
            self.traffic_volume_dl,
            self.prb_util_dl,
            self.active_ues_dl,
            self.avg_cqi,
            self.avg_rssi_ul,
            self.avg_sinr_ul,
            self.avg_mcs_dl,
            self.avg_mcs_ul,
            self.tod_sin,
            self.tod_cos,
        ]
    }

    /// First violated invariant as `(field, value, reason)`.
    pub fn check(&self) -> Result<(), (&'static str, f64, &'static str)> {
        if self.timestamp.rem_euclid(BIN_SECONDS) != 0 {
            return Err((
                "timestamp",
                self.timestamp as f64,
                "is not aligned to the 900 s grid",
            ));
        }
        if self.qci != 1 && self.qci != 7 {
            return Err(("qci", f64::from(self.qci), "must be 1 or 7"));
        }
        for (name, (lo, hi)) in RANGES {
            let v = self.feature(name).expect("known column");
            if !(v.is_finite() && v >= lo && v <= hi) {
                return Err((name, v, "is out of range"));
            }
        }
        Ok(())
    }
}
