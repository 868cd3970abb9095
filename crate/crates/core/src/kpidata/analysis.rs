use serde::{Deserialize, Serialize};

use super::record::{KpiRecord, DAY_SECONDS};
use super::KpiError;

/// Pearson correlation of a named column with `label_latency_ms`.
pub fn pearson(records: &[KpiRecord], feature_name: &str) -> Result<f64, KpiError> {
    if records.len() < 3 {
        return Err(KpiError::Parameter(format!(
            "need at least 3 records, got {}",
            records.len()
        )));
    }
    let xs = records
        .iter()
        .map(|r| r.feature(feature_name))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| KpiError::Schema(format!("unknown feature column {feature_name}")))?;
    let ys: Vec<f64> = records.iter().map(|r| r.label_latency_ms).collect();
    correlation(&xs, &ys).ok_or_else(|| KpiError::UndefinedCorrelation(feature_name.to_string()))
}

fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub column: String,
    pub r: f64,
    pub reference: f64,
    /// Rows whose reference |r| is large enough for the sign to be checked.
    pub sign_stable: bool,
}

/// `(display name, column, reference r, sign-stable)`
const TABLE: [(&str, &str, f64, bool); 9] = [
    ("Time of day", "time_of_day", 0.39, false),
    ("DL traffic volume", "traffic_volume_dl", 0.62, true),
    ("DL resource utilization", "prb_util_dl", 0.79, true),
    ("DL active UEs", "active_ues_dl", 0.67, true),
    ("Average CQI", "avg_cqi", -0.35, true),
    ("Average UL RSSI", "avg_rssi_ul", -0.33, true),
    ("Average UL SINR", "avg_sinr_ul", -0.33, true),
    ("Average DL MCS", "avg_mcs_dl", 0.11, false),
    ("Average UL MCS", "avg_mcs_ul", -0.47, true),
];

/// Correlation of each reference feature with the latency label, beside the
/// reference values measured on a live network.
pub fn correlation_table(records: &[KpiRecord]) -> Result<Vec<CorrelationRow>, KpiError> {
    TABLE
        .iter()
        .map(|&(feature, column, reference, sign_stable)| {
            Ok(CorrelationRow {
                feature: feature.to_string(),
                column: column.to_string(),
                r: pearson(records, column)?,
                reference,
                sign_stable,
            })
        })
        .collect()
}

/// True when every sign-stable row has the sign of its reference.
pub fn sign_pattern_matches(table: &[CorrelationRow]) -> bool {
    table
        .iter()
        .filter(|row| row.sign_stable)
        .all(|row| row.r.signum() == row.reference.signum() && row.r != 0.0)
}

/// True when resource utilization has the largest |r| of the traffic rows.
pub fn utilization_dominates(table: &[CorrelationRow]) -> bool {
    let get = |col: &str| {
        table
            .iter()
            .find(|row| row.column == col)
            .map(|row| row.r.abs())
    };
    match (
        get("prb_util_dl"),
        get("traffic_volume_dl"),
        get("active_ues_dl"),
    ) {
        (Some(u), Some(v), Some(a)) => u > v && u > a,
        _ => false,
    }
}

/// Chronological split on calendar days (UTC) counted from the first
/// record's day. Both halves are sorted by `(timestamp, cell_id)`.
pub fn split_by_days(
    records: &[KpiRecord],
    train_days: u32,
    test_days: u32,
) -> Result<(Vec<KpiRecord>, Vec<KpiRecord>), KpiError> {
    let need = i64::from(train_days) + i64::from(test_days);
    let Some(first) = records.iter().map(|r| r.timestamp).min() else {
        return Err(KpiError::InsufficientSpan { have: 0, need });
    };
    let last = records.iter().map(|r| r.timestamp).max().expect("nonempty");
    let day0 = first - first.rem_euclid(DAY_SECONDS);
    let have = (last - day0) / DAY_SECONDS + 1;
    if have < need {
        return Err(KpiError::InsufficientSpan { have, need });
    }
    let boundary = day0 + i64::from(train_days) * DAY_SECONDS;
    let end = day0 + need * DAY_SECONDS;
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.timestamp, r.cell_id));
    let train = sorted
        .iter()
        .filter(|r| r.timestamp < boundary)
        .copied()
        .collect();
    let test = sorted
        .iter()
        .filter(|r| r.timestamp >= boundary && r.timestamp < end)
        .copied()
        .collect();
    Ok((train, test))
}
