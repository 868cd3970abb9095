//! Predictive latency for 5G downlink.
//!
//! The crate is organised bottom-up:
//!
//! - [`stochastics`]: exponential/hypoexponential laws, M/M/1 results.
//! - [`latency`]: the hypoexponential U-plane latency model and its
//!   Monte-Carlo counterpart.
//! - [`ransim`]: discrete-event simulation of a gNB downlink queue with
//!   HARQ retransmissions, plus the PDCP delay KPI aggregation.
//! - [`kpidata`]: synthetic per-cell KPI datasets, CSV I/O, correlation
//!   analysis and cell graphs.
//! - [`pqos`]: probabilistic regression, anomaly detection and forecasting
//!   pipelines built on `pqos-neuro`.

pub mod kpidata;
pub mod latency;
pub mod pqos;
pub mod ransim;
pub mod stochastics;
