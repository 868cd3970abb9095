//! Discrete-event simulation of a gNB downlink queue with HARQ.
//!
//! A single server transmits packets in arrival order. Each transmission
//! attempt takes an exponential service time and fails with probability
//! `bler`. A failed packet waits out the HARQ feedback delay `C` (the
//! server stays free meanwhile) and then re-enters the queue, ahead of new
//! packets when `retx_priority` is set. After `n_max` retransmissions the
//! packet is counted as delivered at its last attempt. The acknowledgement
//! time is the end of the successful attempt plus `C`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{analytic_latency, LatencyModelParams};
use crate::stochastics::{
    make_exponential, rng_stream, stats, ContinuousDistribution, StochasticsError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unstable configuration: effective utilization {rho:.4} >= 1")]
    Unstable { rho: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Inter-arrival law of new packets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalLaw {
    #[default]
    Poisson,
    /// Evenly spaced arrivals, for sensitivity checks against the Poisson
    /// assumption.
    Periodic,
}

fn yes() -> bool {
    true
}
fn default_n_max() -> u32 {
    crate::latency::DEFAULT_N_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// New-packet arrival rate β (1/ms).
    pub arrival_rate: f64,
    /// Per-attempt service rate μ (1/ms).
    pub service_rate: f64,
    pub bler: f64,
    /// HARQ feedback delay C (ms).
    #[serde(default)]
    pub harq_delay: f64,
    #[serde(default = "yes")]
    pub retx_priority: bool,
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    /// Arrivals are generated on `[0, duration)` (ms).
    pub duration: f64,
    /// Arrivals before `warmup` are simulated but not reported.
    #[serde(default)]
    pub warmup: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arrival: ArrivalLaw,
}

impl SimConfig {
    /// Expected retransmissions per packet, `Σ_{k=1}^{n_max} bler^k`
    /// (failures past `n_max` are delivered, not retried).
    pub fn expected_retransmissions(&self) -> f64 {
        (1..=self.n_max).map(|k| self.bler.powi(k as i32)).sum()
    }

    /// Server utilization including retransmission load, `β(1 + E[N])/μ`.
    pub fn effective_utilization(&self) -> f64 {
        self.arrival_rate * (1.0 + self.expected_retransmissions()) / self.service_rate
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad("arrival_rate must be > 0");
        }
        if !(self.service_rate.is_finite() && self.service_rate > 0.0) {
            return bad("service_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.bler) {
            return bad("bler must lie in [0, 1)");
        }
        if !(self.harq_delay.is_finite() && self.harq_delay >= 0.0) {
            return bad("harq_delay must be >= 0");
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0 && self.duration > self.warmup) {
            return bad("need duration > warmup >= 0");
        }
        let rho = self.effective_utilization();
        if rho >= 1.0 {
            return Err(SimError::Unstable { rho });
        }
        Ok(())
    }

    /// Mean sojourn per attempt class, `(first, retransmission)`, from the
    /// M/M/1 (FIFO) or two-class non-preemptive priority (Cobham) formulas.
    pub fn mean_sojourns(&self) -> (f64, f64) {
        let mu = self.service_rate;
        let rho = self.effective_utilization();
        if !self.retx_priority || self.bler == 0.0 {
            let s = 1.0 / (mu * (1.0 - rho));
            return (s, s);
        }
        let rho_retx = self.arrival_rate * self.expected_retransmissions() / mu;
        // mean residual work seen by an arrival: Σ β_i E[S²]/2 = ρ/μ
        let residual = rho / mu;
        let wait_retx = residual / (1.0 - rho_retx);
        let wait_new = residual / ((1.0 - rho_retx) * (1.0 - rho));
        (wait_new + 1.0 / mu, wait_retx + 1.0 / mu)
    }

    /// Predicted mean latency, `T_new + E[N]·(T_retx + C) + C`.
    pub fn mean_latency(&self) -> f64 {
        let (first, retx) = self.mean_sojourns();
        let n = self.expected_retransmissions();
        first + n * (retx + self.harq_delay) + self.harq_delay
    }

    /// Latency-model parameters implied by this queue: stage rates matched
    /// to the mean sojourn of first and repeated attempts.
    pub fn implied_latency_params(&self, order: usize) -> Result<LatencyModelParams, SimError> {
        let (first, retx) = self.mean_sojourns();
        Ok(LatencyModelParams::new(
            1.0 / first,
            1.0 / retx,
            self.harq_delay,
            self.bler,
            Some(self.n_max),
            order,
        )?)
    }

    /// Analytic latency law for this queue. Without block errors this is the
    /// M/M/1 sojourn law shifted by one HARQ delay.
    pub fn implied_latency_law(&self, order: usize) -> Result<ContinuousDistribution, SimError> {
        self.validate()?;
        if self.bler == 0.0 {
            let (first, _) = self.mean_sojourns();
            return Ok(make_exponential(1.0 / first)?.shifted(self.harq_delay)?);
        }
        Ok(analytic_latency(&self.implied_latency_params(order)?)?)
    }
}

/// One delivered packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketTrace {
    pub packet_id: u64,
    #[serde(rename = "t_arriv_ms")]
    pub t_arriv: f64,
    #[serde(rename = "t_ack_ms")]
    pub t_ack: f64,
    pub retx_count: u32,
}

impl PacketTrace {
    pub fn latency(&self) -> f64 {
        self.t_ack - self.t_arriv
    }
}

/// Per-run aggregates that traces alone do not carry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub first_attempts: u64,
    pub retx_attempts: u64,
    /// Mean queueing delay (service start − enqueue) of first attempts.
    pub mean_wait_first: f64,
    /// Mean queueing delay of retransmission attempts.
    pub mean_wait_retx: f64,
    pub warmup_arrivals: u64,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub traces: Vec<PacketTrace>,
    pub stats: SimStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Arrival,
    ServiceDone,
    Requeue(usize),
}

/// Heap key: (time, insertion sequence). f64 times are ordered by
/// `total_cmp` through their bit pattern, valid for non-negative values.
type EventKey = Reverse<(u64, u64)>;

struct EventQueue {
    heap: BinaryHeap<(EventKey, EventKindOrd)>,
    seq: u64,
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct EventKindOrd(EventKind);

impl EventQueue {
    fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time >= 0.0);
        self.seq += 1;
        self.heap
            .push((Reverse((time.to_bits(), self.seq)), EventKindOrd(kind)));
    }

    fn pop(&mut self) -> Option<(f64, EventKind)> {
        self.heap
            .pop()
            .map(|(Reverse((bits, _)), kind)| (f64::from_bits(bits), kind.0))
    }
}

struct Attempt {
    packet: usize,
    enqueued: f64,
}

struct Packet {
    t_arriv: f64,
    retx_count: u32,
}

#[derive(Default)]
struct WaitAccumulator {
    first_sum: f64,
    first_n: u64,
    retx_sum: f64,
    retx_n: u64,
}

/// Runs the simulation and returns delivered post-warmup packets ordered by
/// acknowledgement time.
pub fn run_des(config: &SimConfig) -> Result<Vec<PacketTrace>, SimError> {
    Ok(run_des_with_stats(config)?.traces)
}

pub fn run_des_with_stats(config: &SimConfig) -> Result<SimRun, SimError> {
    config.validate()?;
    // Separate streams keep arrivals, service times and block errors
    // coupled across configurations that share a seed.
    let mut arrivals_rng = rng_stream(config.seed, 0);
    let mut service_rng = rng_stream(config.seed, 1);
    let mut error_rng = rng_stream(config.seed, 2);
    let exp_draw =
        |rng: &mut crate::stochastics::SimRng, rate: f64| -(1.0 - rng.random::<f64>()).ln() / rate;
    let next_gap = |rng: &mut crate::stochastics::SimRng| match config.arrival {
        ArrivalLaw::Poisson => exp_draw(rng, config.arrival_rate),
        ArrivalLaw::Periodic => 1.0 / config.arrival_rate,
    };

    let mut events = EventQueue::new();
    let mut packets: Vec<Packet> = Vec::new();
    let mut new_queue: VecDeque<Attempt> = VecDeque::new();
    let mut retx_queue: VecDeque<Attempt> = VecDeque::new();
    let mut in_service: Option<Attempt> = None;
    let mut waits = WaitAccumulator::default();
    let mut traces = Vec::new();
    let mut warmup_arrivals = 0u64;

    let first = next_gap(&mut arrivals_rng);
    if first < config.duration {
        events.push(first, EventKind::Arrival);
    }

    while let Some((now, kind)) = events.pop() {
        match kind {
            EventKind::Arrival => {
                let id = packets.len();
                packets.push(Packet {
                    t_arriv: now,
                    retx_count: 0,
                });
                if now < config.warmup {
                    warmup_arrivals += 1;
                }
                new_queue.push_back(Attempt {
                    packet: id,
                    enqueued: now,
                });
                let next = now + next_gap(&mut arrivals_rng);
                if next < config.duration {
                    events.push(next, EventKind::Arrival);
                }
            }
            EventKind::Requeue(id) => {
                let attempt = Attempt {
                    packet: id,
                    enqueued: now,
                };
                if config.retx_priority {
                    retx_queue.push_back(attempt);
                } else {
                    new_queue.push_back(attempt);
                }
            }
            EventKind::ServiceDone => {
                let done = in_service
                    .take()
                    .expect("service completion without a packet");
                let p = &mut packets[done.packet];
                let failed = config.bler > 0.0 && error_rng.random::<f64>() < config.bler;
                if failed && p.retx_count < config.n_max {
                    p.retx_count += 1;
                    events.push(now + config.harq_delay, EventKind::Requeue(done.packet));
                } else if p.t_arriv >= config.warmup {
                    traces.push(PacketTrace {
                        packet_id: done.packet as u64,
                        t_arriv: p.t_arriv,
                        t_ack: now + config.harq_delay,
                        retx_count: p.retx_count,
                    });
                }
            }
        }

        if in_service.is_none() {
            let next = retx_queue.pop_front().or_else(|| new_queue.pop_front());
            if let Some(attempt) = next {
                let p = &packets[attempt.packet];
                if p.t_arriv >= config.warmup {
                    let wait = now - attempt.enqueued;
                    if p.retx_count == 0 {
                        waits.first_sum += wait;
                        waits.first_n += 1;
                    } else {
                        waits.retx_sum += wait;
                        waits.retx_n += 1;
                    }
                }
                events.push(
                    now + exp_draw(&mut service_rng, config.service_rate),
                    EventKind::ServiceDone,
                );
                in_service = Some(attempt);
            }
        }
    }

    traces.sort_by(|a, b| {
        a.t_ack
            .total_cmp(&b.t_ack)
            .then(a.packet_id.cmp(&b.packet_id))
    });
    let ratio = |s: f64, n: u64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(SimRun {
        traces,
        stats: SimStats {
            first_attempts: waits.first_n,
            retx_attempts: waits.retx_n,
            mean_wait_first: ratio(waits.first_sum, waits.first_n),
            mean_wait_retx: ratio(waits.retx_sum, waits.retx_n),
            warmup_arrivals,
        },
    })
}

/// One PDCP delay measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayWindow {
    #[serde(rename = "window_start_ms")]
    pub window_start: f64,
    #[serde(rename = "p_delay_ms")]
    pub p_delay: f64,
    pub sdu_count: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DelaySeries {
    pub window_ms: f64,
    pub resolution_ms: f64,
    pub windows: Vec<DelayWindow>,
}

/// Default floor resolution of the delay KPI.
pub const DEFAULT_DELAY_RESOLUTION_MS: f64 = 0.1;

/// `⌊Σ_i (t_ack(i) − t_arriv(i)) / I(T)⌋`, the mean delay of packets
/// acknowledged in each window of width `window_ms`, floored to
/// `resolution_ms`. Windows without packets are omitted.
pub fn pdelay_windows(
    traces: &[PacketTrace],
    window_ms: f64,
    resolution_ms: f64,
) -> Result<DelaySeries, SimError> {
    if !(window_ms > 0.0 && resolution_ms > 0.0) {
        return Err(SimError::Config(
            "window and resolution must be > 0".to_string(),
        ));
    }
    let mut buckets: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
    for t in traces {
        let k = (t.t_ack / window_ms).floor() as u64;
        let e = buckets.entry(k).or_insert((0.0, 0));
        e.0 += t.latency();
        e.1 += 1;
    }
    let windows = buckets
        .into_iter()
        .map(|(k, (sum, n))| DelayWindow {
            window_start: k as f64 * window_ms,
            p_delay: floor_to(sum / n as f64, resolution_ms),
            sdu_count: n,
        })
        .collect();
    Ok(DelaySeries {
        window_ms,
        resolution_ms,
        windows,
    })
}

/// Floors `x` to a multiple of `resolution`, tolerating representation
/// error in the quotient (7.9 / 0.1 is 78.99999…).
pub fn floor_to(x: f64, resolution: f64) -> f64 {
    let q = x / resolution;
    let steps = (q + 1e-9 * q.abs().max(1.0)).floor();
    steps * resolution
}

/// What an empirical latency sample is compared against.
#[derive(Debug, Clone)]
pub enum Reference {
    Analytic(ContinuousDistribution),
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    #[serde(rename = "bin_left_ms")]
    pub left: f64,
    #[serde(rename = "bin_right_ms")]
    pub right: f64,
    pub density: f64,
    pub analytic_pdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub ks: f64,
    pub wasserstein1: f64,
    pub empirical_mean: f64,
    pub reference_mean: f64,
    pub n_samples: usize,
    #[serde(skip)]
    pub histogram: Vec<HistogramBin>,
}

pub const MIN_FIT_SAMPLES: usize = 1000;

/// KS and Wasserstein-1 distances between latencies and a reference, plus a
/// density histogram over `[0, max sample]` with bins of `bin_width` ms.
pub fn empirical_vs_analytic(
    latencies: &[f64],
    reference: &Reference,
    bin_width: f64,
) -> Result<FitReport, SimError> {
    if latencies.len() < MIN_FIT_SAMPLES {
        return Err(SimError::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: latencies.len(),
        });
    }
    if !(bin_width > 0.0) {
        return Err(SimError::Config("bin_width must be > 0".to_string()));
    }
    let (ks, w1, reference_mean) = match reference {
        Reference::Analytic(d) => (
            stats::ks_statistic(latencies, d),
            stats::wasserstein1(latencies, d),
            d.mean(),
        ),
        Reference::Empirical(other) => (
            stats::ks_two_sample(latencies, other),
            stats::wasserstein1_two_sample(latencies, other),
            stats::mean(other),
        ),
    };
    let max = latencies.iter().copied().fold(0.0, f64::max);
    let n_bins = ((max / bin_width).floor() as usize + 1).max(1);
    let counts = bin_counts(latencies, bin_width, n_bins);
    let ref_density: Vec<f64> = match reference {
        Reference::Analytic(d) => (0..n_bins)
            .map(|i| d.pdf((i as f64 + 0.5) * bin_width))
            .collect(),
        Reference::Empirical(other) => {
            let c = bin_counts(other, bin_width, n_bins);
            c.iter()
                .map(|&k| k as f64 / (other.len() as f64 * bin_width))
                .collect()
        }
    };
    let n = latencies.len() as f64;
    let histogram = counts
        .iter()
        .zip(ref_density)
        .enumerate()
        .map(|(i, (&c, pdf))| HistogramBin {
            left: i as f64 * bin_width,
            right: (i + 1) as f64 * bin_width,
            density: c as f64 / (n * bin_width),
            analytic_pdf: pdf,
        })
        .collect();
    Ok(FitReport {
        ks,
        wasserstein1: w1,
        empirical_mean: stats::mean(latencies),
        reference_mean,
        n_samples: latencies.len(),
        histogram,
    })
}

fn bin_counts(xs: &[f64], width: f64, n_bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_bins];
    for &x in xs {
        if x >= 0.0 {
            let i = (x / width).floor() as usize;
            if i < n_bins {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// `packet_id,t_arriv_ms,t_ack_ms,retx_count`
pub fn write_traces_csv<W: io::Write>(traces: &[PacketTrace], w: W) -> Result<(), SimError> {
    let mut wtr = csv::Writer::from_writer(w);
    for t in traces {
        wtr.serialize(t)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_traces_csv<R: io::Read>(r: R) -> Result<Vec<PacketTrace>, SimError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<PacketTrace>, _>>()?)
}

/// `bin_left_ms,bin_right_ms,density,analytic_pdf`
pub fn write_histogram_csv<W: io::Write>(bins: &[HistogramBin], w: W) -> Result<(), SimError> {
    let mut wtr = csv::Writer::from_writer(w);
    for b in bins {
        wtr.serialize(b)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_delay_series_csv<W: io::Write>(series: &DelaySeries, w: W) -> Result<(), SimError> {
    let mut wtr = csv::Writer::from_writer(w);
    for win in &series.windows {
        wtr.serialize(win)?;
    }
    wtr.flush()?;
    Ok(())
}
