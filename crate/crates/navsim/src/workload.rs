//! Client and peer request workloads: Zipf content popularity, churn windows,
//! and bandwidth-trace replay for access links.

use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::SegmentId;
use crate::rng;

/// Service class of a request stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServiceClass {
    Live,
    Vod,
}

/// One client request for one segment at one quality.
///
/// `requested_rep` is a placeholder at generation time (clients start at the
/// lowest rung); the engine overwrites it with the ABR choice when the
/// request is issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEvent {
    pub client_id: String,
    pub edge_id: String,
    pub segment: SegmentId,
    pub requested_rep: usize,
    pub arrival_slot: u64,
    pub deadline_s: f64,
    pub service_class: ServiceClass,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("zipf needs at least one item")]
    EmptyZipf,
    #[error("trace must contain samples")]
    EmptyTrace,
    #[error("trace times must be strictly increasing (sample {0})")]
    NonMonotoneTrace(usize),
    #[error("trace sample {0} has negative bandwidth")]
    NegativeBandwidth(usize),
    #[error("query time {t} precedes first trace sample {first}")]
    BeforeTraceStart { t: f64, first: f64 },
    #[error("trace parse error: {0}")]
    Parse(String),
}

/// Zipf popularity vector: `p_i = (1/i^alpha) / sum_j (1/j^alpha)`.
///
/// Kahan-compensated normalization keeps the vector summing to one within
/// 1e-12 even for a million items.
pub fn zipf_probabilities(k: usize, alpha: f64) -> Result<Vec<f64>, WorkloadError> {
    if k == 0 {
        return Err(WorkloadError::EmptyZipf);
    }
    let weights: Vec<f64> = (1..=k).map(|i| (i as f64).powf(-alpha)).collect();
    let total = kahan_sum(&weights);
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Piecewise-constant last-mile bandwidth samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    /// (seconds, bits per second), strictly increasing in time.
    pub samples: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, WorkloadError> {
        if samples.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(WorkloadError::NonMonotoneTrace(i + 1));
            }
        }
        if let Some(i) = samples.iter().position(|&(_, b)| b < 0.0) {
            return Err(WorkloadError::NegativeBandwidth(i));
        }
        Ok(Self { samples })
    }

    pub fn constant(bps: f64) -> Self {
        Self {
            samples: vec![(0.0, bps)],
        }
    }

    /// Reads the `t_s,kbps` CSV format.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, WorkloadError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| WorkloadError::Parse(e.to_string()))?;
            let t: f64 = record
                .get(0)
                .ok_or_else(|| WorkloadError::Parse("missing t_s".into()))?
                .trim()
                .parse()
                .map_err(|e| WorkloadError::Parse(format!("t_s: {e}")))?;
            let kbps: f64 = record
                .get(1)
                .ok_or_else(|| WorkloadError::Parse("missing kbps".into()))?
                .trim()
                .parse()
                .map_err(|e| WorkloadError::Parse(format!("kbps: {e}")))?;
            samples.push((t, kbps * 1e3));
        }
        BandwidthTrace::new(samples)
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map(|&(t, _)| t).unwrap_or(0.0)
    }

    /// Value at `t` with the trace replayed cyclically and shifted by
    /// `phase_s`, so clients sharing one trace see different conditions.
    pub fn at_looped(&self, t: f64, phase_s: f64) -> f64 {
        let span = self.duration() - self.samples[0].0;
        let shifted = if span > 0.0 {
            self.samples[0].0 + (t + phase_s - self.samples[0].0).rem_euclid(span)
        } else {
            self.samples[0].0
        };
        trace_bandwidth_at(self, shifted).expect("looped time is within the trace")
    }
}

/// Value of the latest sample with time <= `t` (step interpolation).
pub fn trace_bandwidth_at(trace: &BandwidthTrace, t: f64) -> Result<f64, WorkloadError> {
    let first = trace.samples[0].0;
    if t < first {
        return Err(WorkloadError::BeforeTraceStart { t, first });
    }
    let idx = trace.samples.partition_point(|&(st, _)| st <= t);
    Ok(trace.samples[idx - 1].1)
}

/// Peer arrival/departure plan: `initial_peers` present from the start, one
/// more joining every `join_interval_s`, plus explicit leave events.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChurnSchedule {
    pub initial_peers: usize,
    pub join_interval_s: f64,
    /// (peer ordinal, leave time in seconds)
    pub leave_events: Vec<(usize, f64)>,
}

impl ChurnSchedule {
    /// [join, leave) windows for `n` peers in ordinal order.
    pub fn activation_windows(&self, n: usize) -> Vec<(f64, Option<f64>)> {
        (0..n)
            .map(|i| {
                let join = if i < self.initial_peers {
                    0.0
                } else {
                    (i - self.initial_peers + 1) as f64 * self.join_interval_s
                };
                let leave = self
                    .leave_events
                    .iter()
                    .find(|(p, _)| *p == i)
                    .map(|&(_, t)| t);
                (join, leave)
            })
            .collect()
    }
}

/// One request-emitting client (a DASH player behind an edge, or a peer node).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: String,
    pub edge_id: String,
    pub join_s: f64,
    pub leave_s: Option<f64>,
}

/// One content (live channel or VoD title).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentSpec {
    pub content_id: String,
    pub kind: ServiceClass,
    pub n_segments: u64,
}

/// Everything [`generate_requests`] needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub clients: Vec<ClientSpec>,
    pub contents: Vec<ContentSpec>,
    pub zipf_alpha: f64,
    pub slots: u64,
    pub slot_duration_s: f64,
    pub segment_duration_s: f64,
    /// Default 2 s for live, 4 s for VoD.
    pub live_deadline_s: f64,
    pub vod_deadline_s: f64,
}

/// Deterministic request stream for a scenario: content fixed per client
/// session by one Zipf draw, live indices advancing with the wall clock, VoD
/// indices sequential (at most one per slot). Events are ordered by
/// (slot, client id).
pub fn generate_requests(spec: &WorkloadSpec, seed: u64) -> Result<Vec<RequestEvent>, WorkloadError> {
    let probs = zipf_probabilities(spec.contents.len(), spec.zipf_alpha)?;
    let mut clients: Vec<&ClientSpec> = spec.clients.iter().collect();
    clients.sort_by(|a, b| a.id.cmp(&b.id));

    let mut events = Vec::new();
    for (ci, client) in clients.iter().enumerate() {
        let mut content_rng = rng::stream(seed, "workload/content", ci as u64);
        let content = &spec.contents[sample_index(&probs, &mut content_rng)];
        let deadline = match content.kind {
            ServiceClass::Live => spec.live_deadline_s,
            ServiceClass::Vod => spec.vod_deadline_s,
        };
        let mut vod_next: u64 = 0;
        let mut last_live: Option<u64> = None;
        for slot in 0..spec.slots {
            let t = slot as f64 * spec.slot_duration_s;
            if t < client.join_s || client.leave_s.map_or(false, |l| t >= l) {
                continue;
            }
            let index = match content.kind {
                ServiceClass::Live => {
                    let idx = (t / spec.segment_duration_s).floor() as u64;
                    if last_live == Some(idx) || idx >= content.n_segments {
                        continue;
                    }
                    last_live = Some(idx);
                    idx
                }
                ServiceClass::Vod => {
                    if vod_next >= content.n_segments {
                        continue;
                    }
                    let idx = vod_next;
                    vod_next += 1;
                    idx
                }
            };
            events.push(RequestEvent {
                client_id: client.id.clone(),
                edge_id: client.edge_id.clone(),
                segment: SegmentId::new(&content.content_id, index),
                requested_rep: 0,
                arrival_slot: slot,
                deadline_s: deadline,
                service_class: content.kind,
            });
        }
    }
    events.sort_by(|a, b| {
        (a.arrival_slot, &a.client_id, &a.segment).cmp(&(b.arrival_slot, &b.client_id, &b.segment))
    });
    Ok(events)
}
