//! The time-slotted simulation loop: request collection and dedup, decision
//! dispatch, resource ledgering, delivery and buffer dynamics, metrics.
//!
//! Each slot has a collecting phase (arrivals are paced, ABR-rated, grouped
//! into (region, content, rep) queues, and deduplicated against in-flight
//! fetches and one another) and a serving phase (the configured policy
//! decides per queue or request, reservations commit serially in
//! deterministic order against per-link residuals, deliveries get
//! scheduled). Completed deliveries settle client buffers, update LRU
//! caches, and release their link leases.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{cache_insert, CacheState, Ladder, SegmentId};
use crate::costs::{monetary_cost, NodeClass, PriceBook, SrProfile, TranscodeProfile};
use crate::heuristics::{
    efg1, efg2_tick, gba, leader_allocate, sarena_autoscale, sarena_schedule, sfg_allocate,
    EdgeScale, FlowDemand, MissCounters, ScheduleOutcome, ServiceQueue,
};
use crate::learning::{
    penalize, refresh_from_monitoring, som_decide, som_update, Neuron, SomConfig,
};
use crate::policy::{
    action_latency, action_legs, feasible_actions, objective, oracle_joint, oracle_single,
    transform_cost, transform_executor, validate_action, Action, ActionTree, DecisionContext,
    Normalizers, ObjectiveWeights, PolicyError, Transform,
};
use crate::topology::{
    select_path, NodeKind, PathMetric, ReservationLedger, Topology, TopologyError,
};
use crate::workload::{BandwidthTrace, ClientSpec, ContentSpec, RequestEvent, ServiceClass};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
    #[error("topology error: {0}")]
    Topology(#[from] TopologyError),
    #[error("link {link} over-committed: {used} bps reserved against {capacity} bps")]
    Conservation {
        link: String,
        used: f64,
        capacity: f64,
    },
    #[error("decision violates a policy invariant: {0}")]
    InvariantBreach(String),
    #[error("per-peer power went negative on {0}")]
    PowerBreach(String),
}

/// Which decision procedure drives the serving phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decider {
    /// Slot-batch joint oracle per edge, chunked under the search limit.
    JointPerEdge,
    /// Per-request exact scan (the edge heuristic of the collaborative tree).
    SingleScan,
    /// Per-request greedy node/action scan.
    Greedy,
    /// Per-request fine-grained cascade.
    FineGrained,
    /// Fine-grained cascade plus miss-triggered fairness reallocation.
    FineGrainedRealloc,
    /// SOM agent per (region, content, rep) queue.
    SomAgent,
    /// Per-service queues with deadline gating and auto-scaling.
    SarenaQueues,
}

/// A named policy preset: tree, variant restriction, default weights, and
/// the decision procedure.
#[derive(Debug, Clone)]
pub struct PolicyPreset {
    pub name: String,
    pub tree: ActionTree,
    pub weights: ObjectiveWeights,
    pub allowed_variants: Option<BTreeSet<u8>>,
    pub decider: Decider,
}

/// Every selectable preset name.
pub const PRESET_NAMES: [&str; 16] = [
    "eshas",
    "csdn",
    "sarena",
    "leader",
    "ararat-cg",
    "ararat-fg1",
    "ararat-fg2",
    "richter",
    "alive",
    "noh",
    "seh",
    "nth",
    "ect",
    "nsh",
    "necol",
    "decol",
];

/// Resolves a preset by CLI/scenario name.
pub fn preset(name: &str) -> Option<PolicyPreset> {
    let variants = |list: &[u8]| Some(list.iter().copied().collect::<BTreeSet<u8>>());
    let latcost = ObjectiveWeights::LatencyCost { beta: 0.5 };
    let (tree, weights, allowed_variants, decider) = match name {
        "eshas" => (
            ActionTree::EsHas,
            ObjectiveWeights::EsHas {
                a1: 1.0,
                a2: 0.0,
                a3: 0.0,
            },
            None,
            Decider::JointPerEdge,
        ),
        "csdn" => (
            ActionTree::Csdn,
            ObjectiveWeights::Csdn {
                alpha: 0.9,
                beta: 0.1,
            },
            None,
            Decider::JointPerEdge,
        ),
        "sarena" => (
            ActionTree::Sarena,
            ObjectiveWeights::LatencyOnly,
            None,
            Decider::SarenaQueues,
        ),
        "leader" => (
            ActionTree::Leader,
            ObjectiveWeights::LatencyOnly,
            None,
            Decider::SingleScan,
        ),
        "ararat-cg" => (ActionTree::Ararat, latcost, None, Decider::JointPerEdge),
        "ararat-fg1" => (ActionTree::Ararat, latcost, None, Decider::FineGrained),
        "ararat-fg2" => (
            ActionTree::Ararat,
            latcost,
            None,
            Decider::FineGrainedRealloc,
        ),
        "richter" => (
            ActionTree::Richter,
            ObjectiveWeights::LatencyOnly,
            None,
            Decider::SomAgent,
        ),
        "alive" => (ActionTree::Alive, latcost, None, Decider::Greedy),
        "noh" => (ActionTree::Alive, latcost, variants(&[7, 8]), Decider::Greedy),
        "seh" => (
            ActionTree::Alive,
            latcost,
            variants(&[1, 7, 8]),
            Decider::Greedy,
        ),
        "nth" => (
            ActionTree::Alive,
            latcost,
            variants(&[1, 4, 7, 8]),
            Decider::Greedy,
        ),
        "ect" => (
            ActionTree::Alive,
            latcost,
            variants(&[1, 4, 5, 6, 7, 8]),
            Decider::Greedy,
        ),
        "nsh" => (
            ActionTree::Alive,
            latcost,
            variants(&[1, 2, 4, 5, 6, 7, 8]),
            Decider::Greedy,
        ),
        "necol" => (
            ActionTree::Leader,
            ObjectiveWeights::LatencyOnly,
            variants(&[1, 2, 6, 7, 8]),
            Decider::SingleScan,
        ),
        "decol" => (
            ActionTree::Leader,
            ObjectiveWeights::LatencyOnly,
            None,
            Decider::SingleScan,
        ),
        _ => return None,
    };
    Some(PolicyPreset {
        name: name.to_string(),
        tree,
        weights,
        allowed_variants,
        decider,
    })
}

/// Engine tunables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub slot_duration_s: f64,
    pub slots: u64,
    /// Insert fetched-through segments into edge caches.
    pub cache_fill: bool,
    /// VoD clients stop issuing while their buffer exceeds this.
    pub buffer_watermark_s: f64,
    pub eec_watts_per_core: f64,
    pub joint_limit: u128,
    pub thr_comp: f64,
    pub thr_miss: u64,
    pub som: SomConfig,
    /// QoE threshold driving the auto-scaler.
    pub qoe_threshold: f64,
    /// Per-client phase step (seconds) into the shared bandwidth trace.
    pub trace_phase_step_s: f64,
    /// Apply the hop-weighted allocation on shared links.
    pub leader_allocation: bool,
    /// Replacement window m for the replacement-quality trees.
    pub replacement_window: usize,
    /// Ladder steps below a request eligible as super-resolution sources.
    pub sr_window: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            slot_duration_s: 0.5,
            slots: 120,
            cache_fill: true,
            buffer_watermark_s: 24.0,
            eec_watts_per_core: 10.0,
            joint_limit: crate::policy::DEFAULT_JOINT_LIMIT,
            thr_comp: 0.5,
            thr_miss: 100,
            som: SomConfig::default(),
            qoe_threshold: 4.0,
            trace_phase_step_s: 7.0,
            leader_allocation: false,
            replacement_window: 3,
            sr_window: 1,
        }
    }
}

/// Everything a run needs, already resolved from files.
#[derive(Debug, Clone)]
pub struct SimulationInput {
    pub topology: Topology,
    pub ladder: Ladder,
    pub contents: Vec<ContentSpec>,
    pub clients: Vec<ClientSpec>,
    pub requests: Vec<RequestEvent>,
    pub trace: BandwidthTrace,
    pub transcode: Arc<TranscodeProfile>,
    pub sr: Arc<SrProfile>,
    pub prices: PriceBook,
    pub preset: PolicyPreset,
    pub config: EngineConfig,
    /// (node, segment, rep) triples resident before the first slot.
    pub seeded_cache: Vec<(String, SegmentId, usize)>,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Client playback state
// ---------------------------------------------------------------------------

/// Buffer/ABR state of one client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: String,
    pub edge_id: String,
    pub buffer_s: f64,
    pub last_rep: Option<usize>,
    pub abr_thresholds: Vec<f64>,
    pub trace_phase_s: f64,
    pub join_s: f64,
    last_event_t: f64,
    in_stall: bool,
    pub stall_count: u64,
    pub stall_s: f64,
    pub delivered_bits: f64,
    pub delivered_count: u64,
    pub switch_count: u64,
    last_delivered_rep: Option<usize>,
}

impl ClientState {
    pub fn new(spec: &ClientSpec, ladder: &Ladder, phase: f64) -> Self {
        // Buffer breakpoints at (2k) segment durations, one per upward rung.
        let abr_thresholds = (1..ladder.len())
            .map(|k| 2.0 * k as f64 * ladder.segment_duration_s)
            .collect();
        Self {
            client_id: spec.id.clone(),
            edge_id: spec.edge_id.clone(),
            buffer_s: 0.0,
            last_rep: None,
            abr_thresholds,
            trace_phase_s: phase,
            join_s: spec.join_s,
            last_event_t: spec.join_s,
            in_stall: false,
            stall_count: 0,
            stall_s: 0.0,
            delivered_bits: 0.0,
            delivered_count: 0,
            switch_count: 0,
            last_delivered_rep: None,
        }
    }
}

/// Buffer-threshold ABR: the index equals the number of thresholds strictly
/// below the current buffer level, additionally capped at the highest rep
/// whose bitrate fits the measured throughput. A cold client starts at the
/// bottom rung.
pub fn abr_select(client: &ClientState, ladder: &Ladder, measured_throughput_bps: f64) -> usize {
    if client.last_rep.is_none() && client.buffer_s == 0.0 {
        return 0;
    }
    let by_buffer = client
        .abr_thresholds
        .iter()
        .filter(|&&t| t < client.buffer_s)
        .count();
    let by_throughput = ladder
        .representations
        .iter()
        .rev()
        .find(|r| r.bitrate_bps <= measured_throughput_bps)
        .map(|r| r.index)
        .unwrap_or(0);
    by_buffer.min(by_throughput)
}

/// Advances a client's buffer to `arrival_t`, accounting stalls, then adds
/// one segment of content. A rebuffering episode spans consecutive late
/// arrivals: the event counter bumps only when a stall begins from a
/// non-stalled state, and the episode ends at the first on-time arrival.
pub fn settle_delivery(client: &mut ClientState, segment_duration_s: f64, arrival_t: f64) {
    let arrival = arrival_t.max(client.last_event_t);
    let elapsed = arrival - client.last_event_t;
    if elapsed >= client.buffer_s {
        let gap = elapsed - client.buffer_s;
        client.buffer_s = 0.0;
        if gap > 0.0 {
            if !client.in_stall {
                client.stall_count += 1;
            }
            client.in_stall = true;
            client.stall_s += gap;
        } else {
            client.in_stall = false;
        }
    } else {
        client.buffer_s -= elapsed;
        client.in_stall = false;
    }
    client.buffer_s += segment_duration_s;
    client.last_event_t = arrival;
}

/// Fixed documented proxy for perceived quality on a 0–5 scale:
/// `5*(mean bitrate / top bitrate) - 0.1*switches_per_min
///  - 1.0*(stalls_per_min + 5*stall_fraction)`, clamped.
pub fn proxy_qoe(
    mean_bitrate_bps: f64,
    max_bitrate_bps: f64,
    switches: u64,
    stalls: u64,
    stall_s: f64,
    wall_s: f64,
) -> f64 {
    if wall_s <= 0.0 || max_bitrate_bps <= 0.0 || mean_bitrate_bps <= 0.0 {
        return 0.0;
    }
    let minutes = wall_s / 60.0;
    let score = 5.0 * (mean_bitrate_bps / max_bitrate_bps)
        - 0.1 * (switches as f64 / minutes)
        - 1.0 * ((stalls as f64 / minutes) + 5.0 * (stall_s / wall_s));
    score.clamp(0.0, 5.0)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Accumulated counters a run folds into a [`MetricsReport`].
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    pub served_requests: u64,
    pub held_requests: u64,
    pub deadline_misses: u64,
    pub infeasible_requests: u64,
    pub origin_served: u64,
    pub edge_transcoded: u64,
    pub peer_transformed: u64,
    pub origin_bits: f64,
    pub priced_bits: f64,
    pub edge_cpu_seconds: f64,
    pub latency_sum_s: f64,
    pub objective_sum: f64,
}

/// One line of `per_slot.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct PerSlotRow {
    pub slot: u64,
    pub served: u64,
    pub held: u64,
    pub origin_bits: f64,
}

/// One line of `per_client.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct PerClientRow {
    pub client_id: String,
    pub asb_mbps: f64,
    pub aqs: u64,
    pub ans: u64,
    pub asd_s: f64,
    pub proxy_qoe: f64,
}

/// The headline metrics of a run (`summary.json`). Deterministic for a
/// fixed (scenario, seed); wall-clock timings are reported separately.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub policy: String,
    pub seed: u64,
    pub slots: u64,
    pub served_requests: u64,
    pub held_requests: u64,
    pub deadline_misses: u64,
    pub infeasible_requests: u64,
    /// Mean delivered bitrate, Mbps.
    pub asb_mbps: f64,
    /// Mean per-client quality switches.
    pub aqs: f64,
    /// Mean per-client stall count.
    pub ans: f64,
    /// Mean per-client stall duration, seconds.
    pub asd_s: f64,
    /// Mean upstream serving latency, seconds.
    pub asl_s: f64,
    /// Fraction of served requests not touching the origin.
    pub chr: f64,
    pub origin_ratio: f64,
    /// Fraction of served requests transcoded at an edge.
    pub etr: f64,
    /// Fraction served through peer transcode or super-resolution.
    pub ptsr: f64,
    pub direct_ratio: f64,
    /// Origin backhaul, bits.
    pub btl_bits: f64,
    pub bandwidth_usd: f64,
    pub compute_usd: f64,
    pub ncv_usd: f64,
    /// Edge energy proxy, kWh.
    pub eec_kwh: f64,
    pub mean_proxy_qoe: f64,
    pub total_objective: f64,
    /// Policy total objective over the joint-oracle optimum, when computed.
    pub nov: Option<f64>,
}

// ---------------------------------------------------------------------------
// Slot-level network bookkeeping
// ---------------------------------------------------------------------------

fn canonical(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Maps node pairs onto physical links for one slot, so sequential decisions
/// deplete shared links consistently.
#[derive(Debug, Clone, Default)]
struct SlotNet {
    /// Canonical pair -> backbone link ids of its selected path.
    pair_links: BTreeMap<(String, String), Vec<String>>,
    /// Non-backbone cap for the pair (access trace, allocation overrides).
    pair_base: BTreeMap<(String, String), f64>,
    /// Residual capacity per link at this point of the slot.
    link_residual: BTreeMap<String, f64>,
    /// Reverse index: link -> pairs whose path crosses it.
    link_pairs: BTreeMap<String, Vec<(String, String)>>,
}

impl SlotNet {
    fn pair_bandwidth(&self, pair: &(String, String)) -> f64 {
        let base = self.pair_base.get(pair).copied().unwrap_or(f64::INFINITY);
        let backbone = self
            .pair_links
            .get(pair)
            .map(|links| {
                links
                    .iter()
                    .map(|l| self.link_residual.get(l).copied().unwrap_or(0.0))
                    .fold(f64::INFINITY, f64::min)
            })
            .unwrap_or(f64::INFINITY);
        let bw = base.min(backbone);
        if bw.is_finite() {
            bw
        } else {
            0.0
        }
    }

    fn refresh_pair(&self, ctx: &mut DecisionContext, pair: &(String, String)) {
        ctx.bandwidth
            .insert(pair.clone(), self.pair_bandwidth(pair));
    }

    /// Checks and applies an action's bandwidth demand against link
    /// residuals; returns the per-link reservations on success. Refreshes
    /// every affected pair's visible bandwidth.
    fn admit(
        &mut self,
        ctx: &mut DecisionContext,
        action: &Action,
        request: &RequestEvent,
    ) -> Option<Vec<(String, f64)>> {
        let mut per_link: BTreeMap<String, f64> = BTreeMap::new();
        for leg in action_legs(ctx, action, request) {
            let pair = canonical(&leg.from, &leg.to);
            let demand = ctx.ladder.bitrate(leg.rep_index);
            if let Some(links) = self.pair_links.get(&pair) {
                for link in links {
                    *per_link.entry(link.clone()).or_insert(0.0) += demand;
                }
            }
        }
        for (link, demand) in &per_link {
            let residual = self.link_residual.get(link).copied().unwrap_or(0.0);
            if residual + 1e-9 < *demand {
                return None;
            }
        }
        let mut touched: BTreeSet<(String, String)> = BTreeSet::new();
        for (link, demand) in &per_link {
            if let Some(r) = self.link_residual.get_mut(link) {
                *r = (*r - demand).max(0.0);
            }
            if let Some(pairs) = self.link_pairs.get(link) {
                touched.extend(pairs.iter().cloned());
            }
        }
        for pair in &touched {
            self.refresh_pair(ctx, pair);
        }
        Some(per_link.into_iter().collect())
    }
}

/// Deducts an action's compute and power demand from a snapshot.
fn deplete_compute(ctx: &mut DecisionContext, action: &Action, request: &RequestEvent) {
    if let Some(executor) = transform_executor(ctx, action, request) {
        if let Ok(Some(tc)) = transform_cost(ctx, action, request) {
            if let Some(cpu) = ctx.cpu_remaining.get_mut(&executor) {
                *cpu = (*cpu - tc.cpu_s).max(0.0);
            }
            if ctx.kind(&executor).map(|k| k.is_peer()) == Some(true) {
                if let Some(p) = ctx.power_remaining.get_mut(&executor) {
                    *p = (*p - tc.power_mah).max(0.0);
                }
            }
        }
    }
}

/// Pair-level depletion for working copies outside the engine (heuristic
/// lookahead, benchmark comparisons). The engine itself depletes per link.
pub fn deplete(ctx: &mut DecisionContext, action: &Action, request: &RequestEvent) {
    for leg in action_legs(ctx, action, request) {
        let demand = ctx.ladder.bitrate(leg.rep_index);
        let key = if ctx
            .bandwidth
            .contains_key(&(leg.from.clone(), leg.to.clone()))
        {
            (leg.from.clone(), leg.to.clone())
        } else {
            (leg.to.clone(), leg.from.clone())
        };
        if let Some(bw) = ctx.bandwidth.get_mut(&key) {
            *bw = (*bw - demand).max(0.0);
        }
    }
    deplete_compute(ctx, action, request);
}

// ---------------------------------------------------------------------------
// The world
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct InFlightDelivery {
    /// Waiter client ids with their individual arrival times.
    arrivals: Vec<(String, f64)>,
    rep: usize,
    segment: SegmentId,
    serving_edge: String,
    /// What the serving edge received upstream, for fetched-through caching.
    edge_insert: Option<usize>,
    /// Peer deliveries populate the requester caches.
    peer_insert: bool,
    otf_key: Option<(String, SegmentId, usize)>,
    upstream_done_t: f64,
    upstream_latency_s: f64,
    origin_sourced: bool,
    edge_transformed: bool,
    peer_transformed: bool,
}

enum Decision {
    Serve {
        request: RequestEvent,
        action: Action,
        latency_s: f64,
        objective: f64,
        /// Per-link reservations made by the admission step.
        reserved: Vec<(String, f64)>,
        /// Identical requests riding on this fetch.
        waiters: Vec<RequestEvent>,
    },
    Hold,
    Infeasible {
        request: RequestEvent,
    },
}

/// The simulation state advanced by [`Simulation::run_slot`].
pub struct Simulation {
    input: SimulationInput,
    clients: BTreeMap<String, ClientState>,
    caches: BTreeMap<String, CacheState>,
    peer_power: BTreeMap<String, f64>,
    ledger: ReservationLedger,
    pending: BTreeMap<String, VecDeque<RequestEvent>>,
    on_the_fly: BTreeSet<(String, SegmentId, usize)>,
    in_flight: Vec<InFlightDelivery>,
    slot: u64,
    acc: MetricsAccumulator,
    per_slot: Vec<PerSlotRow>,
    som_agents: BTreeMap<String, Vec<Neuron>>,
    miss_counters: MissCounters,
    edge_scales: BTreeMap<String, (u32, EdgeScale)>,
    bw_overrides: BTreeMap<(String, String), f64>,
    origin_catalog: BTreeSet<(SegmentId, usize)>,
    decision_seconds: f64,
}

/// Output bundle of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub per_client: Vec<PerClientRow>,
    pub per_slot: Vec<PerSlotRow>,
    /// Wall-clock seconds spent inside decision procedures (not part of the
    /// deterministic report).
    pub decision_seconds: f64,
}

impl Simulation {
    pub fn new(input: SimulationInput) -> Self {
        let mut clients = BTreeMap::new();
        let mut pending: BTreeMap<String, VecDeque<RequestEvent>> = BTreeMap::new();
        for (i, spec) in input.clients.iter().enumerate() {
            let phase = i as f64 * input.config.trace_phase_step_s;
            clients.insert(spec.id.clone(), ClientState::new(spec, &input.ladder, phase));
            pending.insert(spec.id.clone(), VecDeque::new());
        }
        for req in &input.requests {
            pending
                .entry(req.client_id.clone())
                .or_default()
                .push_back(req.clone());
        }
        let mut caches = BTreeMap::new();
        for node in input.topology.nodes() {
            if node.cache_capacity > 0 {
                caches.insert(node.id.clone(), CacheState::new(&node.id, node.cache_capacity));
            }
        }
        // The origin holds every representation of every requested segment.
        let mut origin_catalog = BTreeSet::new();
        for req in &input.requests {
            for rep in 0..input.ladder.len() {
                origin_catalog.insert((req.segment.clone(), rep));
            }
        }
        let mut sim = Simulation {
            miss_counters: MissCounters::new(input.config.thr_miss),
            clients,
            caches,
            peer_power: input
                .topology
                .nodes()
                .filter(|n| n.kind.is_peer())
                .map(|n| (n.id.clone(), n.power_capacity))
                .collect(),
            ledger: ReservationLedger::new(),
            pending,
            on_the_fly: BTreeSet::new(),
            in_flight: Vec::new(),
            slot: 0,
            acc: MetricsAccumulator::default(),
            per_slot: Vec::new(),
            som_agents: BTreeMap::new(),
            edge_scales: input
                .topology
                .nodes()
                .filter(|n| n.kind == NodeKind::Edge)
                .map(|n| {
                    (
                        n.id.clone(),
                        (
                            4,
                            EdgeScale {
                                cores: 4,
                                ram_gb: 6,
                                max_cores: 10,
                                max_ram_gb: 16,
                            },
                        ),
                    )
                })
                .collect(),
            bw_overrides: BTreeMap::new(),
            origin_catalog,
            decision_seconds: 0.0,
            input,
        };
        for (node, segment, rep) in sim.input.seeded_cache.clone() {
            if let Some(cache) = sim.caches.get_mut(&node) {
                cache_insert(cache, &segment, rep);
            }
        }
        sim
    }

    pub fn slot_index(&self) -> u64 {
        self.slot
    }

    /// The decision snapshot as of the current slot, with seeded caches and
    /// topology residuals applied. The compare command builds benchmark
    /// instances from it.
    pub fn context_now(&self) -> DecisionContext {
        self.build_context().0
    }

    fn now(&self) -> f64 {
        self.slot as f64 * self.input.config.slot_duration_s
    }

    fn access_bw(&self, client_id: &str, t: f64) -> f64 {
        let phase = self
            .clients
            .get(client_id)
            .map(|c| c.trace_phase_s)
            .unwrap_or(0.0);
        self.input.trace.at_looped(t, phase)
    }

    fn active_ids(&self, t: f64, peers: bool) -> Vec<String> {
        self.input
            .topology
            .nodes()
            .filter(|n| n.kind.is_peer() == peers)
            .filter(|n| n.join_time <= t && n.leave_time.map_or(true, |l| t < l))
            .map(|n| n.id.clone())
            .collect()
    }

    /// Builds the immutable decision snapshot plus the pair-to-link map for
    /// the current slot.
    fn build_context(&self) -> (DecisionContext, SlotNet) {
        let t = self.now();
        let topo = &self.input.topology;
        let servers = self.active_ids(t, false);
        let peers = self.active_ids(t, true);
        let p2p = self.input.preset.tree.is_p2p();

        let mut node_kinds = BTreeMap::new();
        let mut node_classes = BTreeMap::new();
        for id in servers.iter().chain(peers.iter()) {
            let spec = topo.node(id).expect("active node exists");
            node_kinds.insert(id.clone(), spec.kind);
            let class = match spec.kind {
                NodeKind::PeerSeeder | NodeKind::PeerLeecher => {
                    // Even byte-sum peers are PCs, odd are mobiles: a stable
                    // deterministic split of the population.
                    if id.bytes().map(u64::from).sum::<u64>() % 2 == 0 {
                        NodeClass::PeerPc
                    } else {
                        NodeClass::PeerMobile
                    }
                }
                _ => NodeClass::Edge,
            };
            node_classes.insert(id.clone(), class);
        }

        let mut availability: BTreeMap<String, BTreeSet<(SegmentId, usize)>> = BTreeMap::new();
        for (node, cache) in &self.caches {
            if !node_kinds.contains_key(node) {
                continue;
            }
            let set = availability.entry(node.clone()).or_default();
            for entry in cache.entries() {
                set.insert(entry.clone());
            }
        }
        availability.insert(topo.origin().id.clone(), self.origin_catalog.clone());

        let mut net = SlotNet {
            link_residual: topo
                .links()
                .map(|l| {
                    (
                        l.id.clone(),
                        (l.capacity_bps - self.ledger.reserved_on(&l.id)).max(0.0),
                    )
                })
                .collect(),
            ..SlotNet::default()
        };

        // Server-to-server pairs ride the selected backbone path.
        let mut leader_users: BTreeMap<String, Vec<(String, String, u32)>> = BTreeMap::new();
        for (i, a) in servers.iter().enumerate() {
            for b in servers.iter().skip(i + 1) {
                let Ok(path) = select_path(topo, a, b, PathMetric::MaxBwPerHop, &self.ledger)
                else {
                    continue;
                };
                let pair = canonical(a, b);
                if let Some(cap) = self
                    .bw_overrides
                    .get(&(a.clone(), b.clone()))
                    .or_else(|| self.bw_overrides.get(&(b.clone(), a.clone())))
                {
                    net.pair_base.insert(pair.clone(), *cap);
                }
                if self.input.config.leader_allocation {
                    let a_is_edge = node_kinds.get(a) == Some(&NodeKind::Edge);
                    let b_is_edge = node_kinds.get(b) == Some(&NodeKind::Edge);
                    if a_is_edge != b_is_edge {
                        let (edge, server) = if a_is_edge { (a, b) } else { (b, a) };
                        for link in &path.links {
                            leader_users.entry(link.clone()).or_default().push((
                                edge.clone(),
                                server.clone(),
                                path.hop_count() as u32,
                            ));
                        }
                    }
                }
                for link in &path.links {
                    net.link_pairs
                        .entry(link.clone())
                        .or_default()
                        .push(pair.clone());
                }
                net.pair_links.insert(pair, path.links);
            }
        }
        if self.input.config.leader_allocation {
            for (link, users) in leader_users {
                if users.len() < 2 {
                    continue;
                }
                let residual = net.link_residual.get(&link).copied().unwrap_or(0.0);
                let shares = leader_allocate(residual, &users);
                for ((edge, server, _), share) in users.iter().zip(shares) {
                    let pair = canonical(edge, server);
                    let entry = net.pair_base.entry(pair).or_insert(share);
                    *entry = f64::min(*entry, share);
                }
            }
        }

        // Access and peer-to-peer pairs: dedicated trace-driven capacity; a
        // server-to-peer pair also rides the backbone toward the region edge.
        if p2p {
            for peer in &peers {
                let access = self.access_bw(peer, t);
                let region = self.clients.get(peer).map(|c| c.edge_id.clone());
                for server in &servers {
                    let pair = canonical(server, peer);
                    net.pair_base.insert(pair.clone(), access);
                    if let Some(region) = &region {
                        if server != region {
                            if let Some(links) =
                                net.pair_links.get(&canonical(server, region)).cloned()
                            {
                                for link in &links {
                                    net.link_pairs
                                        .entry(link.clone())
                                        .or_default()
                                        .push(pair.clone());
                                }
                                net.pair_links.insert(pair, links);
                            }
                        }
                    }
                }
                for other in &peers {
                    if other != peer {
                        let pair = canonical(other, peer);
                        let cap = self.access_bw(peer, t).min(self.access_bw(other, t));
                        net.pair_base.insert(pair, cap);
                    }
                }
            }
        }

        let mut bandwidth = BTreeMap::new();
        let mut pairs: BTreeSet<(String, String)> = net.pair_links.keys().cloned().collect();
        pairs.extend(net.pair_base.keys().cloned());
        for pair in pairs {
            bandwidth.insert(pair.clone(), net.pair_bandwidth(&pair));
        }

        let mut cpu_remaining = BTreeMap::new();
        let mut cpu_capacity = BTreeMap::new();
        for id in servers.iter().chain(peers.iter()) {
            let spec = topo.node(id).expect("active node");
            let mut budget = spec.cpu_capacity;
            if spec.kind == NodeKind::Edge {
                if let Some((base, scale)) = self.edge_scales.get(id) {
                    budget *= f64::from(scale.cores) / f64::from(*base);
                }
            }
            cpu_remaining.insert(id.clone(), budget);
            cpu_capacity.insert(id.clone(), budget);
        }

        let peer_regions = peers
            .iter()
            .filter_map(|p| self.clients.get(p).map(|c| (p.clone(), c.edge_id.clone())))
            .collect();

        let ctx = DecisionContext {
            ladder: self.input.ladder.clone(),
            node_kinds,
            node_classes,
            peer_regions,
            availability,
            bandwidth,
            cpu_remaining,
            cpu_capacity,
            power_remaining: self.peer_power.clone(),
            weights: self.input.preset.weights,
            replacement_window: self.input.config.replacement_window,
            sr_window: self.input.config.sr_window,
            thr_comp: self.input.config.thr_comp,
            normalizers: None,
            transcode: self.input.transcode.clone(),
            sr: self.input.sr.clone(),
            prices: self.input.prices,
            allowed_variants: self.input.preset.allowed_variants.clone(),
        };
        (ctx, net)
    }

    /// Positive per-slot normalizers: the sums of each request's worst
    /// feasible latency and cost. Every normalized term stays within [0, 1]
    /// and the common scaling leaves argmins untouched.
    fn slot_normalizers(
        &self,
        ctx: &DecisionContext,
        batch: &[RequestEvent],
    ) -> Result<Normalizers, PolicyError> {
        let mut lat = 0.0;
        let mut cost = 0.0;
        for req in batch {
            let mut max_lat: f64 = 0.0;
            let mut max_cost: f64 = 0.0;
            for action in feasible_actions(ctx, req, self.input.preset.tree) {
                max_lat = max_lat.max(action_latency(ctx, &action, req)?);
                max_cost = max_cost.max(crate::policy::action_cost(ctx, &action, req)?);
            }
            lat += max_lat;
            cost += max_cost;
        }
        Ok(Normalizers {
            latency_s: if lat > 0.0 { lat } else { 1.0 },
            cost_usd: if cost > 0.0 { cost } else { 1.0 },
        })
    }

    /// Runs every slot to completion and finalizes the report.
    pub fn run_to_completion(mut self) -> Result<RunOutput, EngineError> {
        for _ in 0..self.input.config.slots {
            self.run_slot()?;
        }
        self.process_completions(f64::INFINITY);
        Ok(self.finalize())
    }

    /// One collecting + serving cycle.
    pub fn run_slot(&mut self) -> Result<(), EngineError> {
        let now = self.now();

        // Settle deliveries due before this slot and expire their leases.
        self.process_completions(now);
        self.ledger.release_expired(now);
        self.assert_conservation()?;

        // Collecting phase: pace out pending requests, rate them via ABR.
        let mut arrivals: Vec<RequestEvent> = Vec::new();
        let client_ids: Vec<String> = self.clients.keys().cloned().collect();
        for id in client_ids {
            let Some(queue) = self.pending.get(&id) else { continue };
            let Some(front) = queue.front() else { continue };
            if front.arrival_slot > self.slot {
                continue;
            }
            let is_vod = front.service_class == ServiceClass::Vod;
            if is_vod && self.clients[&id].buffer_s > self.input.config.buffer_watermark_s {
                continue;
            }
            let mut req = self
                .pending
                .get_mut(&id)
                .and_then(|q| q.pop_front())
                .expect("front checked");
            let throughput = self.access_bw(&id, now);
            req.requested_rep = abr_select(&self.clients[&id], &self.input.ladder, throughput);
            self.clients.get_mut(&id).unwrap().last_rep = Some(req.requested_rep);
            arrivals.push(req);
        }
        arrivals.sort_by(|a, b| {
            (&a.edge_id, &a.segment, a.requested_rep, &a.client_id).cmp(&(
                &b.edge_id,
                &b.segment,
                b.requested_rep,
                &b.client_id,
            ))
        });

        // Dedup: identical requests ride one fetch. Requests matching an
        // in-flight fetch attach to it immediately; identical arrivals in
        // this slot collapse onto one representative, except for the SOM
        // agent, whose queues distribute identical requests across peers.
        let collapse = self.input.preset.decider != Decider::SomAgent;
        let mut batch: Vec<RequestEvent> = Vec::new();
        let mut same_slot: BTreeMap<(String, SegmentId, usize), Vec<RequestEvent>> =
            BTreeMap::new();
        let mut held = 0u64;
        for req in arrivals {
            let key = (req.edge_id.clone(), req.segment.clone(), req.requested_rep);
            if self.on_the_fly.contains(&key) {
                let lm = self.last_mile_for(&req);
                if let Some(fl) = self
                    .in_flight
                    .iter_mut()
                    .find(|f| f.otf_key.as_ref() == Some(&key))
                {
                    let arrival = fl.upstream_done_t + lm;
                    fl.arrivals.push((req.client_id.clone(), arrival));
                    held += 1;
                    self.acc.held_requests += 1;
                    self.acc.served_requests += 1;
                    self.acc.latency_sum_s += fl.upstream_latency_s;
                    if fl.origin_sourced {
                        self.acc.origin_served += 1;
                    }
                    if fl.edge_transformed {
                        self.acc.edge_transcoded += 1;
                    }
                    if fl.peer_transformed {
                        self.acc.peer_transformed += 1;
                    }
                    continue;
                }
            }
            if collapse {
                if let Some(waiters) = same_slot.get_mut(&key) {
                    waiters.push(req);
                    continue;
                }
                same_slot.insert(key, Vec::new());
            }
            batch.push(req);
        }

        // Serving phase.
        let decide_start = Instant::now();
        let (decisions, ctx) = self.decide_batch(&batch, &mut same_slot)?;
        self.decision_seconds += decide_start.elapsed().as_secs_f64();

        let origin_id = self.input.topology.origin().id.clone();
        let mut slot_served = 0u64;
        let mut slot_origin_bits = 0.0;
        for decided in decisions {
            match decided {
                Decision::Serve {
                    request,
                    action,
                    latency_s,
                    objective: obj,
                    reserved,
                    waiters,
                } => {
                    let extra = waiters.len() as u64;
                    self.commit_decision(
                        &request, &action, &ctx, latency_s, obj, now, reserved, waiters,
                    )?;
                    slot_served += 1 + extra;
                    held += extra;
                    if action.source_node == origin_id {
                        slot_origin_bits += self.input.ladder.segment_bits(action.source_rep);
                    }
                }
                Decision::Hold => {
                    held += 1;
                    self.acc.held_requests += 1;
                }
                Decision::Infeasible { request } => {
                    if request.service_class == ServiceClass::Live {
                        self.acc.deadline_misses += 1;
                    }
                    self.acc.infeasible_requests += 1;
                }
            }
        }

        self.assert_conservation()?;
        self.per_slot.push(PerSlotRow {
            slot: self.slot,
            served: slot_served,
            held,
            origin_bits: slot_origin_bits,
        });
        self.slot += 1;
        Ok(())
    }

    fn last_mile_for(&self, req: &RequestEvent) -> f64 {
        if self.input.preset.tree.is_p2p() {
            // P2P serving latency already ends at the requesting peer.
            0.0
        } else {
            let bw = self.access_bw(&req.client_id, self.now()).max(1.0);
            self.input.ladder.segment_bits(req.requested_rep) / bw
        }
    }

    fn assert_conservation(&self) -> Result<(), EngineError> {
        for link in self.input.topology.links() {
            let used = self.ledger.reserved_on(&link.id);
            if used > link.capacity_bps * (1.0 + 1e-9) {
                return Err(EngineError::Conservation {
                    link: link.id.clone(),
                    used,
                    capacity: link.capacity_bps,
                });
            }
        }
        for (peer, power) in &self.peer_power {
            if *power < -1e-9 {
                return Err(EngineError::PowerBreach(peer.clone()));
            }
        }
        Ok(())
    }

    /// Test hook: force an over-commitment so the conservation assertion in
    /// the next slot aborts the run.
    #[doc(hidden)]
    pub fn inject_overcommit(&mut self) {
        if let Some(link) = self.input.topology.links().next() {
            self.ledger
                .reserve(&link.id, link.capacity_bps * 2.0, f64::INFINITY);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn commit_decision(
        &mut self,
        request: &RequestEvent,
        action: &Action,
        ctx: &DecisionContext,
        latency_s: f64,
        obj: f64,
        now: f64,
        reserved: Vec<(String, f64)>,
        waiters: Vec<RequestEvent>,
    ) -> Result<(), EngineError> {
        if !validate_action(ctx, action, request) {
            return Err(EngineError::InvariantBreach(format!(
                "{action:?} for {request:?}"
            )));
        }
        let upstream_done = now + latency_s;
        for (link, demand) in &reserved {
            self.ledger.reserve(link, *demand, upstream_done);
        }
        for leg in action_legs(ctx, action, request) {
            if ctx.kind(&leg.from) == Some(NodeKind::Origin) {
                self.acc.origin_bits += self.input.ladder.segment_bits(leg.rep_index);
            }
            if matches!(
                ctx.kind(&leg.from),
                Some(NodeKind::Origin) | Some(NodeKind::Cdn) | Some(NodeKind::Edge)
            ) {
                self.acc.priced_bits += self.input.ladder.segment_bits(leg.rep_index);
            }
        }

        // Spend compute and battery.
        let mut edge_transformed = false;
        let mut peer_transformed = false;
        if let Some(executor) = transform_executor(ctx, action, request) {
            let tc = transform_cost(ctx, action, request)?.expect("transform present");
            if ctx.kind(&executor).map(|k| k.is_peer()) == Some(true) {
                let power = self.peer_power.entry(executor.clone()).or_insert(0.0);
                *power -= tc.power_mah;
                if *power < -1e-9 {
                    return Err(EngineError::PowerBreach(executor));
                }
                peer_transformed = true;
            } else {
                self.acc.edge_cpu_seconds += tc.cpu_s;
                edge_transformed = true;
            }
        }

        let origin_sourced = ctx.kind(&action.source_node) == Some(NodeKind::Origin);
        let n_served = 1 + waiters.len() as u64;
        self.acc.latency_sum_s += latency_s * n_served as f64;
        self.acc.objective_sum += obj;
        self.acc.served_requests += n_served;
        self.acc.held_requests += waiters.len() as u64;
        if origin_sourced {
            self.acc.origin_served += n_served;
        }
        if edge_transformed {
            self.acc.edge_transcoded += n_served;
        }
        if peer_transformed {
            self.acc.peer_transformed += n_served;
        }

        // Register the fetch for dedup when it transits the server tier.
        let otf_key = if ctx.kind(&action.source_node).map(|k| k.is_server()) == Some(true) {
            let key = (
                request.edge_id.clone(),
                request.segment.clone(),
                request.requested_rep,
            );
            self.on_the_fly.insert(key.clone());
            Some(key)
        } else {
            None
        };

        // What the serving edge received upstream, for fetched-through LRU.
        let edge_insert = if self.input.config.cache_fill
            && action.source_node != request.edge_id
            && ctx.kind(&action.source_node).map(|k| k.is_server()) == Some(true)
            && matches!(action.transform, Transform::None | Transform::TrAtEdge)
        {
            Some(action.source_rep)
        } else {
            None
        };

        let mut arrivals = vec![(
            request.client_id.clone(),
            upstream_done + self.last_mile_for(request),
        )];
        for waiter in &waiters {
            arrivals.push((
                waiter.client_id.clone(),
                upstream_done + self.last_mile_for(waiter),
            ));
        }
        self.in_flight.push(InFlightDelivery {
            arrivals,
            rep: request.requested_rep,
            segment: request.segment.clone(),
            serving_edge: request.edge_id.clone(),
            edge_insert,
            peer_insert: self.input.preset.tree.is_p2p(),
            otf_key,
            upstream_done_t: upstream_done,
            upstream_latency_s: latency_s,
            origin_sourced,
            edge_transformed,
            peer_transformed,
        });
        Ok(())
    }

    fn process_completions(&mut self, until: f64) {
        let mut due: Vec<InFlightDelivery> = Vec::new();
        let mut rest = Vec::new();
        for fl in self.in_flight.drain(..) {
            let latest = fl
                .arrivals
                .iter()
                .map(|(_, t)| *t)
                .fold(fl.upstream_done_t, f64::max);
            if latest <= until {
                due.push(fl);
            } else {
                rest.push(fl);
            }
        }
        self.in_flight = rest;
        // Settle in global arrival order for determinism.
        let mut events: Vec<(f64, String, usize)> = Vec::new();
        for (i, fl) in due.iter().enumerate() {
            for (client, t) in &fl.arrivals {
                events.push((*t, client.clone(), i));
            }
        }
        events.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite arrival times")
                .then_with(|| a.1.cmp(&b.1))
        });
        let seg_dur = self.input.ladder.segment_duration_s;
        for (t, client_id, idx) in events {
            let fl = &due[idx];
            if let Some(client) = self.clients.get_mut(&client_id) {
                settle_delivery(client, seg_dur, t);
                client.delivered_bits += self.input.ladder.segment_bits(fl.rep);
                client.delivered_count += 1;
                if let Some(prev) = client.last_delivered_rep {
                    if prev != fl.rep {
                        client.switch_count += 1;
                    }
                }
                client.last_delivered_rep = Some(fl.rep);
            }
            if fl.peer_insert {
                if let Some(cache) = self.caches.get_mut(&client_id) {
                    cache_insert(cache, &fl.segment, fl.rep);
                }
            }
        }
        for fl in &due {
            if let Some(rep) = fl.edge_insert {
                if let Some(cache) = self.caches.get_mut(&fl.serving_edge) {
                    cache_insert(cache, &fl.segment, rep);
                }
            }
            if let Some(key) = &fl.otf_key {
                self.on_the_fly.remove(key);
            }
        }
    }

    /// Dispatches the slot batch to the configured decision procedure.
    /// Admission depletes per-link residuals so later decisions in the slot
    /// see the consumed resources; the returned context's immutable parts
    /// serve the ledger-commit step.
    fn decide_batch(
        &mut self,
        batch: &[RequestEvent],
        same_slot: &mut BTreeMap<(String, SegmentId, usize), Vec<RequestEvent>>,
    ) -> Result<(Vec<Decision>, DecisionContext), EngineError> {
        let (mut ctx, mut net) = self.build_context();
        if batch.is_empty() {
            return Ok((Vec::new(), ctx));
        }
        ctx.normalizers = Some(self.slot_normalizers(&ctx, batch)?);
        let tree = self.input.preset.tree;
        let decider = self.input.preset.decider;
        let joint_limit = self.input.config.joint_limit;
        let thr_comp = self.input.config.thr_comp;
        let mut out = Vec::new();

        match decider {
            Decider::Greedy | Decider::SingleScan | Decider::FineGrained
            | Decider::FineGrainedRealloc => {
                let fine = matches!(
                    decider,
                    Decider::FineGrained | Decider::FineGrainedRealloc
                );
                let realloc = decider == Decider::FineGrainedRealloc;
                for request in batch {
                    if realloc {
                        self.record_bandwidth_misses(&ctx, request);
                    }
                    // Admission failure means the visible snapshot advanced;
                    // re-decide against the refreshed view until settled.
                    let mut settled = false;
                    for _ in 0..4 {
                        let decided = if fine {
                            efg1(&ctx, request, thr_comp)
                        } else if decider == Decider::SingleScan {
                            oracle_single(&ctx, request, tree)
                        } else {
                            gba(&ctx, request, tree).map(|(_, a, o)| (a, o))
                        };
                        match decided {
                            Ok((action, obj)) => {
                                if realloc {
                                    self.miss_counters.record_hit(
                                        &request.edge_id,
                                        &action.source_node,
                                        ctx.ladder.bitrate(action.source_rep),
                                    );
                                }
                                if serve_one(
                                    &mut ctx, &mut net, &mut out, same_slot, request, action, obj,
                                )? {
                                    settled = true;
                                    break;
                                }
                            }
                            Err(PolicyError::NoFeasibleAction) => break,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    if !settled {
                        out.push(Decision::Infeasible {
                            request: request.clone(),
                        });
                    }
                }
                if realloc {
                    self.run_reallocation(batch);
                }
            }
            Decider::JointPerEdge => {
                let mut by_edge: BTreeMap<String, Vec<RequestEvent>> = BTreeMap::new();
                for r in batch {
                    by_edge.entry(r.edge_id.clone()).or_default().push(r.clone());
                }
                for (_, group) in by_edge {
                    let mut chunk: Vec<RequestEvent> = Vec::new();
                    let mut space: u128 = 1;
                    for request in group {
                        let count = feasible_actions(&ctx, &request, tree).len().max(1) as u128;
                        if !chunk.is_empty() && space.saturating_mul(count) > joint_limit {
                            flush_chunk(
                                &mut chunk, &mut ctx, &mut net, &mut out, same_slot, tree,
                                joint_limit,
                            )?;
                            space = 1;
                        }
                        space = space.saturating_mul(count);
                        chunk.push(request);
                    }
                    flush_chunk(
                        &mut chunk, &mut ctx, &mut net, &mut out, same_slot, tree, joint_limit,
                    )?;
                }
            }
            Decider::SarenaQueues => {
                let mut queues: BTreeMap<String, Vec<RequestEvent>> = BTreeMap::new();
                for r in batch {
                    let label = format!(
                        "{:?}/{}/{}",
                        r.service_class, r.segment.content_id, r.requested_rep
                    );
                    queues.entry(label).or_default().push(r.clone());
                }
                let queues: Vec<ServiceQueue> = queues
                    .into_iter()
                    .map(|(label, requests)| ServiceQueue { label, requests })
                    .collect();
                let mut in_flight_keys: BTreeSet<(SegmentId, usize)> = self
                    .on_the_fly
                    .iter()
                    .map(|(_, seg, rep)| (seg.clone(), *rep))
                    .collect();
                let outcomes = sarena_schedule(queues, &ctx, &mut in_flight_keys)
                    .map_err(EngineError::from)?;
                for outcome in outcomes {
                    match outcome {
                        ScheduleOutcome::Serve {
                            request, action, ..
                        } => {
                            let obj = objective(&ctx, &action, &request)?;
                            if !serve_one(
                                &mut ctx, &mut net, &mut out, same_slot, &request, action, obj,
                            )? {
                                out.push(Decision::Infeasible { request });
                            }
                        }
                        ScheduleOutcome::Hold { .. } => out.push(Decision::Hold),
                        ScheduleOutcome::DeadlineMiss { request } => {
                            out.push(Decision::Infeasible { request })
                        }
                    }
                }
                self.autoscale_edges();
            }
            Decider::SomAgent => {
                let mut queues: BTreeMap<String, Vec<RequestEvent>> = BTreeMap::new();
                for r in batch {
                    let key =
                        format!("{}/{}/{}", r.edge_id, r.segment.content_id, r.requested_rep);
                    queues.entry(key).or_default().push(r.clone());
                }
                // Queues with more requests first.
                let mut ordered: Vec<(String, Vec<RequestEvent>)> = queues.into_iter().collect();
                ordered.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
                for (key, queue) in ordered {
                    self.som_queue(&mut ctx, &mut net, &key, queue, &mut out)?;
                }
            }
        }
        Ok((out, ctx))
    }

    fn record_bandwidth_misses(&mut self, ctx: &DecisionContext, request: &RequestEvent) {
        // Servers holding the requested rep whose pair bandwidth is too thin
        // count as bandwidth-induced misses toward reallocation triggers.
        let demand = ctx.ladder.bitrate(request.requested_rep);
        for (node, kind) in &ctx.node_kinds {
            if !kind.is_server() || node == &request.edge_id {
                continue;
            }
            let holds = ctx
                .availability
                .get(node)
                .map(|s| s.contains(&(request.segment.clone(), request.requested_rep)))
                .unwrap_or(false);
            if holds {
                let bw = ctx.bandwidth_between(node, &request.edge_id).unwrap_or(0.0);
                if bw < demand {
                    self.miss_counters.record_miss(&request.edge_id, node, demand);
                }
            }
        }
    }

    fn run_reallocation(&mut self, batch: &[RequestEvent]) {
        let mut edges: Vec<String> = batch.iter().map(|r| r.edge_id.clone()).collect();
        edges.sort();
        edges.dedup();
        let mut triggers = Vec::new();
        for edge in &edges {
            triggers.extend(efg2_tick(&mut self.miss_counters, edge));
        }
        if triggers.is_empty() {
            return;
        }
        // Build flow demands over the current selected paths and solve the
        // fairness program; allocations override pair bandwidth next slot.
        let mut demands: Vec<FlowDemand> = Vec::new();
        let mut caps: BTreeMap<String, f64> = BTreeMap::new();
        for trig in &triggers {
            let Ok(path) = select_path(
                &self.input.topology,
                &trig.edge_id,
                &trig.server_id,
                PathMetric::MaxBwPerHop,
                &self.ledger,
            ) else {
                continue;
            };
            for link in &path.links {
                let cap = self
                    .input
                    .topology
                    .link(link)
                    .map(|l| l.capacity_bps)
                    .unwrap_or(0.0);
                caps.insert(link.clone(), cap);
            }
            demands.push(FlowDemand {
                edge_id: trig.edge_id.clone(),
                server_id: trig.server_id.clone(),
                demand_bps: trig.demand_bps,
                path,
            });
        }
        let (_f, allocations) = sfg_allocate(&caps, &demands);
        for (demand, alloc) in demands.iter().zip(allocations) {
            self.bw_overrides
                .insert((demand.edge_id.clone(), demand.server_id.clone()), alloc);
        }
    }

    fn autoscale_edges(&mut self) {
        // Rolling per-edge QoE estimate from current client states.
        let wall = self.now().max(1.0);
        let max_bitrate = self.input.ladder.max_bitrate();
        let seg_dur = self.input.ladder.segment_duration_s;
        let threshold = self.input.config.qoe_threshold;
        let mut edge_qoe: BTreeMap<String, (f64, u32)> = BTreeMap::new();
        for client in self.clients.values() {
            if client.delivered_count == 0 {
                continue;
            }
            let mean_bitrate = client.delivered_bits / (client.delivered_count as f64 * seg_dur);
            let qoe = proxy_qoe(
                mean_bitrate,
                max_bitrate,
                client.switch_count,
                client.stall_count,
                client.stall_s,
                (wall - client.join_s).max(1.0),
            );
            let e = edge_qoe.entry(client.edge_id.clone()).or_insert((0.0, 0));
            e.0 += qoe;
            e.1 += 1;
        }
        for (edge, (sum, n)) in edge_qoe {
            if n == 0 {
                continue;
            }
            if let Some((_, scale)) = self.edge_scales.get_mut(&edge) {
                *scale = sarena_autoscale(*scale, sum / f64::from(n), threshold);
            }
        }
    }

    fn som_queue(
        &mut self,
        ctx: &mut DecisionContext,
        net: &mut SlotNet,
        key: &str,
        queue: Vec<RequestEvent>,
        out: &mut Vec<Decision>,
    ) -> Result<(), EngineError> {
        let tree = self.input.preset.tree;
        let som = self.input.config.som;
        let prototype = queue[0].clone();
        let feasible = feasible_actions(ctx, &prototype, tree);
        if feasible.is_empty() {
            for request in queue {
                out.push(Decision::Infeasible { request });
            }
            return Ok(());
        }
        // Per-queue latency normalizer: the worst feasible latency now.
        let mut max_lat: f64 = 0.0;
        let mut latencies: BTreeMap<(String, u8), f64> = BTreeMap::new();
        for action in &feasible {
            let lat = action_latency(ctx, action, &prototype)?;
            max_lat = max_lat.max(lat);
            latencies
                .entry((action.source_node.clone(), action.variant))
                .and_modify(|v| *v = v.min(lat))
                .or_insert(lat);
        }
        let norm = if max_lat > 0.0 { max_lat } else { 1.0 };

        // Create neurons for newly feasible pairs; refresh all from the
        // monitored estimates.
        let agent = self.som_agents.entry(key.to_string()).or_default();
        for ((node, variant), lat) in &latencies {
            if !agent
                .iter()
                .any(|n| &n.node_id == node && n.action_variant == *variant)
            {
                agent.push(Neuron::new(node, *variant, lat / norm));
            }
        }
        agent.sort_by(|a, b| (&a.node_id, a.action_variant).cmp(&(&b.node_id, b.action_variant)));
        let estimates: Vec<f64> = agent
            .iter()
            .map(|n| {
                latencies
                    .get(&(n.node_id.clone(), n.action_variant))
                    .map(|l| l / norm)
                    .unwrap_or(1.0)
            })
            .collect();
        refresh_from_monitoring(agent, &estimates, &som).expect("sigma > 0");

        let tuples = som_decide(&queue, agent, ctx, tree);
        let mut remaining: VecDeque<RequestEvent> = queue.into();
        for tuple in tuples {
            if remaining.is_empty() {
                break;
            }
            let neuron_idx = agent
                .iter()
                .position(|n| {
                    n.node_id == tuple.node_id && n.action_variant == tuple.action_variant
                })
                .expect("tuple comes from the agent");
            if tuple.violates {
                penalize(&mut agent[neuron_idx], som.penalty_scale);
                continue;
            }
            let action = tuple.action.expect("non-violating tuple has an action");
            let server_tier = ctx
                .kind(&action.source_node)
                .map(|k| k.is_server())
                .unwrap_or(false);
            if server_tier {
                // One upstream fetch fans out to the whole queue.
                let request = remaining.pop_front().expect("queue non-empty");
                let obj = objective(ctx, &action, &request)?;
                let latency_s = action_latency(ctx, &action, &request)?;
                let Some(reserved) = net.admit(ctx, &action, &request) else {
                    penalize(&mut agent[neuron_idx], som.penalty_scale);
                    remaining.push_front(request);
                    continue;
                };
                deplete_compute(ctx, &action, &request);
                som_update(
                    agent,
                    neuron_idx,
                    ((latency_s / norm).clamp(0.0, 1.0), 0.0),
                    &som,
                )
                .expect("valid bmu index");
                out.push(Decision::Serve {
                    request,
                    action: action.clone(),
                    latency_s,
                    objective: obj,
                    reserved,
                    waiters: remaining.drain(..).collect(),
                });
            } else {
                let mut executed = 0u64;
                while executed < tuple.max_requests {
                    let Some(request) = remaining.pop_front() else { break };
                    let obj = objective(ctx, &action, &request)?;
                    let latency_s = action_latency(ctx, &action, &request)?;
                    let Some(reserved) = net.admit(ctx, &action, &request) else {
                        remaining.push_front(request);
                        break;
                    };
                    deplete_compute(ctx, &action, &request);
                    som_update(
                        agent,
                        neuron_idx,
                        ((latency_s / norm).clamp(0.0, 1.0), 0.0),
                        &som,
                    )
                    .expect("valid bmu index");
                    out.push(Decision::Serve {
                        request,
                        action: action.clone(),
                        latency_s,
                        objective: obj,
                        reserved,
                        waiters: Vec::new(),
                    });
                    executed += 1;
                }
            }
        }
        for request in remaining {
            out.push(Decision::Infeasible { request });
        }
        Ok(())
    }

    fn finalize(mut self) -> RunOutput {
        let wall_s = self.input.config.slots as f64 * self.input.config.slot_duration_s;
        let max_bitrate = self.input.ladder.max_bitrate();
        let seg_dur = self.input.ladder.segment_duration_s;
        let mut per_client = Vec::new();
        let mut qoe_sum = 0.0;
        let mut asb_num = 0.0;
        let mut asb_den = 0u64;
        let mut aqs_sum = 0u64;
        let mut ans_sum = 0u64;
        let mut asd_sum = 0.0;
        for client in self.clients.values() {
            let mean_bitrate = if client.delivered_count > 0 {
                client.delivered_bits / (client.delivered_count as f64 * seg_dur)
            } else {
                0.0
            };
            let active_s = (wall_s - client.join_s).max(0.0);
            let qoe = proxy_qoe(
                mean_bitrate,
                max_bitrate,
                client.switch_count,
                client.stall_count,
                client.stall_s,
                active_s,
            );
            qoe_sum += qoe;
            asb_num += client.delivered_bits;
            asb_den += client.delivered_count;
            aqs_sum += client.switch_count;
            ans_sum += client.stall_count;
            asd_sum += client.stall_s;
            per_client.push(PerClientRow {
                client_id: client.client_id.clone(),
                asb_mbps: round6(mean_bitrate / 1e6),
                aqs: client.switch_count,
                ans: client.stall_count,
                asd_s: round6(client.stall_s),
                proxy_qoe: round6(qoe),
            });
        }
        let n_clients = self.clients.len().max(1) as f64;
        let served = self.acc.served_requests.max(1) as f64;
        let money = monetary_cost(
            self.acc.priced_bits,
            self.acc.edge_cpu_seconds,
            &self.input.prices,
        );
        let report = MetricsReport {
            policy: self.input.preset.name.clone(),
            seed: self.input.seed,
            slots: self.input.config.slots,
            served_requests: self.acc.served_requests,
            held_requests: self.acc.held_requests,
            deadline_misses: self.acc.deadline_misses,
            infeasible_requests: self.acc.infeasible_requests,
            asb_mbps: round6(if asb_den > 0 {
                asb_num / (asb_den as f64 * seg_dur) / 1e6
            } else {
                0.0
            }),
            aqs: round6(aqs_sum as f64 / n_clients),
            ans: round6(ans_sum as f64 / n_clients),
            asd_s: round6(asd_sum / n_clients),
            asl_s: round6(self.acc.latency_sum_s / served),
            chr: 1.0 - round6(self.acc.origin_served as f64 / served),
            origin_ratio: round6(self.acc.origin_served as f64 / served),
            etr: round6(self.acc.edge_transcoded as f64 / served),
            ptsr: round6(self.acc.peer_transformed as f64 / served),
            direct_ratio: 1.0
                - round6(self.acc.edge_transcoded as f64 / served)
                - round6(self.acc.peer_transformed as f64 / served),
            btl_bits: self.acc.origin_bits,
            bandwidth_usd: money.bandwidth_usd,
            compute_usd: money.compute_usd,
            ncv_usd: money.total_usd,
            eec_kwh: self.acc.edge_cpu_seconds * self.input.config.eec_watts_per_core / 3.6e6,
            mean_proxy_qoe: round6(qoe_sum / n_clients),
            total_objective: self.acc.objective_sum,
            nov: None,
        };
        RunOutput {
            report,
            per_client,
            per_slot: std::mem::take(&mut self.per_slot),
            decision_seconds: self.decision_seconds,
        }
    }
}

/// Admits one decision against the slot network, collecting same-slot
/// waiters for its key. Returns false when the links cannot carry it.
fn serve_one(
    ctx: &mut DecisionContext,
    net: &mut SlotNet,
    out: &mut Vec<Decision>,
    same_slot: &mut BTreeMap<(String, SegmentId, usize), Vec<RequestEvent>>,
    request: &RequestEvent,
    action: Action,
    obj: f64,
) -> Result<bool, EngineError> {
    let latency_s = action_latency(ctx, &action, request)?;
    let Some(reserved) = net.admit(ctx, &action, request) else {
        return Ok(false);
    };
    deplete_compute(ctx, &action, request);
    let key = (
        request.edge_id.clone(),
        request.segment.clone(),
        request.requested_rep,
    );
    let waiters = same_slot.remove(&key).unwrap_or_default();
    out.push(Decision::Serve {
        request: request.clone(),
        action,
        latency_s,
        objective: obj,
        reserved,
        waiters,
    });
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn flush_chunk(
    chunk: &mut Vec<RequestEvent>,
    ctx: &mut DecisionContext,
    net: &mut SlotNet,
    out: &mut Vec<Decision>,
    same_slot: &mut BTreeMap<(String, SegmentId, usize), Vec<RequestEvent>>,
    tree: ActionTree,
    limit: u128,
) -> Result<(), EngineError> {
    if chunk.is_empty() {
        return Ok(());
    }
    let solved = oracle_joint(ctx, chunk, tree, limit);
    match solved {
        Ok(assignment) => {
            for (req, action) in chunk.iter().zip(assignment.actions.into_iter()) {
                let obj = objective(ctx, &action, req)?;
                if !serve_one(ctx, net, out, same_slot, req, action, obj)? {
                    out.push(Decision::Infeasible {
                        request: req.clone(),
                    });
                }
            }
        }
        Err(PolicyError::InfeasibleInstance) => {
            // Retry per request so feasible ones are still served.
            for req in chunk.iter() {
                match oracle_single(ctx, req, tree) {
                    Ok((action, obj)) => {
                        if !serve_one(ctx, net, out, same_slot, req, action, obj)? {
                            out.push(Decision::Infeasible {
                                request: req.clone(),
                            });
                        }
                    }
                    Err(PolicyError::NoFeasibleAction) => out.push(Decision::Infeasible {
                        request: req.clone(),
                    }),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Err(e) => return Err(e.into()),
    }
    chunk.clear();
    Ok(())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ClientSpec;

    fn client(id: &str) -> ClientState {
        ClientState::new(
            &ClientSpec {
                id: id.into(),
                edge_id: "edge1".into(),
                join_s: 0.0,
                leave_s: None,
            },
            &Ladder::default_live(),
            0.0,
        )
    }

    #[test]
    fn abr_startup_and_thresholds() {
        let ladder = Ladder::default_live();
        let mut c = client("c1");
        assert_eq!(abr_select(&c, &ladder, 100e6), 0);
        // Thresholds are [4, 8, 12, 16] s for 2 s segments; buffer 9 s
        // crosses two of them.
        c.last_rep = Some(0);
        c.buffer_s = 9.0;
        assert_eq!(abr_select(&c, &ladder, 100e6), 2);
        // Throughput cap: 1 Mbps affords index 2 (0.791 Mbps) at most.
        c.buffer_s = 20.0;
        assert_eq!(abr_select(&c, &ladder, 1e6), 2);
        // Throughput below the lowest rung still requests the bottom.
        assert_eq!(abr_select(&c, &ladder, 0.01e6), 0);
    }

    #[test]
    fn settle_accumulates_buffer_without_stall() {
        let mut c = client("c1");
        c.buffer_s = 3.0;
        c.last_event_t = 0.0;
        settle_delivery(&mut c, 2.0, 1.0);
        assert_eq!(c.buffer_s, 4.0);
        assert_eq!(c.stall_count, 0);
    }

    #[test]
    fn settle_counts_stall_with_duration() {
        let mut c = client("c1");
        c.buffer_s = 1.0;
        c.last_event_t = 0.0;
        settle_delivery(&mut c, 2.0, 2.5);
        assert_eq!(c.stall_count, 1);
        assert!((c.stall_s - 1.5).abs() < 1e-12);
        assert_eq!(c.buffer_s, 2.0);
    }

    #[test]
    fn back_to_back_late_arrivals_one_episode() {
        let mut c = client("c1");
        c.buffer_s = 1.0;
        c.last_event_t = 0.0;
        settle_delivery(&mut c, 2.0, 2.5); // stall 1.5, episode opens
        settle_delivery(&mut c, 2.0, 5.0); // drains 2.0, gap 0.5, same episode
        assert_eq!(c.stall_count, 1);
        assert!((c.stall_s - 2.0).abs() < 1e-12);
        // An on-time arrival closes the episode; the next late one is new.
        settle_delivery(&mut c, 2.0, 5.5);
        assert!(!c.in_stall);
        settle_delivery(&mut c, 2.0, 12.0);
        assert_eq!(c.stall_count, 2);
    }

    #[test]
    fn qoe_proxy_extremes_and_formula() {
        // Top bitrate, clean playback.
        assert_eq!(proxy_qoe(4.2e6, 4.2e6, 0, 0, 0.0, 300.0), 5.0);
        // No playback at all.
        assert_eq!(proxy_qoe(0.0, 4.2e6, 0, 0, 0.0, 300.0), 0.0);
        // Half the top bitrate, 2 switches/min, no stalls: 2.5 - 0.2.
        let q = proxy_qoe(2.1e6, 4.2e6, 2, 0, 0.0, 60.0);
        assert!((q - 2.3).abs() < 1e-12);
    }

    #[test]
    fn presets_resolve() {
        for name in PRESET_NAMES {
            assert!(preset(name).is_some(), "{name}");
        }
        assert!(preset("bogus").is_none());
        assert_eq!(
            preset("nth").unwrap().allowed_variants.unwrap(),
            [1u8, 4, 7, 8].into_iter().collect::<BTreeSet<u8>>()
        );
    }
}
