//! Polynomial-time decision and allocation algorithms: the greedy node/action
//! scan, the edge fine-grained cascade, miss-triggered reallocation, the
//! max-min fairness allocation, the hop-weighted bandwidth split, and the
//! per-service edge scheduler with auto-scaling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::SegmentId;
use crate::policy::{
    action_cost, action_latency, feasible_actions, objective, transform_cost, transform_executor,
    Action, ActionTree, DecisionContext, ObjectiveWeights, PolicyError,
};
use crate::topology::Path;
use crate::workload::RequestEvent;

// ---------------------------------------------------------------------------
// Greedy node/action scan
// ---------------------------------------------------------------------------

fn better(candidate: (f64, &Action), incumbent: Option<&(f64, Action)>) -> bool {
    match incumbent {
        None => true,
        Some((obj, act)) => {
            candidate.0 < *obj || (candidate.0 == *obj && candidate.1.sort_key() < act.sort_key())
        }
    }
}

/// Greedy scan over feasible nodes and their feasible actions, returning the
/// objective-minimal pair. Peer-class nodes are scored by the latency term
/// alone; their actions carry no dollar cost, so the value equals the full
/// objective and the scan lands on the oracle's choice under the shared
/// tie-break.
pub fn gba(
    ctx: &DecisionContext,
    request: &RequestEvent,
    tree: ActionTree,
) -> Result<(String, Action, f64), PolicyError> {
    let actions = feasible_actions(ctx, request, tree);
    if actions.is_empty() {
        return Err(PolicyError::NoFeasibleAction);
    }
    let mut nodes: Vec<String> = actions.iter().map(|a| a.source_node.clone()).collect();
    nodes.sort();
    nodes.dedup();
    let mut best: Option<(f64, Action)> = None;
    for node in &nodes {
        let node_is_peer = ctx.kind(node).map(|k| k.is_peer()).unwrap_or(false);
        for action in actions.iter().filter(|a| &a.source_node == node) {
            let obj = if node_is_peer {
                match ctx.weights {
                    ObjectiveWeights::LatencyCost { beta } => {
                        let latency = action_latency(ctx, action, request)?;
                        let norm = ctx
                            .normalizers
                            .ok_or(PolicyError::MissingNormalizer)?
                            .latency_s;
                        if norm == 0.0 {
                            0.0
                        } else {
                            beta * latency / norm
                        }
                    }
                    _ => objective(ctx, action, request)?,
                }
            } else {
                objective(ctx, action, request)?
            };
            if better((obj, action), best.as_ref()) {
                best = Some((obj, action.clone()));
            }
        }
    }
    let (obj, action) = best.expect("non-empty action list");
    Ok((action.source_node.clone(), action, obj))
}

// ---------------------------------------------------------------------------
// Edge fine-grained cascade
// ---------------------------------------------------------------------------

/// The edge fine-grained cascade over the collaborative edge tree: local
/// exact hit, local transcode, neighbor relay gated by `thr_comp`, remote
/// exact fetches, then remote-higher transcode paths. Every stage prices all
/// of its feasible candidates and the global minimum wins, so the chosen
/// objective matches the single-request oracle.
pub fn efg1(
    ctx: &DecisionContext,
    request: &RequestEvent,
    thr_comp: f64,
) -> Result<(Action, f64), PolicyError> {
    let mut gated = ctx.clone();
    gated.thr_comp = thr_comp;
    let feasible = feasible_actions(&gated, request, ActionTree::Ararat);
    if feasible.is_empty() {
        return Err(PolicyError::NoFeasibleAction);
    }
    const STAGES: [&[u8]; 5] = [&[1], &[2], &[6], &[4, 7, 9], &[3, 5, 8]];
    let mut best: Option<(f64, Action)> = None;
    for stage in STAGES {
        for action in feasible.iter().filter(|a| stage.contains(&a.variant)) {
            let obj = objective(&gated, action, request)?;
            if better((obj, action), best.as_ref()) {
                best = Some((obj, action.clone()));
            }
        }
    }
    let (obj, action) = best.expect("non-empty action list");
    Ok((action, obj))
}

// ---------------------------------------------------------------------------
// Miss counters and reallocation triggers
// ---------------------------------------------------------------------------

/// Bitrate demand of one edge-to-server flow over its selected path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDemand {
    pub edge_id: String,
    pub server_id: String,
    /// hit_bitrates + miss_bitrates, bits per second.
    pub demand_bps: f64,
    pub path: Path,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct MissEntry {
    miss_counter: u64,
    miss_bitrate_bps: f64,
    hit_bitrate_bps: f64,
}

/// Per (edge, remote server) miss accounting against a trigger threshold.
#[derive(Debug, Clone)]
pub struct MissCounters {
    pub thr_miss: u64,
    entries: BTreeMap<(String, String), MissEntry>,
}

/// A request to re-run the fairness allocation for one edge-to-server flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ReallocTrigger {
    pub edge_id: String,
    pub server_id: String,
    /// hit + miss bitrates observed since the last trigger.
    pub demand_bps: f64,
}

impl MissCounters {
    pub fn new(thr_miss: u64) -> Self {
        Self {
            thr_miss,
            entries: BTreeMap::new(),
        }
    }

    pub fn record_miss(&mut self, edge: &str, server: &str, bitrate_bps: f64) {
        let e = self
            .entries
            .entry((edge.to_string(), server.to_string()))
            .or_default();
        e.miss_counter += 1;
        e.miss_bitrate_bps += bitrate_bps;
    }

    pub fn record_hit(&mut self, edge: &str, server: &str, bitrate_bps: f64) {
        let e = self
            .entries
            .entry((edge.to_string(), server.to_string()))
            .or_default();
        e.hit_bitrate_bps += bitrate_bps;
    }

    pub fn counter(&self, edge: &str, server: &str) -> u64 {
        self.entries
            .get(&(edge.to_string(), server.to_string()))
            .map(|e| e.miss_counter)
            .unwrap_or(0)
    }
}

/// Emits one trigger per remote server whose miss counter exceeded the
/// threshold for `edge`, resetting those counters. Server-id order.
pub fn efg2_tick(counters: &mut MissCounters, edge: &str) -> Vec<ReallocTrigger> {
    let mut out = Vec::new();
    for ((e, server), entry) in counters.entries.iter_mut() {
        if e == edge && entry.miss_counter > counters.thr_miss {
            out.push(ReallocTrigger {
                edge_id: e.clone(),
                server_id: server.clone(),
                demand_bps: entry.hit_bitrate_bps + entry.miss_bitrate_bps,
            });
            entry.miss_counter = 0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Fairness allocation (closed-form max-min LP solution)
// ---------------------------------------------------------------------------

/// Solves the max-min fairness program: one coefficient `F` scales every
/// flow's demand so that no link exceeds capacity, maximized and clamped at
/// one. `F = min(1, min over links of capacity / traversing demand)` is
/// LP-optimal: any larger value violates the binding link.
///
/// Returns `(F, per-flow allocations)` in the demand order given.
pub fn sfg_allocate(
    link_capacities: &BTreeMap<String, f64>,
    demands: &[FlowDemand],
) -> (f64, Vec<f64>) {
    let mut fairness: f64 = 1.0;
    for (link, capacity) in link_capacities {
        let total: f64 = demands
            .iter()
            .filter(|d| d.path.links.iter().any(|l| l == link))
            .map(|d| d.demand_bps)
            .sum();
        if total > 0.0 {
            fairness = fairness.min(capacity / total);
        }
    }
    let allocations = demands.iter().map(|d| fairness * d.demand_bps).collect();
    (fairness, allocations)
}

/// A link where the allocation meets capacity exactly, witnessing that the
/// returned fairness coefficient cannot be raised. `None` iff `F = 1`.
pub fn binding_link(
    link_capacities: &BTreeMap<String, f64>,
    demands: &[FlowDemand],
    fairness: f64,
) -> Option<String> {
    if fairness >= 1.0 {
        return None;
    }
    link_capacities
        .iter()
        .filter_map(|(link, capacity)| {
            let total: f64 = demands
                .iter()
                .filter(|d| d.path.links.iter().any(|l| l == link))
                .map(|d| d.demand_bps)
                .sum();
            if total > 0.0 && (fairness * total - capacity).abs() <= 1e-9 * capacity.max(1.0) {
                Some(link.clone())
            } else {
                None
            }
        })
        .next()
}

// ---------------------------------------------------------------------------
// Hop-weighted bandwidth split
// ---------------------------------------------------------------------------

/// Splits one shared link's capacity across its (edge, server) users by the
/// complement of their hop counts: fewer hops, more bandwidth. The shares
/// sum to the full capacity; a single user takes it all.
pub fn leader_allocate(link_capacity_bps: f64, users: &[(String, String, u32)]) -> Vec<f64> {
    if users.is_empty() {
        return Vec::new();
    }
    if users.len() == 1 {
        return vec![link_capacity_bps];
    }
    let total_hops: f64 = users.iter().map(|(_, _, h)| f64::from(*h)).sum();
    let denom: f64 = users
        .iter()
        .map(|(_, _, h)| total_hops - f64::from(*h))
        .sum();
    if denom == 0.0 {
        // All-zero hop counts; fall back to an equal split.
        return vec![link_capacity_bps / users.len() as f64; users.len()];
    }
    users
        .iter()
        .map(|(_, _, h)| (total_hops - f64::from(*h)) / denom * link_capacity_bps)
        .collect()
}

// ---------------------------------------------------------------------------
// Per-service edge scheduler and auto-scaler
// ---------------------------------------------------------------------------

/// One multimedia-service queue of aggregated requests.
#[derive(Debug, Clone)]
pub struct ServiceQueue {
    pub label: String,
    pub requests: Vec<RequestEvent>,
}

/// Outcome of scheduling one request.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleOutcome {
    /// Serve via the chain with minimum latency among deadline-feasible ones.
    Serve {
        request: RequestEvent,
        action: Action,
        latency_s: f64,
        cost_usd: f64,
    },
    /// An identical fetch is in flight; ride on it.
    Hold { request: RequestEvent },
    /// No chain meets the deadline with the remaining resources.
    DeadlineMiss { request: RequestEvent },
}

/// Processes queues in priority order (more requests first, then earlier
/// deadline), serving each request with the minimum-latency deadline-feasible
/// chain while decrementing a local resource ledger; duplicates of in-flight
/// fetches are held.
pub fn sarena_schedule(
    mut queues: Vec<ServiceQueue>,
    ctx: &DecisionContext,
    on_the_fly: &mut BTreeSet<(SegmentId, usize)>,
) -> Result<Vec<ScheduleOutcome>, PolicyError> {
    queues.sort_by(|a, b| {
        let ka = queue_priority(a);
        let kb = queue_priority(b);
        kb.0.cmp(&ka.0)
            .then(ka.1.partial_cmp(&kb.1).expect("deadlines are finite"))
            .then(a.label.cmp(&b.label))
    });
    let mut working = ctx.clone();
    let mut out = Vec::new();
    for queue in queues {
        for request in queue.requests {
            let key = (request.segment.clone(), request.requested_rep);
            if on_the_fly.contains(&key) {
                out.push(ScheduleOutcome::Hold { request });
                continue;
            }
            let actions = feasible_actions(&working, &request, ActionTree::Sarena);
            let mut best: Option<(f64, Action)> = None;
            for action in &actions {
                let latency = action_latency(&working, action, &request)?;
                if better((latency, action), best.as_ref()) {
                    best = Some((latency, action.clone()));
                }
            }
            match best {
                None => out.push(ScheduleOutcome::DeadlineMiss { request }),
                Some((latency_s, action)) => {
                    commit_resources(&mut working, &action, &request)?;
                    on_the_fly.insert(key);
                    let cost_usd = action_cost(&working, &action, &request)?;
                    out.push(ScheduleOutcome::Serve {
                        request,
                        action,
                        latency_s,
                        cost_usd,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn queue_priority(q: &ServiceQueue) -> (usize, f64) {
    let earliest = q
        .requests
        .iter()
        .map(|r| r.deadline_s)
        .fold(f64::INFINITY, f64::min);
    (q.requests.len(), earliest)
}

/// Deducts an action's bandwidth and compute demand from a working context.
fn commit_resources(
    ctx: &mut DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> Result<(), PolicyError> {
    for leg in crate::policy::action_legs(ctx, action, request) {
        let demand = ctx.ladder.bitrate(leg.rep_index);
        let key = if ctx.bandwidth.contains_key(&(leg.from.clone(), leg.to.clone())) {
            (leg.from.clone(), leg.to.clone())
        } else {
            (leg.to.clone(), leg.from.clone())
        };
        if let Some(bw) = ctx.bandwidth.get_mut(&key) {
            *bw = (*bw - demand).max(0.0);
        }
    }
    if let Some(executor) = transform_executor(ctx, action, request) {
        let tc = transform_cost(ctx, action, request)?.expect("executor implies transform");
        if let Some(cpu) = ctx.cpu_remaining.get_mut(&executor) {
            *cpu = (*cpu - tc.cpu_s).max(0.0);
        }
        if let Some(power) = ctx.power_remaining.get_mut(&executor) {
            *power = (*power - tc.power_mah).max(0.0);
        }
    }
    Ok(())
}

/// Edge compute/memory configuration with scale-up headroom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeScale {
    pub cores: u32,
    pub ram_gb: u32,
    pub max_cores: u32,
    pub max_ram_gb: u32,
}

/// Adds two cores and 2 GB RAM (clamped at the maxima) whenever measured
/// QoE falls below the service threshold.
pub fn sarena_autoscale(scale: EdgeScale, measured_qoe: f64, threshold: f64) -> EdgeScale {
    if measured_qoe >= threshold {
        return scale;
    }
    EdgeScale {
        cores: (scale.cores + 2).min(scale.max_cores),
        ram_gb: (scale.ram_gb + 2).min(scale.max_ram_gb),
        ..scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Ladder;
    use crate::costs::{NodeClass, PriceBook, SrProfile, TranscodeProfile};
    use crate::policy::{oracle_single, Normalizers};
    use crate::topology::NodeKind;
    use crate::workload::ServiceClass;
    use std::sync::Arc;

    fn ctx(weights: ObjectiveWeights) -> DecisionContext {
        DecisionContext {
            ladder: Ladder::default_live(),
            node_kinds: BTreeMap::new(),
            node_classes: BTreeMap::new(),
            peer_regions: BTreeMap::new(),
            availability: BTreeMap::new(),
            bandwidth: BTreeMap::new(),
            cpu_remaining: BTreeMap::new(),
            cpu_capacity: BTreeMap::new(),
            power_remaining: BTreeMap::new(),
            weights,
            replacement_window: 0,
            sr_window: 1,
            thr_comp: 0.5,
            normalizers: Some(Normalizers {
                latency_s: 1.0,
                cost_usd: 1e-3,
            }),
            transcode: Arc::new(TranscodeProfile::measured_default()),
            sr: Arc::new(SrProfile::bundled_default()),
            prices: PriceBook::default_cloud(),
            allowed_variants: None,
        }
    }

    fn node(ctx: &mut DecisionContext, id: &str, kind: NodeKind, class: NodeClass) {
        ctx.node_kinds.insert(id.to_string(), kind);
        ctx.node_classes.insert(id.to_string(), class);
    }

    fn avail(ctx: &mut DecisionContext, n: &str, seg: &SegmentId, rep: usize) {
        ctx.availability
            .entry(n.to_string())
            .or_default()
            .insert((seg.clone(), rep));
    }

    fn bw(ctx: &mut DecisionContext, a: &str, b: &str, bps: f64) {
        ctx.bandwidth.insert((a.to_string(), b.to_string()), bps);
    }

    fn request(client: &str, edge: &str, rep: usize) -> RequestEvent {
        RequestEvent {
            client_id: client.to_string(),
            edge_id: edge.to_string(),
            segment: SegmentId::new("v1", 0),
            requested_rep: rep,
            arrival_slot: 0,
            deadline_s: 2.0,
            service_class: ServiceClass::Live,
        }
    }

    fn ararat_ctx() -> (DecisionContext, RequestEvent) {
        let mut c = ctx(ObjectiveWeights::LatencyCost { beta: 0.5 });
        node(&mut c, "origin", NodeKind::Origin, NodeClass::Edge);
        node(&mut c, "cdn1", NodeKind::Cdn, NodeClass::Edge);
        node(&mut c, "les", NodeKind::Edge, NodeClass::Edge);
        node(&mut c, "nes1", NodeKind::Edge, NodeClass::Edge);
        bw(&mut c, "origin", "les", 50e6);
        bw(&mut c, "cdn1", "les", 100e6);
        bw(&mut c, "nes1", "les", 200e6);
        for e in ["les", "nes1"] {
            c.cpu_remaining.insert(e.to_string(), 100.0);
            c.cpu_capacity.insert(e.to_string(), 100.0);
        }
        let req = request("c1", "les", 2);
        avail(&mut c, "origin", &req.segment, 2);
        (c, req)
    }

    #[test]
    fn gba_matches_oracle_on_single_requests() {
        let (mut c, req) = ararat_ctx();
        avail(&mut c, "cdn1", &req.segment, 3);
        avail(&mut c, "nes1", &req.segment, 2);
        avail(&mut c, "les", &req.segment, 4);
        let (_, action, obj) = gba(&c, &req, ActionTree::Ararat).unwrap();
        let (oracle_action, oracle_obj) = oracle_single(&c, &req, ActionTree::Ararat).unwrap();
        assert_eq!(action, oracle_action);
        assert!((obj - oracle_obj).abs() < 1e-15);
    }

    #[test]
    fn gba_empty_set_errors() {
        let c = ctx(ObjectiveWeights::LatencyOnly);
        let req = request("c1", "les", 2);
        assert!(matches!(
            gba(&c, &req, ActionTree::Alive),
            Err(PolicyError::NoFeasibleAction)
        ));
    }

    #[test]
    fn gba_peer_branch_equals_full_objective() {
        // A free peer action and a priced CDN action with equal latency:
        // the peer must win on the cost term.
        let mut c = ctx(ObjectiveWeights::LatencyCost { beta: 0.5 });
        node(&mut c, "origin", NodeKind::Origin, NodeClass::Edge);
        node(&mut c, "cdn1", NodeKind::Cdn, NodeClass::Edge);
        node(&mut c, "vts", NodeKind::Edge, NodeClass::Edge);
        node(&mut c, "p1", NodeKind::PeerSeeder, NodeClass::PeerPc);
        node(&mut c, "p2", NodeKind::PeerSeeder, NodeClass::PeerPc);
        c.peer_regions.insert("p1".into(), "vts".into());
        c.peer_regions.insert("p2".into(), "vts".into());
        let req = request("p1", "vts", 2);
        avail(&mut c, "cdn1", &req.segment, 2);
        avail(&mut c, "p2", &req.segment, 2);
        bw(&mut c, "cdn1", "p1", 20e6);
        bw(&mut c, "p2", "p1", 20e6);
        let (node_id, action, _) = gba(&c, &req, ActionTree::Alive).unwrap();
        assert_eq!(node_id, "p2");
        assert_eq!(action.variant, 1);
        let (oracle_action, _) = oracle_single(&c, &req, ActionTree::Alive).unwrap();
        assert_eq!(action, oracle_action);
    }

    #[test]
    fn efg1_local_exact_hit_wins_with_zero_objective() {
        let (mut c, req) = ararat_ctx();
        avail(&mut c, "les", &req.segment, 2);
        let (action, obj) = efg1(&c, &req, 0.5).unwrap();
        assert_eq!(action.variant, 1);
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn efg1_matches_oracle_value() {
        let (mut c, req) = ararat_ctx();
        avail(&mut c, "cdn1", &req.segment, 4);
        avail(&mut c, "nes1", &req.segment, 3);
        let (action, obj) = efg1(&c, &req, 0.5).unwrap();
        let (oracle_action, oracle_obj) = oracle_single(&c, &req, ActionTree::Ararat).unwrap();
        assert!((obj - oracle_obj).abs() < 1e-15);
        assert_eq!(action, oracle_action);
    }

    #[test]
    fn efg1_relay_gated_by_thr_comp() {
        let (mut c, req) = ararat_ctx();
        // Only the LES holds a higher rep and its cpu is gone: the relay is
        // the sole candidate, feasible only while the NES keeps headroom.
        avail(&mut c, "les", &req.segment, 4);
        c.availability.remove("origin");
        c.cpu_remaining.insert("les".to_string(), 0.0);
        let (action, _) = efg1(&c, &req, 0.5).unwrap();
        assert_eq!(action.variant, 6);
        assert_eq!(action.relay_via.as_deref(), Some("nes1"));
        // NES below the gate everywhere -> no action at all.
        c.cpu_remaining.insert("nes1".to_string(), 40.0);
        assert!(matches!(
            efg1(&c, &req, 0.5),
            Err(PolicyError::NoFeasibleAction)
        ));
    }

    #[test]
    fn efg2_triggers_and_resets() {
        let mut counters = MissCounters::new(100);
        for _ in 0..101 {
            counters.record_miss("les", "cdn1", 2.4e6);
        }
        counters.record_hit("les", "cdn1", 1.0e6);
        counters.record_miss("les", "cdn2", 1.0);
        let triggers = efg2_tick(&mut counters, "les");
        assert_eq!(triggers.len(), 1);
        assert_eq!(triggers[0].server_id, "cdn1");
        assert!((triggers[0].demand_bps - (101.0 * 2.4e6 + 1.0e6)).abs() < 1.0);
        assert_eq!(counters.counter("les", "cdn1"), 0);
        // Nothing above threshold now.
        assert!(efg2_tick(&mut counters, "les").is_empty());
    }

    #[test]
    fn efg2_orders_triggers_by_server_id() {
        let mut counters = MissCounters::new(0);
        counters.record_miss("les", "cdn2", 1.0);
        counters.record_miss("les", "cdn1", 1.0);
        counters.record_miss("other", "cdn3", 1.0);
        let triggers = efg2_tick(&mut counters, "les");
        let servers: Vec<&str> = triggers.iter().map(|t| t.server_id.as_str()).collect();
        assert_eq!(servers, vec!["cdn1", "cdn2"]);
    }

    fn flow(edge: &str, server: &str, mbps: f64, links: &[&str]) -> FlowDemand {
        FlowDemand {
            edge_id: edge.to_string(),
            server_id: server.to_string(),
            demand_bps: mbps * 1e6,
            path: Path {
                src: edge.to_string(),
                dst: server.to_string(),
                links: links.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    #[test]
    fn fairness_reproduces_worked_example() {
        // Demands 600, 180, 250 Mbps across one 300 Mbps link.
        let mut caps = BTreeMap::new();
        caps.insert("s1-s2".to_string(), 300e6);
        let demands = vec![
            flow("les", "cs2", 600.0, &["s1-s2"]),
            flow("les", "origin", 180.0, &["s1-s2"]),
            flow("nes", "cs1", 250.0, &["s1-s2"]),
        ];
        let (f, x) = sfg_allocate(&caps, &demands);
        assert!((f - 0.291).abs() < 1e-3);
        for (got, want) in x.iter().zip([174.75e6, 52.42e6, 72.81e6]) {
            assert!((got - want).abs() < 0.05e6, "{got} vs {want}");
        }
        let witness = binding_link(&caps, &demands, f).expect("binding link exists");
        assert_eq!(witness, "s1-s2");
    }

    #[test]
    fn fairness_clamps_at_one() {
        let mut caps = BTreeMap::new();
        caps.insert("l1".to_string(), 300e6);
        let demands = vec![flow("les", "cs1", 100.0, &["l1"])];
        let (f, x) = sfg_allocate(&caps, &demands);
        assert_eq!(f, 1.0);
        assert_eq!(x, vec![100e6]);
        assert!(binding_link(&caps, &demands, f).is_none());
        // Zero demand: F = 1, empty allocations are all zero.
        let (f, x) = sfg_allocate(&caps, &[]);
        assert_eq!(f, 1.0);
        assert!(x.is_empty());
    }

    #[test]
    fn fairness_two_equal_demands() {
        let mut caps = BTreeMap::new();
        caps.insert("l1".to_string(), 300e6);
        let demands = vec![
            flow("a", "s", 200.0, &["l1"]),
            flow("b", "s", 200.0, &["l1"]),
        ];
        let (f, x) = sfg_allocate(&caps, &demands);
        assert!((f - 0.75).abs() < 1e-12);
        assert!((x[0] - 150e6).abs() < 1e-3);
        assert!((x[1] - 150e6).abs() < 1e-3);
    }

    #[test]
    fn leader_allocation_hop_example() {
        let users = vec![
            ("les".to_string(), "cs1".to_string(), 2u32),
            ("nes".to_string(), "cs2".to_string(), 4u32),
        ];
        let x = leader_allocate(60e6, &users);
        assert!((x[0] - 40e6).abs() < 1e-6);
        assert!((x[1] - 20e6).abs() < 1e-6);
        // Equal hops split equally; one user takes the link.
        let eq = leader_allocate(
            60e6,
            &[
                ("a".to_string(), "s".to_string(), 3),
                ("b".to_string(), "s".to_string(), 3),
            ],
        );
        assert_eq!(eq, vec![30e6, 30e6]);
        assert_eq!(
            leader_allocate(60e6, &[("a".to_string(), "s".to_string(), 7)]),
            vec![60e6]
        );
    }

    #[test]
    fn leader_allocation_sums_to_capacity() {
        let users: Vec<(String, String, u32)> = (0..7)
            .map(|i| (format!("e{i}"), "s".to_string(), (i % 4) as u32 + 1))
            .collect();
        let cap = 123.456e6;
        let x = leader_allocate(cap, &users);
        let total: f64 = x.iter().sum();
        assert!((total - cap).abs() <= 1e-9 * cap);
    }

    fn sarena_ctx() -> DecisionContext {
        let mut c = ctx(ObjectiveWeights::LatencyOnly);
        node(&mut c, "origin", NodeKind::Origin, NodeClass::Edge);
        node(&mut c, "cdn1", NodeKind::Cdn, NodeClass::Edge);
        node(&mut c, "les", NodeKind::Edge, NodeClass::Edge);
        bw(&mut c, "origin", "les", 100e6);
        bw(&mut c, "cdn1", "les", 50e6);
        c.cpu_remaining.insert("les".to_string(), 100.0);
        c.cpu_capacity.insert("les".to_string(), 100.0);
        c
    }

    #[test]
    fn sarena_processes_bigger_queue_first_and_dedups() {
        let mut c = sarena_ctx();
        let mut live1 = request("c1", "les", 1);
        live1.segment = SegmentId::new("ch1", 5);
        let mut live2 = request("c2", "les", 1);
        live2.segment = SegmentId::new("ch1", 5);
        let mut live3 = request("c3", "les", 1);
        live3.segment = SegmentId::new("ch1", 5);
        let mut vod1 = request("c4", "les", 1);
        vod1.service_class = ServiceClass::Vod;
        vod1.deadline_s = 4.0;
        vod1.segment = SegmentId::new("vod1", 0);
        let mut vod2 = vod1.clone();
        vod2.client_id = "c5".into();
        vod2.segment = SegmentId::new("vod2", 0);
        for seg in [&live1.segment, &vod1.segment, &vod2.segment] {
            avail(&mut c, "origin", seg, 1);
        }
        let queues = vec![
            ServiceQueue {
                label: "vod".into(),
                requests: vec![vod1, vod2],
            },
            ServiceQueue {
                label: "live".into(),
                requests: vec![live1, live2, live3],
            },
        ];
        let mut in_flight = BTreeSet::new();
        let out = sarena_schedule(queues, &c, &mut in_flight).unwrap();
        // Live queue (3 requests) first; duplicates held after one fetch.
        assert!(matches!(&out[0], ScheduleOutcome::Serve { request, .. } if request.client_id == "c1"));
        assert!(matches!(&out[1], ScheduleOutcome::Hold { request } if request.client_id == "c2"));
        assert!(matches!(&out[2], ScheduleOutcome::Hold { .. }));
        assert!(matches!(&out[3], ScheduleOutcome::Serve { .. }));
        assert!(matches!(&out[4], ScheduleOutcome::Serve { .. }));
    }

    #[test]
    fn sarena_deadline_gate_records_miss() {
        let mut c = sarena_ctx();
        // Serving the top rep over 3 Mbps takes 2.8 s > 2 s deadline.
        c.bandwidth.clear();
        bw(&mut c, "origin", "les", 3e6);
        let mut req = request("c1", "les", 4);
        avail(&mut c, "origin", &req.segment, 4);
        req.deadline_s = 2.0;
        let queues = vec![ServiceQueue {
            label: "live".into(),
            requests: vec![req],
        }];
        let mut in_flight = BTreeSet::new();
        let out = sarena_schedule(queues, &c, &mut in_flight).unwrap();
        assert!(matches!(out[0], ScheduleOutcome::DeadlineMiss { .. }));
    }

    #[test]
    fn sarena_decisions_respect_deadlines() {
        let mut c = sarena_ctx();
        let seg = SegmentId::new("ch1", 0);
        avail(&mut c, "origin", &seg, 3);
        avail(&mut c, "cdn1", &seg, 4);
        avail(&mut c, "les", &seg, 4);
        let mut reqs = Vec::new();
        for i in 0..4 {
            let mut r = request(&format!("c{i}"), "les", 3);
            r.segment = seg.clone();
            r.requested_rep = 3 - (i % 2);
            reqs.push(r);
        }
        let queues = vec![ServiceQueue {
            label: "live".into(),
            requests: reqs,
        }];
        let mut in_flight = BTreeSet::new();
        for outcome in sarena_schedule(queues, &c, &mut in_flight).unwrap() {
            if let ScheduleOutcome::Serve {
                request, latency_s, ..
            } = outcome
            {
                assert!(latency_s <= request.deadline_s);
            }
        }
    }

    #[test]
    fn autoscaler_steps_and_clamps() {
        let base = EdgeScale {
            cores: 4,
            ram_gb: 6,
            max_cores: 10,
            max_ram_gb: 16,
        };
        let up = sarena_autoscale(base, 3.2, 4.0);
        assert_eq!((up.cores, up.ram_gb), (6, 8));
        let same = sarena_autoscale(base, 4.5, 4.0);
        assert_eq!(same, base);
        let maxed = EdgeScale {
            cores: 10,
            ram_gb: 16,
            ..base
        };
        assert_eq!(sarena_autoscale(maxed, 1.0, 4.0), maxed);
        // Monotone: below-threshold QoE never decreases cores.
        let mut s = base;
        for _ in 0..10 {
            let next = sarena_autoscale(s, 0.0, 4.0);
            assert!(next.cores >= s.cores);
            s = next;
        }
        assert_eq!(s.cores, 10);
    }
}
