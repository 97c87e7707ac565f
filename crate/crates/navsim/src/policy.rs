//! The decision core: one unified action model over all seven framework
//! action trees, feasibility filtering, per-action latency and dollar cost,
//! the normalized multi-objective, and exact enumeration oracles.
//!
//! Heuristics elsewhere in the crate select from the same feasible sets and
//! score with the same objective, so on single-request instances they must
//! reproduce the oracle exactly; the test suites hold them to that.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{candidate_set_alive, replacement_set, CandidateMode, Ladder, SegmentId};
use crate::costs::{
    monetary_cost, sr_lookup, transcode_lookup, transmission_time, NodeClass, PriceBook,
    SrProfile, TranscodeProfile, TransformCost,
};
use crate::topology::NodeKind;
use crate::workload::RequestEvent;

/// Which framework's action tree a decision is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionTree {
    EsHas,
    Csdn,
    Sarena,
    Leader,
    Ararat,
    Richter,
    Alive,
}

impl ActionTree {
    /// Requests terminate at the requesting peer in the hybrid P2P trees and
    /// at the serving edge otherwise.
    pub fn is_p2p(self) -> bool {
        matches!(self, ActionTree::Richter | ActionTree::Alive)
    }
}

/// Where (if anywhere) the requested representation is reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transform {
    None,
    TrAtEdge,
    TrAtLocalPeer,
    TrAtRemotePeer,
    SrAtLocalPeer,
}

/// One leaf of an action tree: fetch `source_rep` from `source_node` and
/// apply `transform` to produce the requested representation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub tree: ActionTree,
    pub variant: u8,
    pub source_node: String,
    pub transform: Transform,
    pub source_rep: usize,
    /// The node a relay variant bounces through: the transcoding NES for the
    /// edge relay action, the executing adjacent peer for remote peer TR.
    pub relay_via: Option<String>,
}

impl Action {
    /// Shared deterministic tie-break key: (variant, source, rep, relay).
    pub fn sort_key(&self) -> (u8, &str, usize, &str) {
        (
            self.variant,
            self.source_node.as_str(),
            self.source_rep,
            self.relay_via.as_deref().unwrap_or(""),
        )
    }
}

/// Per-framework objective shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveWeights {
    /// `beta * latency/psi* + (1-beta) * cost/xi*`.
    LatencyCost { beta: f64 },
    /// Pure normalized serving latency.
    LatencyOnly,
    /// `a1 * latency/psi* + a2 * deviation/F* - a3 * bitrate/Q*`.
    EsHas { a1: f64, a2: f64, a3: f64 },
    /// `alpha * latency/psi* + beta * deviation/F*` with alpha + beta = 1.
    Csdn { alpha: f64, beta: f64 },
}

/// Instance-level normalizers for the latency and cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub latency_s: f64,
    pub cost_usd: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no feasible action for the request")]
    NoFeasibleAction,
    #[error("instance has a request with no feasible action")]
    InfeasibleInstance,
    #[error("joint search space {size} exceeds limit {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },
    #[error("normalizer missing for a term with nonzero weight")]
    MissingNormalizer,
    #[error("no bandwidth entry between {from} and {to}")]
    MissingBandwidth { from: String, to: String },
    #[error("cost model error: {0}")]
    Cost(#[from] crate::costs::CostError),
}

/// Immutable resource snapshot a batch of requests is decided against.
#[derive(Debug, Clone)]
pub struct DecisionContext {
    pub ladder: Ladder,
    pub node_kinds: BTreeMap<String, NodeKind>,
    /// Hardware class per node, for cost-table lookups.
    pub node_classes: BTreeMap<String, NodeClass>,
    /// Peer -> serving-edge region; peers are adjacent iff regions match.
    pub peer_regions: BTreeMap<String, String>,
    /// (segment, rep) pairs available per node.
    pub availability: BTreeMap<String, BTreeSet<(SegmentId, usize)>>,
    /// Symmetric available bandwidth in bits per second.
    pub bandwidth: BTreeMap<(String, String), f64>,
    /// Remaining compute this slot, cpu-seconds.
    pub cpu_remaining: BTreeMap<String, f64>,
    /// Per-slot compute budgets, for threshold gating.
    pub cpu_capacity: BTreeMap<String, f64>,
    /// Remaining battery, mAh (peers).
    pub power_remaining: BTreeMap<String, f64>,
    pub weights: ObjectiveWeights,
    /// Replacement window m for the replacement-quality trees.
    pub replacement_window: usize,
    /// How many rungs below a request may source super-resolution.
    pub sr_window: usize,
    /// Fraction of a neighbor edge's compute budget that must remain free
    /// for it to accept relayed transcode work.
    pub thr_comp: f64,
    pub normalizers: Option<Normalizers>,
    pub transcode: Arc<TranscodeProfile>,
    pub sr: Arc<SrProfile>,
    pub prices: PriceBook,
    /// Baseline presets restrict the tree to a variant subset.
    pub allowed_variants: Option<BTreeSet<u8>>,
}

impl DecisionContext {
    pub fn bandwidth_between(&self, a: &str, b: &str) -> Option<f64> {
        self.bandwidth
            .get(&(a.to_string(), b.to_string()))
            .or_else(|| self.bandwidth.get(&(b.to_string(), a.to_string())))
            .copied()
    }

    pub fn kind(&self, node: &str) -> Option<NodeKind> {
        self.node_kinds.get(node).copied()
    }

    fn class_of(&self, node: &str) -> NodeClass {
        self.node_classes
            .get(node)
            .copied()
            .unwrap_or(NodeClass::Edge)
    }

    fn has_rep(&self, node: &str, segment: &SegmentId, rep: usize) -> bool {
        self.availability
            .get(node)
            .map(|set| set.contains(&(segment.clone(), rep)))
            .unwrap_or(false)
    }

    /// The node a request's upstream preparation terminates at.
    pub fn destination<'a>(&self, tree: ActionTree, request: &'a RequestEvent) -> &'a str {
        if tree.is_p2p() {
            &request.client_id
        } else {
            &request.edge_id
        }
    }
}

/// One data movement of an action.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub from: String,
    pub to: String,
    pub rep_index: usize,
}

/// A joint decision for a batch of requests.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub actions: Vec<Action>,
    pub feasible: bool,
    pub objective: f64,
    pub total_latency_s: f64,
    pub total_cost_usd: f64,
}

// ---------------------------------------------------------------------------
// Action anatomy: legs, executor, latency, cost
// ---------------------------------------------------------------------------

/// The transfers an action performs, in causal order.
pub fn action_legs(ctx: &DecisionContext, action: &Action, request: &RequestEvent) -> Vec<Leg> {
    let dest = ctx.destination(action.tree, request).to_string();
    let requested = request.requested_rep;
    let src = action.source_node.clone();
    match action.transform {
        Transform::None => {
            if src == dest {
                vec![]
            } else {
                vec![Leg {
                    from: src,
                    to: dest,
                    rep_index: requested,
                }]
            }
        }
        Transform::TrAtEdge => {
            if let Some(relay) = &action.relay_via {
                // Edge relay: ship the higher rep out, transcode, ship the
                // requested rep back.
                return vec![
                    Leg {
                        from: dest.clone(),
                        to: relay.clone(),
                        rep_index: action.source_rep,
                    },
                    Leg {
                        from: relay.clone(),
                        to: dest,
                        rep_index: requested,
                    },
                ];
            }
            let executor = edge_executor(ctx, action, request);
            let mut legs = Vec::new();
            if src != executor {
                legs.push(Leg {
                    from: src,
                    to: executor.clone(),
                    rep_index: action.source_rep,
                });
            }
            if executor != dest {
                legs.push(Leg {
                    from: executor,
                    to: dest,
                    rep_index: requested,
                });
            }
            legs
        }
        Transform::TrAtLocalPeer => vec![],
        Transform::TrAtRemotePeer => vec![Leg {
            from: src,
            to: dest,
            rep_index: requested,
        }],
        Transform::SrAtLocalPeer => vec![Leg {
            from: src,
            to: dest,
            rep_index: action.source_rep,
        }],
    }
}

/// The edge server an edge transcode runs on.
fn edge_executor(ctx: &DecisionContext, action: &Action, request: &RequestEvent) -> String {
    if let Some(relay) = &action.relay_via {
        return relay.clone();
    }
    if action.tree.is_p2p() {
        // P2P trees transcode at the tracker edge regardless of source.
        return request.edge_id.clone();
    }
    // A neighbor edge already holding the higher rep transcodes in place and
    // ships the requested rep; every other edge transcode runs at the
    // serving edge.
    let source_is_edge = ctx.kind(&action.source_node) == Some(NodeKind::Edge);
    let tr_at_source = matches!(action.tree, ActionTree::Leader | ActionTree::Ararat)
        && action.variant == 5
        && source_is_edge;
    if tr_at_source {
        action.source_node.clone()
    } else {
        request.edge_id.clone()
    }
}

/// The node whose compute (and battery, for peers) the transform consumes.
pub fn transform_executor(
    ctx: &DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> Option<String> {
    match action.transform {
        Transform::None => None,
        Transform::TrAtEdge => Some(edge_executor(ctx, action, request)),
        Transform::TrAtLocalPeer | Transform::SrAtLocalPeer => Some(request.client_id.clone()),
        Transform::TrAtRemotePeer => Some(
            action
                .relay_via
                .clone()
                .unwrap_or_else(|| action.source_node.clone()),
        ),
    }
}

/// Per-segment cost-table record for an action's transform, if any.
pub fn transform_cost(
    ctx: &DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> Result<Option<TransformCost>, PolicyError> {
    let executor = match transform_executor(ctx, action, request) {
        None => return Ok(None),
        Some(e) => e,
    };
    let class = ctx.class_of(&executor);
    let input = ctx.ladder.bitrate(action.source_rep);
    let output = ctx.ladder.bitrate(request.requested_rep);
    let dur = ctx.ladder.segment_duration_s;
    let cost = match action.transform {
        Transform::SrAtLocalPeer => sr_lookup(&ctx.sr, input, output, class, dur)?,
        _ => transcode_lookup(&ctx.transcode, input, output, class, dur)?,
    };
    Ok(Some(cost))
}

/// Upstream serving latency: transmission over each leg plus transform time.
pub fn action_latency(
    ctx: &DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    for leg in action_legs(ctx, action, request) {
        let bw = ctx
            .bandwidth_between(&leg.from, &leg.to)
            .ok_or_else(|| PolicyError::MissingBandwidth {
                from: leg.from.clone(),
                to: leg.to.clone(),
            })?;
        total += transmission_time(ctx.ladder.segment_bits(leg.rep_index), bw)?;
    }
    if let Some(tc) = transform_cost(ctx, action, request)? {
        total += tc.time_s;
    }
    Ok(total)
}

/// Dollar cost: traffic on legs leaving server-tier nodes priced per bit,
/// edge compute priced per cpu-second. Peer legs and peer compute are free
/// in dollars (peers spend battery instead).
pub fn action_cost(
    ctx: &DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> Result<f64, PolicyError> {
    let mut priced_bits = 0.0;
    for leg in action_legs(ctx, action, request) {
        let from_kind = ctx.kind(&leg.from);
        if matches!(
            from_kind,
            Some(NodeKind::Origin) | Some(NodeKind::Cdn) | Some(NodeKind::Edge)
        ) {
            priced_bits += ctx.ladder.segment_bits(leg.rep_index);
        }
    }
    let mut edge_cpu_s = 0.0;
    if let Some(executor) = transform_executor(ctx, action, request) {
        if ctx.kind(&executor) == Some(NodeKind::Edge) {
            let tc = transform_cost(ctx, action, request)?.expect("executor implies transform");
            edge_cpu_s = tc.cpu_s;
        }
    }
    Ok(monetary_cost(priced_bits, edge_cpu_s, &ctx.prices).total_usd)
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

fn guarded(term: f64, normalizer: Option<f64>) -> Result<f64, PolicyError> {
    match normalizer {
        None => Err(PolicyError::MissingNormalizer),
        Some(n) if n == 0.0 => Ok(0.0),
        Some(n) => Ok(term / n),
    }
}

/// Delivered-vs-requested ladder deviation for no-transform replacement
/// delivery; zero for every transform path.
fn replacement_deviation(action: &Action, request: &RequestEvent) -> f64 {
    if action.transform == Transform::None && action.source_rep > request.requested_rep {
        (action.source_rep - request.requested_rep) as f64
    } else {
        0.0
    }
}

/// The framework objective for one action. Smaller is better.
pub fn objective(
    ctx: &DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> Result<f64, PolicyError> {
    let latency = action_latency(ctx, action, request)?;
    let norm = ctx.normalizers;
    let lat_norm = norm.map(|n| n.latency_s);
    match ctx.weights {
        ObjectiveWeights::LatencyCost { beta } => {
            let mut obj = 0.0;
            if beta != 0.0 {
                obj += beta * guarded(latency, lat_norm)?;
            }
            if beta != 1.0 {
                let cost = action_cost(ctx, action, request)?;
                obj += (1.0 - beta) * guarded(cost, norm.map(|n| n.cost_usd))?;
            }
            Ok(obj)
        }
        ObjectiveWeights::LatencyOnly => guarded(latency, lat_norm),
        ObjectiveWeights::EsHas { a1, a2, a3 } => {
            let mut obj = 0.0;
            if a1 != 0.0 {
                obj += a1 * guarded(latency, lat_norm)?;
            }
            let f_star = ctx.replacement_window as f64;
            if a2 != 0.0 && f_star > 0.0 {
                obj += a2 * replacement_deviation(action, request) / f_star;
            }
            if a3 != 0.0 {
                let delivered = if action.transform == Transform::None {
                    action.source_rep
                } else {
                    request.requested_rep
                };
                obj -= a3 * ctx.ladder.bitrate(delivered) / ctx.ladder.max_bitrate();
            }
            Ok(obj)
        }
        ObjectiveWeights::Csdn { alpha, beta } => {
            let mut obj = 0.0;
            if alpha != 0.0 {
                obj += alpha * guarded(latency, lat_norm)?;
            }
            let f_star = ctx.replacement_window as f64;
            if beta != 0.0 && f_star > 0.0 {
                obj += beta * replacement_deviation(action, request) / f_star;
            }
            Ok(obj)
        }
    }
}

// ---------------------------------------------------------------------------
// Feasibility
// ---------------------------------------------------------------------------

/// Structural invariants every produced action must satisfy.
pub fn validate_action(
    ctx: &DecisionContext,
    action: &Action,
    request: &RequestEvent,
) -> bool {
    let source_kind = match ctx.kind(&action.source_node) {
        Some(k) => k,
        None => return false,
    };
    // No-transform delivery serves the requested rep itself, except the
    // replacement-quality trees, which may deliver a better rep unchanged.
    if action.transform == Transform::None
        && action.source_rep != request.requested_rep
        && !matches!(action.tree, ActionTree::EsHas | ActionTree::Csdn)
    {
        return false;
    }
    // The origin serves only the exact representation untransformed.
    if source_kind == NodeKind::Origin
        && (action.transform != Transform::None || action.source_rep != request.requested_rep)
    {
        return false;
    }
    // CDN servers never transcode; they may source a higher rep for others.
    if source_kind == NodeKind::Cdn {
        if let Some(executor) = transform_executor(ctx, action, request) {
            if executor == action.source_node {
                return false;
            }
        }
    }
    // Super-resolution runs only on the requesting peer.
    if action.transform == Transform::SrAtLocalPeer {
        if ctx.kind(&request.client_id).map(|k| k.is_peer()) != Some(true) {
            return false;
        }
        if action.source_rep >= request.requested_rep {
            return false;
        }
    }
    // Seeders never draw from leechers.
    if ctx.kind(&request.client_id) == Some(NodeKind::PeerSeeder)
        && source_kind == NodeKind::PeerLeecher
    {
        return false;
    }
    if let Some(relay) = &action.relay_via {
        if ctx.kind(relay).is_none() {
            return false;
        }
    }
    true
}

fn legs_feasible(ctx: &DecisionContext, action: &Action, request: &RequestEvent) -> bool {
    // Legs sharing one pair (the edge relay's out-and-back) must fit the
    // pair's bandwidth together.
    let mut per_pair: BTreeMap<(String, String), f64> = BTreeMap::new();
    for leg in action_legs(ctx, action, request) {
        let key = canonical_pair(&leg.from, &leg.to);
        *per_pair.entry(key).or_insert(0.0) += ctx.ladder.bitrate(leg.rep_index);
    }
    per_pair.iter().all(|((a, b), demand)| {
        ctx.bandwidth_between(a, b)
            .map(|bw| bw > 0.0 && bw >= *demand)
            .unwrap_or(false)
    })
}

fn compute_feasible(ctx: &DecisionContext, action: &Action, request: &RequestEvent) -> bool {
    let executor = match transform_executor(ctx, action, request) {
        None => return true,
        Some(e) => e,
    };
    let tc = match transform_cost(ctx, action, request) {
        Ok(Some(tc)) => tc,
        _ => return false,
    };
    let cpu_ok = ctx
        .cpu_remaining
        .get(&executor)
        .map(|&c| c >= tc.cpu_s)
        .unwrap_or(false);
    if !cpu_ok {
        return false;
    }
    if ctx.kind(&executor).map(|k| k.is_peer()) == Some(true) {
        let power_ok = ctx
            .power_remaining
            .get(&executor)
            .map(|&p| p >= tc.power_mah)
            .unwrap_or(false);
        if !power_ok {
            return false;
        }
    }
    // The edge relay only borrows a neighbor that keeps `thr_comp` of its
    // budget free after local work.
    if action.relay_via.is_some() && action.transform == Transform::TrAtEdge {
        let floor = ctx.thr_comp * ctx.cpu_capacity.get(&executor).copied().unwrap_or(0.0);
        let remaining = ctx.cpu_remaining.get(&executor).copied().unwrap_or(0.0);
        if remaining < floor {
            return false;
        }
    }
    true
}

fn push_if_feasible(
    ctx: &DecisionContext,
    request: &RequestEvent,
    out: &mut Vec<Action>,
    action: Action,
) {
    if let Some(allowed) = &ctx.allowed_variants {
        if !allowed.contains(&action.variant) {
            return;
        }
    }
    if validate_action(ctx, &action, request)
        && legs_feasible(ctx, &action, request)
        && compute_feasible(ctx, &action, request)
    {
        out.push(action);
    }
}

/// All actions of `tree` that satisfy the structural invariants,
/// availability, bandwidth, and resource headroom for `request`, ordered by
/// (variant, source, rep, relay).
pub fn feasible_actions(
    ctx: &DecisionContext,
    request: &RequestEvent,
    tree: ActionTree,
) -> Vec<Action> {
    let mut out = Vec::new();
    match tree {
        ActionTree::EsHas => eshas_actions(ctx, request, &mut out),
        ActionTree::Csdn => csdn_actions(ctx, request, &mut out),
        ActionTree::Sarena => sarena_actions(ctx, request, &mut out),
        ActionTree::Leader => leader_ararat_actions(ctx, request, ActionTree::Leader, &mut out),
        ActionTree::Ararat => leader_ararat_actions(ctx, request, ActionTree::Ararat, &mut out),
        ActionTree::Richter => richter_actions(ctx, request, &mut out),
        ActionTree::Alive => alive_actions(ctx, request, &mut out),
    }
    if tree == ActionTree::Sarena {
        // Chains that would blow the service deadline are not offered at all.
        out.retain(|a| {
            action_latency(ctx, a, request)
                .map(|l| l <= request.deadline_s)
                .unwrap_or(false)
        });
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out.dedup();
    out
}

fn mk(
    tree: ActionTree,
    variant: u8,
    source: &str,
    transform: Transform,
    source_rep: usize,
    relay: Option<&str>,
) -> Action {
    Action {
        tree,
        variant,
        source_node: source.to_string(),
        transform,
        source_rep,
        relay_via: relay.map(str::to_string),
    }
}

fn server_nodes(ctx: &DecisionContext, kind: NodeKind) -> impl Iterator<Item = &String> {
    ctx.node_kinds
        .iter()
        .filter(move |(_, k)| **k == kind)
        .map(|(id, _)| id)
}

/// ES-HAS: 1 exact from a cache server, 2 better replacement untransformed
/// from a cache server, 3 exact from the origin. When the exact rep is
/// cached anywhere, the model is forced to serve it from a cache.
fn eshas_actions(ctx: &DecisionContext, request: &RequestEvent, out: &mut Vec<Action>) {
    let seg = &request.segment;
    let req = request.requested_rep;
    let tree = ActionTree::EsHas;
    let exact_cached = server_nodes(ctx, NodeKind::Cdn).any(|c| ctx.has_rep(c, seg, req));
    for cdn in server_nodes(ctx, NodeKind::Cdn) {
        if ctx.has_rep(cdn, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 1, cdn, Transform::None, req, None));
        }
        if !exact_cached {
            for q in replacement_set(&ctx.ladder, req, ctx.replacement_window) {
                if q > req && ctx.has_rep(cdn, seg, q) {
                    push_if_feasible(ctx, request, out, mk(tree, 2, cdn, Transform::None, q, None));
                }
            }
        }
    }
    if !exact_cached {
        for origin in server_nodes(ctx, NodeKind::Origin) {
            if ctx.has_rep(origin, seg, req) {
                push_if_feasible(ctx, request, out, mk(tree, 3, origin, Transform::None, req, None));
            }
        }
    }
}

/// CSDN: 1 exact from a cache server, 2 better replacement untransformed,
/// 3 replacement fetched from a cache server and transcoded at the serving
/// edge, 4 exact from the origin.
fn csdn_actions(ctx: &DecisionContext, request: &RequestEvent, out: &mut Vec<Action>) {
    let seg = &request.segment;
    let req = request.requested_rep;
    let tree = ActionTree::Csdn;
    for cdn in server_nodes(ctx, NodeKind::Cdn) {
        if ctx.has_rep(cdn, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 1, cdn, Transform::None, req, None));
        }
        for q in replacement_set(&ctx.ladder, req, ctx.replacement_window) {
            if q > req && ctx.has_rep(cdn, seg, q) {
                push_if_feasible(ctx, request, out, mk(tree, 2, cdn, Transform::None, q, None));
                push_if_feasible(ctx, request, out, mk(tree, 3, cdn, Transform::TrAtEdge, q, None));
            }
        }
    }
    for origin in server_nodes(ctx, NodeKind::Origin) {
        if ctx.has_rep(origin, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 4, origin, Transform::None, req, None));
        }
    }
}

/// SARENA service chains: 1 edge-cache fetch, 2 edge transcode from its own
/// cache, 3 exact from a CDN, 4 exact from the origin, 5 CDN higher plus
/// edge transcode.
fn sarena_actions(ctx: &DecisionContext, request: &RequestEvent, out: &mut Vec<Action>) {
    let seg = &request.segment;
    let req = request.requested_rep;
    let les = &request.edge_id;
    let tree = ActionTree::Sarena;
    if ctx.has_rep(les, seg, req) {
        push_if_feasible(ctx, request, out, mk(tree, 1, les, Transform::None, req, None));
    }
    for p in req + 1..=ctx.ladder.max_index() {
        if ctx.has_rep(les, seg, p) {
            push_if_feasible(ctx, request, out, mk(tree, 2, les, Transform::TrAtEdge, p, None));
        }
    }
    for cdn in server_nodes(ctx, NodeKind::Cdn) {
        if ctx.has_rep(cdn, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 3, cdn, Transform::None, req, None));
        }
        for p in req + 1..=ctx.ladder.max_index() {
            if ctx.has_rep(cdn, seg, p) {
                push_if_feasible(ctx, request, out, mk(tree, 5, cdn, Transform::TrAtEdge, p, None));
            }
        }
    }
    for origin in server_nodes(ctx, NodeKind::Origin) {
        if ctx.has_rep(origin, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 4, origin, Transform::None, req, None));
        }
    }
}

/// The collaborative edge trees. LEADER numbering: 1 LES fetch, 2 LES TR,
/// 3 NES higher + TR at LES, 4 NES exact, 5 TR at NES then transmit,
/// 6 origin, 7 CDN higher + TR at LES, 8 CDN exact. ARARAT inserts the edge
/// relay as action 6 and shifts CDN/origin to 7 (CDN exact), 8 (CDN higher +
/// LES TR), 9 (origin).
fn leader_ararat_actions(
    ctx: &DecisionContext,
    request: &RequestEvent,
    tree: ActionTree,
    out: &mut Vec<Action>,
) {
    let seg = &request.segment;
    let req = request.requested_rep;
    let les = &request.edge_id;
    let is_ararat = tree == ActionTree::Ararat;
    let (v_origin, v_cdn_tr, v_cdn) = if is_ararat { (9, 8, 7) } else { (6, 7, 8) };

    if ctx.has_rep(les, seg, req) {
        push_if_feasible(ctx, request, out, mk(tree, 1, les, Transform::None, req, None));
    }
    for p in req + 1..=ctx.ladder.max_index() {
        if ctx.has_rep(les, seg, p) {
            push_if_feasible(ctx, request, out, mk(tree, 2, les, Transform::TrAtEdge, p, None));
            if is_ararat {
                // Relay the higher rep to a neighbor edge for transcoding.
                for nes in server_nodes(ctx, NodeKind::Edge).filter(|n| *n != les) {
                    push_if_feasible(
                        ctx,
                        request,
                        out,
                        mk(tree, 6, les, Transform::TrAtEdge, p, Some(nes)),
                    );
                }
            }
        }
    }
    for nes in server_nodes(ctx, NodeKind::Edge).filter(|n| *n != les) {
        if ctx.has_rep(nes, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 4, nes, Transform::None, req, None));
        }
        for p in req + 1..=ctx.ladder.max_index() {
            if ctx.has_rep(nes, seg, p) {
                push_if_feasible(ctx, request, out, mk(tree, 3, nes, Transform::TrAtEdge, p, None));
                push_if_feasible(ctx, request, out, mk(tree, 5, nes, Transform::TrAtEdge, p, None));
            }
        }
    }
    for cdn in server_nodes(ctx, NodeKind::Cdn) {
        if ctx.has_rep(cdn, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, v_cdn, cdn, Transform::None, req, None));
        }
        for p in req + 1..=ctx.ladder.max_index() {
            if ctx.has_rep(cdn, seg, p) {
                push_if_feasible(
                    ctx,
                    request,
                    out,
                    mk(tree, v_cdn_tr, cdn, Transform::TrAtEdge, p, None),
                );
            }
        }
    }
    for origin in server_nodes(ctx, NodeKind::Origin) {
        if ctx.has_rep(origin, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, v_origin, origin, Transform::None, req, None));
        }
    }
}

fn adjacent_peers<'a>(
    ctx: &'a DecisionContext,
    request: &'a RequestEvent,
) -> impl Iterator<Item = &'a String> {
    let region = ctx.peer_regions.get(&request.client_id);
    ctx.node_kinds
        .iter()
        .filter(|(id, k)| k.is_peer() && **id != request.client_id)
        .filter(move |(id, _)| ctx.peer_regions.get(*id) == region && region.is_some())
        .map(|(id, _)| id)
}

/// RICHTER: 1 peer exact, 2 TR at an adjacent peer, 3 tracker-edge fetch,
/// 4 tracker-edge TR from its own cache, 5 origin, 6 CDN higher + edge TR,
/// 7 CDN exact.
fn richter_actions(ctx: &DecisionContext, request: &RequestEvent, out: &mut Vec<Action>) {
    let seg = &request.segment;
    let req = request.requested_rep;
    let vts = &request.edge_id;
    let tree = ActionTree::Richter;
    for peer in adjacent_peers(ctx, request) {
        if ctx.has_rep(peer, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 1, peer, Transform::None, req, None));
        }
        for p in req + 1..=ctx.ladder.max_index() {
            if ctx.has_rep(peer, seg, p) {
                push_if_feasible(
                    ctx,
                    request,
                    out,
                    mk(tree, 2, peer, Transform::TrAtRemotePeer, p, None),
                );
            }
        }
    }
    if ctx.has_rep(vts, seg, req) {
        push_if_feasible(ctx, request, out, mk(tree, 3, vts, Transform::None, req, None));
    }
    for p in req + 1..=ctx.ladder.max_index() {
        if ctx.has_rep(vts, seg, p) {
            push_if_feasible(ctx, request, out, mk(tree, 4, vts, Transform::TrAtEdge, p, None));
        }
    }
    for origin in server_nodes(ctx, NodeKind::Origin) {
        if ctx.has_rep(origin, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 5, origin, Transform::None, req, None));
        }
    }
    for cdn in server_nodes(ctx, NodeKind::Cdn) {
        for p in req + 1..=ctx.ladder.max_index() {
            if ctx.has_rep(cdn, seg, p) {
                push_if_feasible(ctx, request, out, mk(tree, 6, cdn, Transform::TrAtEdge, p, None));
            }
        }
        if ctx.has_rep(cdn, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 7, cdn, Transform::None, req, None));
        }
    }
}

/// ALIVE: 1 peer exact, 2 peer TR (locally or at an adjacent peer), 3 peer
/// SR from one rung below, 4 tracker-edge fetch, 5 tracker-edge TR, 6 CDN
/// higher + edge TR, 7 CDN exact, 8 origin.
fn alive_actions(ctx: &DecisionContext, request: &RequestEvent, out: &mut Vec<Action>) {
    let seg = &request.segment;
    let req = request.requested_rep;
    let vts = &request.edge_id;
    let tree = ActionTree::Alive;
    let candidates = candidate_set_alive(&ctx.ladder, req, ctx.sr_window);
    for peer in adjacent_peers(ctx, request) {
        for (mode, rep) in &candidates {
            if !ctx.has_rep(peer, seg, *rep) {
                continue;
            }
            match mode {
                CandidateMode::Exact => {
                    push_if_feasible(ctx, request, out, mk(tree, 1, peer, Transform::None, req, None));
                }
                CandidateMode::TranscodeFrom => {
                    push_if_feasible(
                        ctx,
                        request,
                        out,
                        mk(tree, 2, peer, Transform::TrAtRemotePeer, *rep, None),
                    );
                }
                CandidateMode::SuperResolveFrom => {
                    push_if_feasible(
                        ctx,
                        request,
                        out,
                        mk(tree, 3, peer, Transform::SrAtLocalPeer, *rep, None),
                    );
                }
            }
        }
    }
    // The requesting peer may transcode down from a higher rep it holds.
    for (mode, rep) in &candidates {
        if *mode == CandidateMode::TranscodeFrom && ctx.has_rep(&request.client_id, seg, *rep) {
            push_if_feasible(
                ctx,
                request,
                out,
                mk(tree, 2, &request.client_id, Transform::TrAtLocalPeer, *rep, None),
            );
        }
    }
    if ctx.has_rep(vts, seg, req) {
        push_if_feasible(ctx, request, out, mk(tree, 4, vts, Transform::None, req, None));
    }
    for p in req + 1..=ctx.ladder.max_index() {
        if ctx.has_rep(vts, seg, p) {
            push_if_feasible(ctx, request, out, mk(tree, 5, vts, Transform::TrAtEdge, p, None));
        }
    }
    for cdn in server_nodes(ctx, NodeKind::Cdn) {
        for p in req + 1..=ctx.ladder.max_index() {
            if ctx.has_rep(cdn, seg, p) {
                push_if_feasible(ctx, request, out, mk(tree, 6, cdn, Transform::TrAtEdge, p, None));
            }
        }
        if ctx.has_rep(cdn, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 7, cdn, Transform::None, req, None));
        }
    }
    for origin in server_nodes(ctx, NodeKind::Origin) {
        if ctx.has_rep(origin, seg, req) {
            push_if_feasible(ctx, request, out, mk(tree, 8, origin, Transform::None, req, None));
        }
    }
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// The feasible action minimizing the objective; ties broken by the shared
/// (variant, source, rep, relay) key.
pub fn oracle_single(
    ctx: &DecisionContext,
    request: &RequestEvent,
    tree: ActionTree,
) -> Result<(Action, f64), PolicyError> {
    let actions = feasible_actions(ctx, request, tree);
    if actions.is_empty() {
        return Err(PolicyError::NoFeasibleAction);
    }
    let mut best: Option<(f64, Action)> = None;
    for action in actions {
        let obj = objective(ctx, &action, request)?;
        let replace = match &best {
            None => true,
            Some((b, _)) => obj < *b,
        };
        if replace {
            best = Some((obj, action));
        }
    }
    let (obj, action) = best.expect("non-empty action list");
    Ok((action, obj))
}

/// How an enumeration scores candidate assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scoring {
    /// The context's weighted objective.
    Weighted,
    /// Raw total latency, ignoring normalizers.
    RawLatency,
    /// Raw total dollar cost, ignoring normalizers.
    RawCost,
}

struct Candidate {
    action: Action,
    score: f64,
    latency: f64,
    cost: f64,
    legs: Vec<(String, String, f64)>, // canonical pair + bitrate demand
    cpu: Option<(String, f64)>,
    power: Option<(String, f64)>,
}

fn canonical_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub(crate) fn joint_minimize(
    ctx: &DecisionContext,
    requests: &[RequestEvent],
    tree: ActionTree,
    limit: u128,
    scoring: Scoring,
) -> Result<Assignment, PolicyError> {
    let mut per_request: Vec<Vec<Candidate>> = Vec::with_capacity(requests.len());
    let mut space: u128 = 1;
    for request in requests {
        let actions = feasible_actions(ctx, request, tree);
        if actions.is_empty() {
            return Err(PolicyError::InfeasibleInstance);
        }
        space = space.saturating_mul(actions.len() as u128);
        let mut cands = Vec::with_capacity(actions.len());
        for action in actions {
            let latency = action_latency(ctx, &action, request)?;
            let cost = action_cost(ctx, &action, request)?;
            let score = match scoring {
                Scoring::Weighted => objective(ctx, &action, request)?,
                Scoring::RawLatency => latency,
                Scoring::RawCost => cost,
            };
            let legs = action_legs(ctx, &action, request)
                .into_iter()
                .map(|leg| {
                    let (a, b) = canonical_pair(&leg.from, &leg.to);
                    (a, b, ctx.ladder.bitrate(leg.rep_index))
                })
                .collect();
            let executor = transform_executor(ctx, &action, request);
            let (cpu, power) = match executor {
                None => (None, None),
                Some(e) => {
                    let tc = transform_cost(ctx, &action, request)?
                        .expect("executor implies transform");
                    let power = if ctx.kind(&e).map(|k| k.is_peer()) == Some(true) {
                        Some((e.clone(), tc.power_mah))
                    } else {
                        None
                    };
                    (Some((e, tc.cpu_s)), power)
                }
            };
            cands.push(Candidate {
                action,
                score,
                latency,
                cost,
                legs,
                cpu,
                power,
            });
        }
        per_request.push(cands);
    }
    if space > limit {
        return Err(PolicyError::SearchSpaceTooLarge { size: space, limit });
    }

    // Admissible bound: the sum of per-request minima over the remaining tail.
    let mut suffix_min = vec![0.0; requests.len() + 1];
    for i in (0..requests.len()).rev() {
        let m = per_request[i]
            .iter()
            .map(|c| c.score)
            .fold(f64::INFINITY, f64::min);
        suffix_min[i] = suffix_min[i + 1] + m;
    }

    struct Search<'a> {
        per_request: &'a [Vec<Candidate>],
        suffix_min: &'a [f64],
        ctx: &'a DecisionContext,
        chosen: Vec<usize>,
        bw_used: BTreeMap<(String, String), f64>,
        cpu_used: BTreeMap<String, f64>,
        power_used: BTreeMap<String, f64>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn admissible(&self, cand: &Candidate) -> bool {
            for (a, b, demand) in &cand.legs {
                let cap = match self.ctx.bandwidth_between(a, b) {
                    Some(c) => c,
                    None => return false,
                };
                let used = self
                    .bw_used
                    .get(&(a.clone(), b.clone()))
                    .copied()
                    .unwrap_or(0.0);
                if used + demand > cap {
                    return false;
                }
            }
            if let Some((node, cpu)) = &cand.cpu {
                let cap = self.ctx.cpu_remaining.get(node).copied().unwrap_or(0.0);
                let used = self.cpu_used.get(node).copied().unwrap_or(0.0);
                if used + cpu > cap {
                    return false;
                }
            }
            if let Some((node, power)) = &cand.power {
                let cap = self.ctx.power_remaining.get(node).copied().unwrap_or(0.0);
                let used = self.power_used.get(node).copied().unwrap_or(0.0);
                if used + power > cap {
                    return false;
                }
            }
            true
        }

        fn apply(&mut self, cand: &Candidate, sign: f64) {
            for (a, b, demand) in &cand.legs {
                *self.bw_used.entry((a.clone(), b.clone())).or_insert(0.0) += sign * demand;
            }
            if let Some((node, cpu)) = &cand.cpu {
                *self.cpu_used.entry(node.clone()).or_insert(0.0) += sign * cpu;
            }
            if let Some((node, power)) = &cand.power {
                *self.power_used.entry(node.clone()).or_insert(0.0) += sign * power;
            }
        }

        fn dfs(&mut self, depth: usize, partial: f64) {
            if let Some((best, _)) = &self.best {
                // Strict bound keeps the first (lexicographically smallest)
                // optimal assignment.
                if partial + self.suffix_min[depth] > *best {
                    return;
                }
            }
            if depth == self.per_request.len() {
                let better = match &self.best {
                    None => true,
                    Some((b, _)) => partial < *b,
                };
                if better {
                    self.best = Some((partial, self.chosen.clone()));
                }
                return;
            }
            for (i, cand) in self.per_request[depth].iter().enumerate() {
                if !self.admissible(cand) {
                    continue;
                }
                self.apply(cand, 1.0);
                self.chosen.push(i);
                self.dfs(depth + 1, partial + cand.score);
                self.chosen.pop();
                self.apply(cand, -1.0);
            }
        }
    }

    let mut search = Search {
        per_request: &per_request,
        suffix_min: &suffix_min,
        ctx,
        chosen: Vec::new(),
        bw_used: BTreeMap::new(),
        cpu_used: BTreeMap::new(),
        power_used: BTreeMap::new(),
        best: None,
    };
    search.dfs(0, 0.0);

    let (objective, chosen) = search.best.ok_or(PolicyError::InfeasibleInstance)?;
    let mut actions = Vec::with_capacity(chosen.len());
    let mut total_latency = 0.0;
    let mut total_cost = 0.0;
    for (req_i, &cand_i) in chosen.iter().enumerate() {
        let c = &per_request[req_i][cand_i];
        total_latency += c.latency;
        total_cost += c.cost;
        actions.push(c.action.clone());
    }
    Ok(Assignment {
        actions,
        feasible: true,
        objective,
        total_latency_s: total_latency,
        total_cost_usd: total_cost,
    })
}

/// Exhaustive minimum-total-objective assignment under shared link, compute
/// and power constraints. Deterministic: among ties the lexicographically
/// first assignment (per-request action order) wins.
pub fn oracle_joint(
    ctx: &DecisionContext,
    requests: &[RequestEvent],
    tree: ActionTree,
    limit: u128,
) -> Result<Assignment, PolicyError> {
    joint_minimize(ctx, requests, tree, limit, Scoring::Weighted)
}

pub const DEFAULT_JOINT_LIMIT: u128 = 1_000_000;

/// Latency and cost normalizers for an instance: the total latency of the
/// cost-optimal assignment and the total cost of the latency-optimal one.
pub fn compute_normalizers(
    ctx: &DecisionContext,
    requests: &[RequestEvent],
    tree: ActionTree,
    limit: u128,
) -> Result<Normalizers, PolicyError> {
    let min_cost = joint_minimize(ctx, requests, tree, limit, Scoring::RawCost)?;
    let min_latency = joint_minimize(ctx, requests, tree, limit, Scoring::RawLatency)?;
    Ok(Normalizers {
        latency_s: min_cost.total_latency_s,
        cost_usd: min_latency.total_cost_usd,
    })
}
