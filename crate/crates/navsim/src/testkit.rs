//! Deterministic random-instance generators for the verification suites.
//!
//! Everything here is test support: contexts with randomized availability,
//! bandwidth and resource budgets that always keep at least one feasible
//! route per request (the origin fallback), plus random fairness instances.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::catalog::{Ladder, SegmentId};
use crate::costs::{NodeClass, PriceBook, SrProfile, TranscodeProfile};
use crate::heuristics::FlowDemand;
use crate::policy::{ActionTree, DecisionContext, Normalizers, ObjectiveWeights};
use crate::topology::{NodeKind, Path};
use crate::workload::{RequestEvent, ServiceClass};

/// A generated single- or multi-request decision instance.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub ctx: DecisionContext,
    pub requests: Vec<RequestEvent>,
}

fn put_avail(ctx: &mut DecisionContext, node: &str, seg: &SegmentId, rep: usize) {
    ctx.availability
        .entry(node.to_string())
        .or_default()
        .insert((seg.clone(), rep));
}

fn add_node(ctx: &mut DecisionContext, id: &str, kind: NodeKind, class: NodeClass) {
    ctx.node_kinds.insert(id.to_string(), kind);
    ctx.node_classes.insert(id.to_string(), class);
}

fn bare_context(weights: ObjectiveWeights) -> DecisionContext {
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
        replacement_window: 3,
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

fn default_weights<R: Rng>(tree: ActionTree, rng: &mut R) -> ObjectiveWeights {
    match tree {
        ActionTree::EsHas => ObjectiveWeights::EsHas {
            a1: 0.8,
            a2: 0.1,
            a3: 0.1,
        },
        ActionTree::Csdn => ObjectiveWeights::Csdn {
            alpha: 0.9,
            beta: 0.1,
        },
        ActionTree::Sarena | ActionTree::Leader | ActionTree::Richter => {
            ObjectiveWeights::LatencyOnly
        }
        ActionTree::Ararat | ActionTree::Alive => ObjectiveWeights::LatencyCost {
            beta: rng.gen_range(0.0..=1.0),
        },
    }
}

/// A randomized context plus `n_requests` requests for `tree`, guaranteed to
/// leave every request at least one feasible action (the origin holds every
/// exact rep behind a generously sized pair).
pub fn random_instance<R: Rng>(tree: ActionTree, n_requests: usize, rng: &mut R) -> RandomInstance {
    let mut ctx = bare_context(default_weights(tree, rng));
    let p2p = tree.is_p2p();
    let edge = "edge0";
    add_node(&mut ctx, "origin", NodeKind::Origin, NodeClass::Edge);
    add_node(&mut ctx, edge, NodeKind::Edge, NodeClass::Edge);
    let n_cdn = rng.gen_range(1..=2);
    for i in 0..n_cdn {
        add_node(&mut ctx, &format!("cdn{i}"), NodeKind::Cdn, NodeClass::Edge);
    }
    if matches!(tree, ActionTree::Leader | ActionTree::Ararat) {
        for i in 0..rng.gen_range(1..=2) {
            add_node(&mut ctx, &format!("nes{i}"), NodeKind::Edge, NodeClass::Edge);
        }
    }
    let mut peers: Vec<String> = Vec::new();
    if p2p {
        for i in 0..rng.gen_range(3..=6) {
            let id = format!("p{i}");
            let kind = if i % 3 == 0 {
                NodeKind::PeerSeeder
            } else {
                NodeKind::PeerLeecher
            };
            let class = if i % 2 == 0 {
                NodeClass::PeerPc
            } else {
                NodeClass::PeerMobile
            };
            add_node(&mut ctx, &id, kind, class);
            ctx.peer_regions.insert(id.clone(), edge.to_string());
            peers.push(id);
        }
    }

    // Compute and power budgets: sometimes scarce, sometimes plentiful.
    let nodes: Vec<String> = ctx.node_kinds.keys().cloned().collect();
    for id in &nodes {
        let kind = ctx.node_kinds[id];
        let cpu = match kind {
            NodeKind::Edge => rng.gen_range(0.0..4.0),
            k if k.is_peer() => rng.gen_range(0.0..2.0),
            _ => 0.0,
        };
        ctx.cpu_remaining.insert(id.clone(), cpu);
        ctx.cpu_capacity.insert(id.clone(), cpu.max(1e-9));
        if kind.is_peer() {
            ctx.power_remaining
                .insert(id.clone(), rng.gen_range(0.0..20.0));
        }
    }

    // Bandwidth: random pairs, with the origin's route generously sized so
    // the exact-fetch fallback always fits every request in the batch.
    let top = ctx.ladder.max_bitrate();
    let dests: Vec<String> = if p2p {
        peers.clone()
    } else {
        vec![edge.to_string()]
    };
    for dest in &dests {
        for src in &nodes {
            if src == dest {
                continue;
            }
            // One entry per unordered pair.
            let key = if src < dest {
                (src.clone(), dest.clone())
            } else {
                (dest.clone(), src.clone())
            };
            if ctx.bandwidth.contains_key(&key) {
                continue;
            }
            let bw = if src == "origin" {
                top * n_requests as f64 * 1.5
            } else {
                // Occasionally too thin for anything.
                if rng.gen_bool(0.15) {
                    rng.gen_range(0.0..ctx.ladder.bitrate(0))
                } else {
                    rng.gen_range(ctx.ladder.bitrate(1)..30e6)
                }
            };
            ctx.bandwidth.insert(key, bw);
        }
    }
    if matches!(tree, ActionTree::Leader | ActionTree::Ararat) {
        // Neighbor edges and CDNs reach the serving edge too.
        for src in &nodes {
            if src == edge {
                continue;
            }
            let key = if src.as_str() < edge {
                (src.clone(), edge.to_string())
            } else {
                (edge.to_string(), src.clone())
            };
            ctx.bandwidth
                .entry(key)
                .or_insert_with(|| rng.gen_range(5e6..200e6));
        }
    }

    // One shared segment with randomized cache placement.
    let seg = SegmentId::new("v1", rng.gen_range(0..100));
    let ladder_len = ctx.ladder.len();
    for rep in 0..ladder_len {
        put_avail(&mut ctx, "origin", &seg, rep);
    }
    for id in &nodes {
        if id == "origin" {
            continue;
        }
        for rep in 0..ladder_len {
            if rng.gen_bool(0.35) {
                put_avail(&mut ctx, id, &seg, rep);
            }
        }
    }

    let mut requests = Vec::new();
    for i in 0..n_requests {
        let client = if p2p {
            peers[i % peers.len()].clone()
        } else {
            format!("c{i}")
        };
        requests.push(RequestEvent {
            client_id: client,
            edge_id: edge.to_string(),
            segment: seg.clone(),
            requested_rep: rng.gen_range(0..ladder_len),
            arrival_slot: 0,
            deadline_s: rng.gen_range(2.0..6.0),
            service_class: ServiceClass::Live,
        });
    }
    RandomInstance { ctx, requests }
}

/// A random fairness instance: up to `max_links` links and `max_flows` flows
/// with random link membership and demands.
pub fn random_fairness_instance<R: Rng>(
    max_links: usize,
    max_flows: usize,
    rng: &mut R,
) -> (BTreeMap<String, f64>, Vec<FlowDemand>) {
    let n_links = rng.gen_range(1..=max_links);
    let mut caps = BTreeMap::new();
    for i in 0..n_links {
        caps.insert(format!("l{i}"), rng.gen_range(10e6..500e6));
    }
    let n_flows = rng.gen_range(1..=max_flows);
    let mut flows = Vec::new();
    for f in 0..n_flows {
        let mut links = Vec::new();
        for i in 0..n_links {
            if rng.gen_bool(0.5) {
                links.push(format!("l{i}"));
            }
        }
        if links.is_empty() {
            links.push(format!("l{}", rng.gen_range(0..n_links)));
        }
        flows.push(FlowDemand {
            edge_id: format!("e{f}"),
            server_id: format!("s{f}"),
            demand_bps: rng.gen_range(1e6..600e6),
            path: Path {
                src: format!("e{f}"),
                dst: format!("s{f}"),
                links,
            },
        });
    }
    (caps, flows)
}
