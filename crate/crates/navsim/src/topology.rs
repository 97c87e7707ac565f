//! The delivery network graph: origin, CDN, edge and peer nodes joined by
//! capacitated links.
//!
//! Topologies are undirected with symmetric capacity, immutable after
//! [`build_topology`]. Bandwidth reservations live in a separate
//! [`ReservationLedger`] owned by the simulation run, so read-only path
//! queries can be issued freely against the shared graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Role of a node in the delivery network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Origin,
    Cdn,
    Edge,
    PeerSeeder,
    PeerLeecher,
}

impl NodeKind {
    pub fn is_peer(self) -> bool {
        matches!(self, NodeKind::PeerSeeder | NodeKind::PeerLeecher)
    }

    pub fn is_server(self) -> bool {
        !self.is_peer()
    }
}

/// One node of the topology.
///
/// `cpu_capacity` is the compute budget per slot in cpu-seconds,
/// `power_capacity` the battery budget in mAh (peers only; never replenished),
/// `cache_capacity` the cache size counted in segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub cpu_capacity: f64,
    #[serde(default)]
    pub power_capacity: f64,
    #[serde(default)]
    pub cache_capacity: usize,
    /// Seconds since run start at which the node joins.
    #[serde(default)]
    pub join_time: f64,
    /// Seconds at which it leaves; `None` means it stays for the whole run.
    #[serde(default)]
    pub leave_time: Option<f64>,
}

/// One undirected link with symmetric capacity in bits per second.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub endpoints: (String, String),
    pub capacity_bps: f64,
}

/// An ordered walk of links from `src` to `dst`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub src: String,
    pub dst: String,
    pub links: Vec<String>,
}

impl Path {
    pub fn hop_count(&self) -> usize {
        self.links.len()
    }
}

/// Metric used by [`select_path`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMetric {
    /// Minimum number of hops; ties by smallest link-id sequence.
    ShortestHop,
    /// Maximum of `bottleneck_bandwidth / hop_count`; ties by smallest
    /// link-id sequence.
    MaxBwPerHop,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("link {link:?} references unknown node {node:?}")]
    DanglingEndpoint { link: String, node: String },
    #[error("link {0:?} must have positive capacity")]
    NonPositiveCapacity(String),
    #[error("link {0:?} endpoints must be distinct")]
    LoopLink(String),
    #[error("topology must contain exactly one origin node, found {0}")]
    OriginCount(usize),
    #[error("negative resource budget on node {0:?}")]
    NegativeBudget(String),
    #[error("leecher {0:?} must have a finite power budget")]
    LeecherWithoutPower(String),
    #[error("no route from {src:?} to {dst:?}")]
    Unreachable { src: String, dst: String },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown link {0:?}")]
    UnknownLink(String),
    #[error("path does not form a walk from src to dst")]
    BrokenWalk,
}

/// Validated, immutable delivery graph.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkSpec>,
    node_index: BTreeMap<String, usize>,
    link_index: BTreeMap<String, usize>,
    /// adjacency: node idx -> [(link idx, neighbor idx)], sorted by link id
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Structured description of a topology, as read from the topology file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

/// Validates a config and builds the graph. Node and link lookups on the
/// result are O(log n); adjacency is precomputed in link-id order so every
/// traversal is deterministic.
pub fn build_topology(config: TopologyConfig) -> Result<Topology, TopologyError> {
    let mut node_index = BTreeMap::new();
    for (i, n) in config.nodes.iter().enumerate() {
        if node_index.insert(n.id.clone(), i).is_some() {
            return Err(TopologyError::DuplicateId(n.id.clone()));
        }
        if n.cpu_capacity < 0.0 || n.power_capacity < 0.0 {
            return Err(TopologyError::NegativeBudget(n.id.clone()));
        }
        if n.kind == NodeKind::PeerLeecher && !n.power_capacity.is_finite() {
            return Err(TopologyError::LeecherWithoutPower(n.id.clone()));
        }
    }
    let origins = config
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Origin)
        .count();
    if origins != 1 {
        return Err(TopologyError::OriginCount(origins));
    }
    let mut link_index = BTreeMap::new();
    for (i, l) in config.links.iter().enumerate() {
        if link_index.insert(l.id.clone(), i).is_some() || node_index.contains_key(&l.id) {
            return Err(TopologyError::DuplicateId(l.id.clone()));
        }
        for end in [&l.endpoints.0, &l.endpoints.1] {
            if !node_index.contains_key(end) {
                return Err(TopologyError::DanglingEndpoint {
                    link: l.id.clone(),
                    node: end.clone(),
                });
            }
        }
        if l.endpoints.0 == l.endpoints.1 {
            return Err(TopologyError::LoopLink(l.id.clone()));
        }
        if !(l.capacity_bps > 0.0) {
            return Err(TopologyError::NonPositiveCapacity(l.id.clone()));
        }
    }

    let mut adjacency = vec![Vec::new(); config.nodes.len()];
    let mut by_id: Vec<usize> = (0..config.links.len()).collect();
    by_id.sort_by(|a, b| config.links[*a].id.cmp(&config.links[*b].id));
    for li in by_id {
        let l = &config.links[li];
        let a = node_index[&l.endpoints.0];
        let b = node_index[&l.endpoints.1];
        adjacency[a].push((li, b));
        adjacency[b].push((li, a));
    }

    Ok(Topology {
        nodes: config.nodes,
        links: config.links,
        node_index,
        link_index,
        adjacency,
    })
}

impl Topology {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn link(&self, id: &str) -> Option<&LinkSpec> {
        self.link_index.get(id).map(|&i| &self.links[i])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter()
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkSpec> {
        self.links.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Ids of all nodes of the given kind, ascending.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<&NodeSpec> {
        self.node_index
            .values()
            .map(|&i| &self.nodes[i])
            .filter(|n| n.kind == kind)
            .collect()
    }

    pub fn origin(&self) -> &NodeSpec {
        self.nodes
            .iter()
            .find(|n| n.kind == NodeKind::Origin)
            .expect("validated topology has an origin")
    }

    fn endpoint_indices(&self, link: usize) -> (usize, usize) {
        let l = &self.links[link];
        (
            self.node_index[&l.endpoints.0],
            self.node_index[&l.endpoints.1],
        )
    }

    /// Checks that `path.links` form a connected walk from src to dst.
    pub fn validate_path(&self, path: &Path) -> Result<(), TopologyError> {
        let mut at = *self
            .node_index
            .get(&path.src)
            .ok_or_else(|| TopologyError::UnknownNode(path.src.clone()))?;
        let dst = *self
            .node_index
            .get(&path.dst)
            .ok_or_else(|| TopologyError::UnknownNode(path.dst.clone()))?;
        for lid in &path.links {
            let li = *self
                .link_index
                .get(lid)
                .ok_or_else(|| TopologyError::UnknownLink(lid.clone()))?;
            let (a, b) = self.endpoint_indices(li);
            at = if at == a {
                b
            } else if at == b {
                a
            } else {
                return Err(TopologyError::BrokenWalk);
            };
        }
        if at != dst {
            return Err(TopologyError::BrokenWalk);
        }
        Ok(())
    }
}

/// Per-run bandwidth reservations: leases of `bps` on a link until an
/// absolute release time. The engine expires leases at slot boundaries and
/// whenever transfers complete.
#[derive(Debug, Clone, Default)]
pub struct ReservationLedger {
    leases: BTreeMap<String, Vec<(f64, f64)>>, // link id -> [(bps, until)]
}

impl ReservationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserved_on(&self, link_id: &str) -> f64 {
        self.leases
            .get(link_id)
            .map(|v| v.iter().map(|(bps, _)| bps).sum())
            .unwrap_or(0.0)
    }

    pub fn reserve(&mut self, link_id: &str, bps: f64, until: f64) {
        self.leases
            .entry(link_id.to_string())
            .or_default()
            .push((bps, until));
    }

    /// Drops every lease whose release time is <= `now`.
    pub fn release_expired(&mut self, now: f64) {
        for leases in self.leases.values_mut() {
            leases.retain(|&(_, until)| until > now);
        }
        self.leases.retain(|_, v| !v.is_empty());
    }

    /// True iff no link is over-committed against the topology capacities.
    pub fn conserves(&self, topology: &Topology) -> bool {
        self.leases.iter().all(|(id, leases)| {
            let cap = topology.link(id).map(|l| l.capacity_bps).unwrap_or(0.0);
            let used: f64 = leases.iter().map(|(bps, _)| bps).sum();
            used <= cap * (1.0 + 1e-9)
        })
    }
}

/// Minimum over the path's links of `capacity - reserved`.
pub fn residual_bandwidth(topology: &Topology, path: &Path, ledger: &ReservationLedger) -> f64 {
    path.links
        .iter()
        .map(|id| {
            let link = topology.link(id).expect("path validated against topology");
            (link.capacity_bps - ledger.reserved_on(id)).max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Deterministic path selection between two nodes.
///
/// `ShortestHop` minimizes the hop count. `MaxBwPerHop` maximizes
/// `residual bottleneck / hop count`, the selection rule used when edge
/// servers pick routes toward CDN and neighbor servers. Both break ties by
/// the lexicographically smallest ordered link-id sequence.
pub fn select_path(
    topology: &Topology,
    src: &str,
    dst: &str,
    metric: PathMetric,
    ledger: &ReservationLedger,
) -> Result<Path, TopologyError> {
    let si = *topology
        .node_index
        .get(src)
        .ok_or_else(|| TopologyError::UnknownNode(src.to_string()))?;
    let di = *topology
        .node_index
        .get(dst)
        .ok_or_else(|| TopologyError::UnknownNode(dst.to_string()))?;
    if si == di {
        return Err(TopologyError::Unreachable {
            src: src.to_string(),
            dst: dst.to_string(),
        });
    }

    let residual = |li: usize| -> f64 {
        let l = &topology.links[li];
        (l.capacity_bps - ledger.reserved_on(&l.id)).max(0.0)
    };

    match metric {
        PathMetric::ShortestHop => bfs_best(topology, si, di, None)
            .map(|links| to_path(topology, src, dst, links))
            .ok_or_else(|| TopologyError::Unreachable {
                src: src.to_string(),
                dst: dst.to_string(),
            }),
        PathMetric::MaxBwPerHop => {
            // Extending a path can only lower its bottleneck and raise its hop
            // count, so the optimum is a min-hop path over some capacity
            // threshold. Scanning the distinct residuals as thresholds covers
            // every candidate bottleneck exactly.
            let mut thresholds: Vec<f64> = (0..topology.links.len())
                .map(residual)
                .filter(|r| *r > 0.0)
                .collect();
            thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
            thresholds.dedup();
            let mut best: Option<(f64, Vec<usize>)> = None;
            for t in thresholds {
                let filter: &dyn Fn(usize) -> f64 = &residual;
                if let Some(links) = bfs_best(topology, si, di, Some((t, filter))) {
                    let bottleneck = links
                        .iter()
                        .map(|&li| residual(li))
                        .fold(f64::INFINITY, f64::min);
                    let score = bottleneck / links.len() as f64;
                    let better = match &best {
                        None => true,
                        Some((bs, bl)) => {
                            score > *bs
                                || (score == *bs && link_seq(topology, &links) < link_seq(topology, bl))
                        }
                    };
                    if better {
                        best = Some((score, links));
                    }
                }
            }
            best.map(|(_, links)| to_path(topology, src, dst, links))
                .ok_or_else(|| TopologyError::Unreachable {
                    src: src.to_string(),
                    dst: dst.to_string(),
                })
        }
    }
}

fn link_seq<'a>(topology: &'a Topology, links: &[usize]) -> Vec<&'a str> {
    links.iter().map(|&li| topology.links[li].id.as_str()).collect()
}

fn to_path(topology: &Topology, src: &str, dst: &str, links: Vec<usize>) -> Path {
    Path {
        src: src.to_string(),
        dst: dst.to_string(),
        links: links
            .into_iter()
            .map(|li| topology.links[li].id.clone())
            .collect(),
    }
}

/// Level-synchronized BFS keeping, per node, the lexicographically smallest
/// link-id sequence that reaches it at its first (minimal) depth. `filter`
/// optionally restricts traversal to links with residual >= threshold.
fn bfs_best(
    topology: &Topology,
    src: usize,
    dst: usize,
    filter: Option<(f64, &dyn Fn(usize) -> f64)>,
) -> Option<Vec<usize>> {
    let n = topology.nodes.len();
    let mut best_at: Vec<Option<Vec<usize>>> = vec![None; n];
    best_at[src] = Some(Vec::new());
    let mut frontier = vec![src];
    while !frontier.is_empty() {
        if best_at[dst].is_some() {
            break;
        }
        let mut next: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &u in &frontier {
            let base = best_at[u].clone().expect("frontier nodes have paths");
            for &(li, v) in &topology.adjacency[u] {
                if best_at[v].is_some() {
                    continue;
                }
                if let Some((t, residual)) = filter {
                    if residual(li) < t {
                        continue;
                    }
                }
                let mut cand = base.clone();
                cand.push(li);
                match next.get(&v) {
                    Some(existing)
                        if link_seq(topology, existing) <= link_seq(topology, &cand) => {}
                    _ => {
                        next.insert(v, cand);
                    }
                }
            }
        }
        frontier = next.keys().copied().collect();
        for (v, links) in next {
            best_at[v] = Some(links);
        }
    }
    best_at[dst].take()
}
