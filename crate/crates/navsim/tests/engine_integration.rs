//! End-to-end engine behavior on small programmatic worlds: deduplication,
//! conservation, determinism, and the crash-on-breach contract.

use std::sync::Arc;

use navsim::catalog::{Ladder, SegmentId};
use navsim::costs::{PriceBook, SrProfile, TranscodeProfile};
use navsim::engine::{preset, EngineConfig, EngineError, Simulation, SimulationInput};
use navsim::topology::{build_topology, LinkSpec, NodeKind, NodeSpec, Topology, TopologyConfig};
use navsim::workload::{
    generate_requests, BandwidthTrace, ClientSpec, ContentSpec, ServiceClass, WorkloadSpec,
};

fn node(id: &str, kind: NodeKind, cpu: f64, cache: usize) -> NodeSpec {
    NodeSpec {
        id: id.to_string(),
        kind,
        cpu_capacity: cpu,
        power_capacity: if kind.is_peer() { 1000.0 } else { 0.0 },
        cache_capacity: cache,
        join_time: 0.0,
        leave_time: None,
    }
}

fn link(id: &str, a: &str, b: &str, mbps: f64) -> LinkSpec {
    LinkSpec {
        id: id.to_string(),
        endpoints: (a.to_string(), b.to_string()),
        capacity_bps: mbps * 1e6,
    }
}

fn edge_topology() -> Topology {
    build_topology(TopologyConfig {
        nodes: vec![
            node("origin", NodeKind::Origin, 0.0, 0),
            node("cdn1", NodeKind::Cdn, 0.0, 1000),
            node("edge1", NodeKind::Edge, 8.0, 20),
        ],
        links: vec![
            link("l-oe", "origin", "edge1", 20.0),
            link("l-ce", "cdn1", "edge1", 100.0),
        ],
    })
    .unwrap()
}

fn input_for(policy: &str, clients: Vec<ClientSpec>, slots: u64) -> SimulationInput {
    let ladder = Ladder::default_live();
    let contents = vec![ContentSpec {
        content_id: "ch1".into(),
        kind: ServiceClass::Live,
        n_segments: 150,
    }];
    let spec = WorkloadSpec {
        clients: clients.clone(),
        contents: contents.clone(),
        zipf_alpha: 0.7,
        slots,
        slot_duration_s: 0.5,
        segment_duration_s: ladder.segment_duration_s,
        live_deadline_s: 2.0,
        vod_deadline_s: 4.0,
    };
    let requests = generate_requests(&spec, 7).unwrap();
    let seg0 = SegmentId::new("ch1", 0);
    SimulationInput {
        topology: edge_topology(),
        ladder,
        contents,
        clients,
        requests,
        trace: BandwidthTrace::constant(3.78e6),
        transcode: Arc::new(TranscodeProfile::measured_default()),
        sr: Arc::new(SrProfile::bundled_default()),
        prices: PriceBook::default_cloud(),
        preset: preset(policy).unwrap(),
        config: EngineConfig {
            slots,
            ..EngineConfig::default()
        },
        seeded_cache: vec![("cdn1".to_string(), seg0, 3)],
        seed: 7,
    }
}

fn clients_behind(edge: &str, n: usize) -> Vec<ClientSpec> {
    (0..n)
        .map(|i| ClientSpec {
            id: format!("{edge}-c{i:02}"),
            edge_id: edge.to_string(),
            join_s: 0.0,
            leave_s: None,
        })
        .collect()
}

#[test]
fn identical_concurrent_requests_share_one_fetch() {
    // Two clients of the same live channel: one upstream fetch per segment,
    // two client deliveries.
    let input = input_for("leader", clients_behind("edge1", 2), 8);
    let sim = Simulation::new(input);
    let out = sim.run_to_completion().unwrap();
    // Both clients got every delivered segment.
    for row in &out.per_client {
        assert!(row.asb_mbps > 0.0, "client {} never played", row.client_id);
    }
    // Every slot with arrivals served exactly one fetch and held its twin.
    let served: u64 = out.per_slot.iter().map(|r| r.served).sum();
    let held: u64 = out.per_slot.iter().map(|r| r.held).sum();
    assert_eq!(out.report.served_requests, served);
    assert_eq!(held, out.report.held_requests);
    assert_eq!(out.report.held_requests * 2, out.report.served_requests);
}

#[test]
fn slot_with_no_arrivals_only_moves_clock() {
    let input = input_for("leader", clients_behind("edge1", 1), 2);
    let mut sim = Simulation::new(input);
    sim.run_slot().unwrap();
    sim.run_slot().unwrap();
    // Live pacing leaves the second slot empty (segment 0 spans 4 slots).
    assert_eq!(sim.slot_index(), 2);
}

#[test]
fn injected_overcommit_aborts_with_diagnostic() {
    let input = input_for("leader", clients_behind("edge1", 2), 8);
    let mut sim = Simulation::new(input);
    sim.run_slot().unwrap();
    sim.inject_overcommit();
    match sim.run_slot() {
        Err(EngineError::Conservation { link, .. }) => {
            assert!(!link.is_empty());
        }
        other => panic!("expected conservation abort, got {other:?}"),
    }
}

#[test]
fn determinism_end_to_end_per_preset_family() {
    for policy in ["leader", "eshas", "sarena", "ararat-fg2"] {
        let a = Simulation::new(input_for(policy, clients_behind("edge1", 3), 12))
            .run_to_completion()
            .unwrap();
        let b = Simulation::new(input_for(policy, clients_behind("edge1", 3), 12))
            .run_to_completion()
            .unwrap();
        let ja = serde_json::to_string(&a.report).unwrap();
        let jb = serde_json::to_string(&b.report).unwrap();
        assert_eq!(ja, jb, "{policy} not deterministic");
        assert!(a.report.served_requests > 0, "{policy} served nothing");
    }
}

fn p2p_input(policy: &str, slots: u64) -> SimulationInput {
    let mut nodes = vec![
        node("origin", NodeKind::Origin, 0.0, 0),
        node("cdn1", NodeKind::Cdn, 0.0, 1000),
        node("vts", NodeKind::Edge, 8.0, 20),
    ];
    for i in 0..6 {
        let kind = if i < 2 {
            NodeKind::PeerSeeder
        } else {
            NodeKind::PeerLeecher
        };
        nodes.push(node(&format!("p{i}"), kind, 2.0, 5));
    }
    let topology = build_topology(TopologyConfig {
        nodes,
        links: vec![
            link("l-ov", "origin", "vts", 1.0),
            link("l-cv", "cdn1", "vts", 100.0),
        ],
    })
    .unwrap();
    let ladder = Ladder::default_live();
    let contents = vec![ContentSpec {
        content_id: "ch1".into(),
        kind: ServiceClass::Live,
        n_segments: 150,
    }];
    let clients: Vec<ClientSpec> = (0..6)
        .map(|i| ClientSpec {
            id: format!("p{i}"),
            edge_id: "vts".into(),
            join_s: 0.0,
            leave_s: None,
        })
        .collect();
    let spec = WorkloadSpec {
        clients: clients.clone(),
        contents: contents.clone(),
        zipf_alpha: 0.7,
        slots,
        slot_duration_s: 0.5,
        segment_duration_s: ladder.segment_duration_s,
        live_deadline_s: 2.0,
        vod_deadline_s: 4.0,
    };
    let requests = generate_requests(&spec, 11).unwrap();
    let mut seeded = Vec::new();
    for idx in 0..40 {
        for rep in [2usize, 3, 4] {
            seeded.push(("cdn1".to_string(), SegmentId::new("ch1", idx), rep));
        }
    }
    SimulationInput {
        topology,
        ladder,
        contents,
        clients,
        requests,
        trace: BandwidthTrace::constant(3.78e6),
        transcode: Arc::new(TranscodeProfile::measured_default()),
        sr: Arc::new(SrProfile::bundled_default()),
        prices: PriceBook::default_cloud(),
        preset: preset(policy).unwrap(),
        config: EngineConfig {
            slots,
            ..EngineConfig::default()
        },
        seeded_cache: seeded,
        seed: 11,
    }
}

#[test]
fn p2p_presets_run_and_conserve() {
    for policy in ["alive", "richter", "nth", "ect"] {
        let out = Simulation::new(p2p_input(policy, 16))
            .run_to_completion()
            .unwrap_or_else(|e| panic!("{policy}: {e}"));
        assert!(out.report.served_requests > 0, "{policy} served nothing");
        // Ratio conservation identities hold exactly.
        assert_eq!(out.report.chr + out.report.origin_ratio, 1.0, "{policy}");
        assert_eq!(
            out.report.etr + out.report.ptsr + out.report.direct_ratio,
            1.0,
            "{policy}"
        );
    }
}

#[test]
fn alive_uses_edge_transcoding_on_cache_misses() {
    // Thin origin, upper-rung CDN cache: the greedy tree should transcode.
    let out = Simulation::new(p2p_input("alive", 24))
        .run_to_completion()
        .unwrap();
    assert!(out.report.etr > 0.0, "no edge transcodes: {:?}", out.report);
    let baseline = Simulation::new(p2p_input("nth", 24))
        .run_to_completion()
        .unwrap();
    assert!(out.report.chr > baseline.report.chr);
    assert!(out.report.btl_bits < baseline.report.btl_bits);
}
