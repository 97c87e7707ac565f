//! The acceptance gate: one test per criterion, each printing a PASS line
//! with the measured figures. Golden values, oracle equivalence, and
//! qualitative trend checks at desk scale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use navsim::engine::{deplete, Simulation};
use navsim::heuristics::{binding_link, efg1, gba, leader_allocate, sfg_allocate, FlowDemand};
use navsim::learning::{bmu, refresh_from_monitoring, som_update, Neuron, SomConfig};
use navsim::policy::{
    action_cost, action_latency, action_legs, compute_normalizers, feasible_actions, objective,
    oracle_joint, oracle_single, transform_cost, transform_executor, ActionTree, Transform,
};
use navsim::rng::stream;
use navsim::scenario::{DemandsFile, Scenario};
use navsim::testkit::{random_fairness_instance, random_instance};
use navsim::topology::NodeKind;
use navsim::workload::{sample_index, zipf_probabilities};
use navsim_cli::allocate_from_file;
use rand::Rng;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

const TREES: [ActionTree; 7] = [
    ActionTree::EsHas,
    ActionTree::Csdn,
    ActionTree::Sarena,
    ActionTree::Leader,
    ActionTree::Ararat,
    ActionTree::Richter,
    ActionTree::Alive,
];

#[test]
fn criterion_01_fairness_golden_table() {
    let start = Instant::now();
    let text = std::fs::read_to_string(scenario_path("demands_example.toml")).unwrap();
    let parsed = DemandsFile::parse(&text).unwrap();
    let (fairness, rows) = allocate_from_file(&parsed);
    let elapsed = start.elapsed().as_secs_f64();

    assert!((fairness - 0.291).abs() <= 1e-3, "F = {fairness}");
    let expected = [174.75e6, 52.42e6, 72.81e6];
    for ((_, alloc), want) in rows.iter().zip(expected) {
        assert!(
            (alloc - want).abs() <= 0.05e6,
            "allocation {alloc} vs {want}"
        );
    }
    assert!(elapsed < 0.1, "took {elapsed} s");
    println!(
        "[criterion 1] PASS fairness golden: F = {fairness:.3}, allocations within 0.05 Mbps, {elapsed:.4} s"
    );
}

#[test]
fn criterion_02_lp_optimality_witness() {
    let start = Instant::now();
    let mut rng = stream(2026, "acceptance/fairness", 0);
    let mut below_one = 0u32;
    for _ in 0..1000 {
        let (caps, flows) = random_fairness_instance(5, 10, &mut rng);
        let (f, x) = sfg_allocate(&caps, &flows);
        for (alloc, flow) in x.iter().zip(&flows) {
            assert!((alloc - f * flow.demand_bps).abs() < 1e-6);
        }
        if f < 1.0 {
            below_one += 1;
            let witness =
                binding_link(&caps, &flows, f).expect("F < 1 must admit a binding link");
            let total: f64 = flows
                .iter()
                .filter(|d| d.path.links.contains(&witness))
                .map(|d| d.demand_bps)
                .sum();
            assert!(
                (f + 1e-6) * total > caps[&witness],
                "F + 1e-6 must violate the binding link"
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed} s");
    println!(
        "[criterion 2] PASS LP witness: 1000 instances, {below_one} with F < 1 all witnessed, {elapsed:.2} s"
    );
}

#[test]
fn criterion_03_single_request_heuristic_exactness() {
    let start = Instant::now();
    let mut rng = stream(2026, "acceptance/single", 0);
    let mut checked = 0u64;
    for tree in TREES {
        let mut per_tree = 0;
        while per_tree < 1000 {
            let mut inst = random_instance(tree, 1, &mut rng);
            let request = inst.requests[0].clone();
            let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, tree, 1_000_000) else {
                continue;
            };
            inst.ctx.normalizers = Some(norm);
            let Ok((oracle_action, oracle_obj)) = oracle_single(&inst.ctx, &request, tree) else {
                continue;
            };
            let (_, g_action, g_obj) = gba(&inst.ctx, &request, tree).unwrap();
            assert!(
                (g_obj - oracle_obj).abs() <= 1e-12,
                "{tree:?} gba objective {g_obj} vs {oracle_obj}"
            );
            assert_eq!(g_action, oracle_action, "{tree:?} gba action");
            if tree == ActionTree::Ararat {
                let (f_action, f_obj) = efg1(&inst.ctx, &request, inst.ctx.thr_comp).unwrap();
                assert!(
                    (f_obj - oracle_obj).abs() <= 1e-12,
                    "efg1 objective {f_obj} vs {oracle_obj}"
                );
                assert_eq!(f_action, oracle_action, "efg1 action");
            }
            per_tree += 1;
            checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed} s");
    println!(
        "[criterion 3] PASS single-request exactness: {checked} instances across {} trees, {elapsed:.2} s",
        TREES.len()
    );
}

#[test]
fn criterion_04_joint_oracle_bound() {
    let start = Instant::now();
    let mut rng = stream(2026, "acceptance/joint", 0);
    let mut done = 0u32;
    let mut max_nov: f64 = 1.0;
    while done < 200 {
        let tree = if rng.gen_bool(0.5) {
            ActionTree::Alive
        } else {
            ActionTree::Ararat
        };
        let n = rng.gen_range(2..=5);
        let mut inst = random_instance(tree, n, &mut rng);
        let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, tree, 1_000_000) else {
            continue;
        };
        inst.ctx.normalizers = Some(norm);
        let Ok(best) = oracle_joint(&inst.ctx, &inst.requests, tree, 1_000_000) else {
            continue;
        };

        // Sequential heuristic against a depleting snapshot.
        let pristine = inst.ctx.clone();
        let mut working = inst.ctx.clone();
        let mut total = 0.0;
        let mut chosen = Vec::new();
        let mut feasible = true;
        for request in &inst.requests {
            match gba(&working, request, tree) {
                Ok((_, action, obj)) => {
                    total += obj;
                    deplete(&mut working, &action, request);
                    chosen.push(action);
                }
                Err(_) => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            // The origin fallback is sized for the whole batch, so a greedy
            // dead end is a bug, not an unlucky instance.
            panic!("greedy failed to serve a batch with a guaranteed fallback");
        }
        // Joint feasibility of the heuristic assignment against the pristine
        // snapshot: per-pair bandwidth, per-node cpu, per-peer power.
        let mut bw_used: BTreeMap<(String, String), f64> = BTreeMap::new();
        let mut cpu_used: BTreeMap<String, f64> = BTreeMap::new();
        let mut power_used: BTreeMap<String, f64> = BTreeMap::new();
        for (action, request) in chosen.iter().zip(&inst.requests) {
            for leg in action_legs(&pristine, action, request) {
                let key = if pristine
                    .bandwidth
                    .contains_key(&(leg.from.clone(), leg.to.clone()))
                {
                    (leg.from.clone(), leg.to.clone())
                } else {
                    (leg.to.clone(), leg.from.clone())
                };
                *bw_used.entry(key).or_insert(0.0) += pristine.ladder.bitrate(leg.rep_index);
            }
            if let Some(executor) = transform_executor(&pristine, action, request) {
                let tc = transform_cost(&pristine, action, request)
                    .unwrap()
                    .expect("transform");
                *cpu_used.entry(executor.clone()).or_insert(0.0) += tc.cpu_s;
                if pristine.kind(&executor).map(|k| k.is_peer()) == Some(true) {
                    *power_used.entry(executor).or_insert(0.0) += tc.power_mah;
                }
            }
        }
        for (pair, used) in &bw_used {
            let cap = pristine.bandwidth_between(&pair.0, &pair.1).unwrap();
            assert!(*used <= cap + 1e-6, "bandwidth over-use on {pair:?}");
        }
        for (node, used) in &cpu_used {
            assert!(*used <= pristine.cpu_remaining[node] + 1e-9, "cpu over-use");
        }
        for (peer, used) in &power_used {
            assert!(
                *used <= pristine.power_remaining[peer] + 1e-9,
                "power over-use"
            );
        }

        let nov = if best.objective == 0.0 {
            if total.abs() < 1e-12 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            total / best.objective
        };
        assert!(!nov.is_nan(), "NOV must never be NaN");
        assert!(
            nov >= 1.0 - 1e-9,
            "heuristic beat the exact optimum: NOV = {nov}"
        );
        max_nov = max_nov.max(nov);
        done += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed} s");
    println!(
        "[criterion 4] PASS joint bound: 200 contention instances, NOV in [1, {max_nov:.4}], {elapsed:.2} s"
    );
}

#[test]
fn criterion_05_policy_constraint_suite() {
    let mut rng = stream(2026, "acceptance/constraints", 0);
    let mut decisions = 0u64;
    while decisions < 10_000 {
        for tree in TREES {
            let mut inst = random_instance(tree, 1, &mut rng);
            let request = inst.requests[0].clone();
            let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, tree, 1_000_000) else {
                continue;
            };
            inst.ctx.normalizers = Some(norm);
            let mut picks = Vec::new();
            if let Ok((a, _)) = oracle_single(&inst.ctx, &request, tree) {
                picks.push(a);
            }
            if let Ok((_, a, _)) = gba(&inst.ctx, &request, tree) {
                picks.push(a);
            }
            if tree == ActionTree::Ararat {
                if let Ok((a, _)) = efg1(&inst.ctx, &request, inst.ctx.thr_comp) {
                    picks.push(a);
                }
            }
            for action in picks {
                let source_kind = inst.ctx.kind(&action.source_node).unwrap();
                // Origin serves only exact reps, untransformed.
                if source_kind == NodeKind::Origin {
                    assert_eq!(action.transform, Transform::None);
                    assert_eq!(action.source_rep, request.requested_rep);
                }
                // CDNs never transcode.
                if source_kind == NodeKind::Cdn {
                    if let Some(e) = transform_executor(&inst.ctx, &action, &request) {
                        assert_ne!(e, action.source_node, "CDN executed a transform");
                    }
                }
                // Seeders never draw from leechers.
                if inst.ctx.kind(&request.client_id) == Some(NodeKind::PeerSeeder) {
                    assert_ne!(source_kind, NodeKind::PeerLeecher);
                }
                // No peer performs TR and SR for one request: a single
                // transform per action, and SR executes on the requester.
                if action.transform == Transform::SrAtLocalPeer {
                    assert_eq!(
                        transform_executor(&inst.ctx, &action, &request).as_deref(),
                        Some(request.client_id.as_str())
                    );
                }
                decisions += 1;
            }
        }
    }
    println!("[criterion 5] PASS policy constraints: zero violations over {decisions} decisions");
}

#[test]
fn criterion_06_zipf_check() {
    let probs = zipf_probabilities(5, 0.7).unwrap();
    let expected = [0.3594, 0.2213, 0.1666, 0.1362, 0.1165];
    for (got, want) in probs.iter().zip(expected) {
        assert!((got - want).abs() <= 1e-4, "{got} vs {want}");
    }
    let mut rng = stream(2026, "acceptance/zipf", 0);
    let n = 10_000;
    let mut counts = [0u32; 5];
    for _ in 0..n {
        counts[sample_index(&probs, &mut rng)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let freq = f64::from(*c) / f64::from(n);
        assert!(
            (freq - expected[i]).abs() <= 0.02,
            "empirical share {freq} vs {}",
            expected[i]
        );
    }
    println!(
        "[criterion 6] PASS zipf: vector within 1e-4, 10k-draw shares within 0.02 (content-1 {:.4})",
        f64::from(counts[0]) / f64::from(n)
    );
}

#[test]
fn criterion_07_leader_allocation() {
    let users = vec![
        ("les".to_string(), "cs1".to_string(), 2u32),
        ("nes".to_string(), "cs2".to_string(), 4u32),
    ];
    let x = leader_allocate(60e6, &users);
    assert!((x[0] - 40e6).abs() <= 1e-6);
    assert!((x[1] - 20e6).abs() <= 1e-6);

    let mut rng = stream(2026, "acceptance/leader", 0);
    for _ in 0..500 {
        let n = rng.gen_range(1..=8);
        let users: Vec<(String, String, u32)> = (0..n)
            .map(|i| (format!("e{i}"), "s".to_string(), rng.gen_range(1..12)))
            .collect();
        let cap = rng.gen_range(1e6..500e6);
        let total: f64 = leader_allocate(cap, &users).iter().sum();
        assert!((total - cap).abs() <= 1e-9 * cap, "sum {total} vs {cap}");
    }
    println!(
        "[criterion 7] PASS hop-weighted allocation: (40, 20) Mbps exact, sums match capacity on 500 random instances"
    );
}

#[test]
fn criterion_08_som_behavior() {
    // BMU equals brute-force argmin on 1000 random neuron sets.
    let mut rng = stream(2026, "acceptance/som", 0);
    let w = (0.5, 0.5);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=30);
        let neurons: Vec<Neuron> = (0..n)
            .map(|i| {
                let mut neuron = Neuron::new(&format!("n{i:02}"), 1, rng.gen_range(0.0..1.0));
                neuron.penalty_norm = rng.gen_range(0.0..1.0);
                neuron
            })
            .collect();
        let got = bmu(&neurons, w).unwrap();
        let dist = |n: &Neuron| {
            (w.0 * n.latency_norm * n.latency_norm + w.1 * n.penalty_norm * n.penalty_norm).sqrt()
        };
        let want = (0..neurons.len())
            .min_by(|&a, &b| {
                dist(&neurons[a])
                    .partial_cmp(&dist(&neurons[b]))
                    .unwrap()
                    .then_with(|| {
                        (&neurons[a].node_id, neurons[a].action_variant)
                            .cmp(&(&neurons[b].node_id, neurons[b].action_variant))
                    })
            })
            .unwrap();
        assert_eq!(got, want);
    }

    // A stationary strictly-best node becomes and stays the BMU.
    let truth = [0.25, 0.15, 0.55, 0.40];
    let init = [0.20, 0.30, 0.50, 0.45];
    let cfg = SomConfig::default();
    let mut neurons: Vec<Neuron> = init
        .iter()
        .enumerate()
        .map(|(i, f)| Neuron::new(&format!("n{i}"), 1, *f))
        .collect();
    let mut first_stable = None;
    for cycle in 0..200 {
        refresh_from_monitoring(&mut neurons, &truth, &cfg).unwrap();
        let b = bmu(&neurons, (cfg.w_latency, cfg.w_penalty)).unwrap();
        som_update(&mut neurons, b, (truth[b], 0.0), &cfg).unwrap();
        if b == 1 {
            first_stable.get_or_insert(cycle);
        } else {
            assert!(
                cycle < 100,
                "BMU left the best node at cycle {cycle} after stabilizing"
            );
            first_stable = None;
        }
    }
    let stable = first_stable.expect("BMU converged");
    assert!(stable < 100, "stabilized only at cycle {stable}");
    println!(
        "[criterion 8] PASS SOM: BMU = brute-force argmin on 1000 sets; stable from cycle {stable} and held 100+ cycles"
    );
}

#[test]
fn criterion_09_engine_conservation_and_determinism() {
    let start = Instant::now();
    let scenario = Scenario::load(&scenario_path("desk40.toml")).unwrap();
    let mut summaries = Vec::new();
    for _ in 0..2 {
        let input = scenario.to_simulation_input(Some(7), None, None).unwrap();
        // A completed run certifies the per-slot ledger assertions: any
        // over-commitment aborts with EngineError::Conservation.
        let out = Simulation::new(input).run_to_completion().unwrap();
        assert_eq!(out.report.chr + out.report.origin_ratio, 1.0);
        summaries.push(serde_json::to_string_pretty(&out.report).unwrap());
    }
    assert_eq!(summaries[0], summaries[1], "summary.json must be byte-identical");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed} s");
    println!(
        "[criterion 9] PASS engine: two seed-7 runs byte-identical, ledgers conserved, CHR + origin = 1 exactly, {elapsed:.2} s"
    );
}

#[test]
fn criterion_10_qualitative_trend_reproduction() {
    let scenario = Scenario::load(&scenario_path("desk40.toml")).unwrap();
    let mut reports = BTreeMap::new();
    for policy in ["alive", "nth", "ect", "seh"] {
        let input = scenario
            .to_simulation_input(Some(7), None, Some(policy))
            .unwrap();
        let out = Simulation::new(input).run_to_completion().unwrap();
        reports.insert(policy, out.report);
    }
    let alive = &reports["alive"];
    let nth = &reports["nth"];
    let ect = &reports["ect"];
    let seh = &reports["seh"];
    assert!(
        alive.chr > nth.chr,
        "alive CHR {} must strictly exceed nth {}",
        alive.chr,
        nth.chr
    );
    assert!(
        alive.btl_bits < nth.btl_bits,
        "alive BTL {} must be strictly below nth {}",
        alive.btl_bits,
        nth.btl_bits
    );
    assert!(
        ect.chr >= seh.chr,
        "ect CHR {} must be at least seh {}",
        ect.chr,
        seh.chr
    );
    println!(
        "[criterion 10] PASS trends: CHR alive {:.3} > nth {:.3}; BTL alive {:.1} Mbit < nth {:.1} Mbit; CHR ect {:.3} >= seh {:.3}",
        alive.chr,
        nth.chr,
        alive.btl_bits / 1e6,
        nth.btl_bits / 1e6,
        ect.chr,
        seh.chr
    );
}

/// The CLI surface end to end: run, validate, allocate through the binary.
#[test]
fn cli_binary_end_to_end() {
    let bin = env!("CARGO_BIN_EXE_navsim");
    let out = std::process::Command::new(bin)
        .args(["allocate", "--demands"])
        .arg(scenario_path("demands_example.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("F = 0.291"), "{stdout}");

    let out = std::process::Command::new(bin)
        .args(["validate", "--scenario"])
        .arg(scenario_path("desk40.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());

    // Unknown policy is a usage error (exit 2) listing the presets.
    let out = std::process::Command::new(bin)
        .args(["run", "--policy", "bogus", "--scenario"])
        .arg(scenario_path("desk40.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("alive"), "preset list missing: {stderr}");

    // Determinism through the full binary: identical output files.
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = std::process::Command::new(bin)
            .args(["run", "--seed", "7", "--slots", "40", "--scenario"])
            .arg(scenario_path("desk40.toml"))
            .arg("--out")
            .arg(tmp.path().join(sub))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["summary.json", "per_client.csv", "per_slot.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

/// NOV table through the compare command on a bundled scenario.
#[test]
fn cli_compare_reports_nov_at_least_one() {
    let bin = env!("CARGO_BIN_EXE_navsim");
    let out = std::process::Command::new(bin)
        .args(["compare", "--requests", "4", "--policies", "alive,nth,richter", "--scenario"])
        .arg(scenario_path("desk40.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for line in stdout.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() >= 4 {
            let nov: f64 = cols[3].parse().unwrap();
            assert!(nov >= 1.0 - 1e-9, "NOV below one: {line}");
            assert!(!nov.is_nan());
        }
    }

    // A single-request instance is solved exactly by the per-request scans.
    let out = std::process::Command::new(bin)
        .args(["compare", "--requests", "1", "--policies", "alive,ararat-fg1", "--scenario"])
        .arg(scenario_path("desk40.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for line in stdout.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() >= 4 {
            let nov: f64 = cols[3].parse().unwrap();
            assert!((nov - 1.0).abs() < 1e-9, "single-request NOV must be 1: {line}");
        }
    }

    // A tiny limit is refused with guidance instead of a bogus table.
    let out = std::process::Command::new(bin)
        .args(["compare", "--requests", "4", "--limit", "10", "--policies", "alive", "--scenario"])
        .arg(scenario_path("desk40.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("reduce --requests or raise --limit"), "{stderr}");

    // The collaborative edge tree compares on the edge scenario.
    let out = std::process::Command::new(bin)
        .args(["compare", "--requests", "3", "--policies", "ararat-fg1,leader", "--scenario"])
        .arg(scenario_path("edge_small.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for line in stdout.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() >= 4 {
            let nov: f64 = cols[3].parse().unwrap();
            assert!(nov >= 1.0 - 1e-9, "NOV below one: {line}");
        }
    }
}
