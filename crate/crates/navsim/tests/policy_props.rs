//! Property checks for the decision core over randomized instances: oracle
//! agreement of the heuristics, scale invariance, joint-vs-single reduction,
//! and the structural action invariants.

use navsim::heuristics::{binding_link, efg1, gba, leader_allocate, sfg_allocate};
use navsim::policy::{
    compute_normalizers, feasible_actions, oracle_joint, oracle_single, validate_action,
    ActionTree, Normalizers, ObjectiveWeights, Transform,
};
use navsim::rng::stream;
use navsim::testkit::{random_fairness_instance, random_instance};
use navsim::topology::NodeKind;
use proptest::prelude::*;

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
fn heuristics_match_oracle_on_random_single_requests() {
    let mut rng = stream(101, "props/single", 0);
    for tree in TREES {
        for _ in 0..150 {
            let mut inst = random_instance(tree, 1, &mut rng);
            let request = inst.requests[0].clone();
            let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, tree, 100_000) else {
                continue;
            };
            inst.ctx.normalizers = Some(norm);
            let Ok((oracle_action, oracle_obj)) = oracle_single(&inst.ctx, &request, tree) else {
                continue;
            };
            let (_, g_action, g_obj) = gba(&inst.ctx, &request, tree).unwrap();
            assert!(
                (g_obj - oracle_obj).abs() < 1e-12,
                "{tree:?}: gba {g_obj} vs oracle {oracle_obj}"
            );
            assert_eq!(g_action, oracle_action, "{tree:?}");
            if tree == ActionTree::Ararat {
                let (f_action, f_obj) = efg1(&inst.ctx, &request, inst.ctx.thr_comp).unwrap();
                assert!((f_obj - oracle_obj).abs() < 1e-12);
                assert_eq!(f_action, oracle_action);
            }
        }
    }
}

#[test]
fn oracle_argmin_invariant_under_normalizer_scaling() {
    let mut rng = stream(102, "props/scale", 0);
    for tree in [ActionTree::Ararat, ActionTree::Alive] {
        for _ in 0..100 {
            let mut inst = random_instance(tree, 1, &mut rng);
            let request = inst.requests[0].clone();
            let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, tree, 100_000) else {
                continue;
            };
            inst.ctx.normalizers = Some(norm);
            let Ok((a1, _)) = oracle_single(&inst.ctx, &request, tree) else {
                continue;
            };
            inst.ctx.normalizers = Some(Normalizers {
                latency_s: norm.latency_s * 37.5,
                cost_usd: norm.cost_usd * 37.5,
            });
            let (a2, _) = oracle_single(&inst.ctx, &request, tree).unwrap();
            assert_eq!(a1, a2, "{tree:?}");
        }
    }
}

#[test]
fn beta_extremes_select_latency_and_cost_minima() {
    let mut rng = stream(103, "props/beta", 0);
    for _ in 0..100 {
        let mut inst = random_instance(ActionTree::Alive, 1, &mut rng);
        let request = inst.requests[0].clone();
        let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, ActionTree::Alive, 100_000)
        else {
            continue;
        };
        inst.ctx.normalizers = Some(norm);
        let actions = feasible_actions(&inst.ctx, &request, ActionTree::Alive);
        if actions.is_empty() {
            continue;
        }
        inst.ctx.weights = ObjectiveWeights::LatencyCost { beta: 1.0 };
        let (fast, _) = oracle_single(&inst.ctx, &request, ActionTree::Alive).unwrap();
        let fast_lat =
            navsim::policy::action_latency(&inst.ctx, &fast, &request).unwrap();
        for a in &actions {
            let lat = navsim::policy::action_latency(&inst.ctx, a, &request).unwrap();
            assert!(fast_lat <= lat + 1e-12, "beta=1 latency-minimality");
        }
        inst.ctx.weights = ObjectiveWeights::LatencyCost { beta: 0.0 };
        let (cheap, _) = oracle_single(&inst.ctx, &request, ActionTree::Alive).unwrap();
        let cheap_cost = navsim::policy::action_cost(&inst.ctx, &cheap, &request).unwrap();
        for a in &actions {
            let cost = navsim::policy::action_cost(&inst.ctx, a, &request).unwrap();
            assert!(cheap_cost <= cost + 1e-15, "beta=0 cost-minimality");
        }
    }
}

#[test]
fn unconstrained_joint_equals_independent_singles() {
    let mut rng = stream(104, "props/joint", 0);
    for tree in [ActionTree::Alive, ActionTree::Ararat] {
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 40 && attempts < 400 {
            attempts += 1;
            let mut inst = random_instance(tree, 2, &mut rng);
            // Lift every shared constraint far beyond what two requests use.
            for bw in inst.ctx.bandwidth.values_mut() {
                if *bw > 0.0 {
                    *bw *= 1000.0;
                }
            }
            for cpu in inst.ctx.cpu_remaining.values_mut() {
                if *cpu > 0.0 {
                    *cpu *= 1000.0;
                }
            }
            for p in inst.ctx.power_remaining.values_mut() {
                if *p > 0.0 {
                    *p *= 1000.0;
                }
            }
            let Ok(norm) = compute_normalizers(&inst.ctx, &inst.requests, tree, 1_000_000) else {
                continue;
            };
            inst.ctx.normalizers = Some(norm);
            let Ok(joint) = oracle_joint(&inst.ctx, &inst.requests, tree, 1_000_000) else {
                continue;
            };
            let mut singles = Vec::new();
            for r in &inst.requests {
                singles.push(oracle_single(&inst.ctx, r, tree).unwrap().0);
            }
            assert_eq!(joint.actions, singles, "{tree:?}");
            checked += 1;
        }
        assert!(checked >= 20, "{tree:?}: too few decidable instances");
    }
}

#[test]
fn every_returned_action_satisfies_structural_invariants() {
    let mut rng = stream(105, "props/struct", 0);
    for tree in TREES {
        for _ in 0..100 {
            let inst = random_instance(tree, 1, &mut rng);
            let request = &inst.requests[0];
            let requester_kind = inst.ctx.kind(&request.client_id);
            for action in feasible_actions(&inst.ctx, request, tree) {
                assert!(validate_action(&inst.ctx, &action, request));
                let source_kind = inst.ctx.kind(&action.source_node).unwrap();
                // The origin serves exact reps untransformed.
                if source_kind == NodeKind::Origin {
                    assert_eq!(action.transform, Transform::None);
                    assert_eq!(action.source_rep, request.requested_rep);
                }
                // CDN servers never run the transform themselves.
                if source_kind == NodeKind::Cdn {
                    if let Some(executor) =
                        navsim::policy::transform_executor(&inst.ctx, &action, request)
                    {
                        assert_ne!(executor, action.source_node);
                    }
                }
                // Seeders never draw from leechers.
                if requester_kind == Some(NodeKind::PeerSeeder) {
                    assert_ne!(source_kind, NodeKind::PeerLeecher);
                }
            }
        }
    }
}

#[test]
fn fairness_binding_witness_on_random_instances() {
    let mut rng = stream(106, "props/fair", 0);
    for _ in 0..300 {
        let (caps, flows) = random_fairness_instance(5, 10, &mut rng);
        let (f, x) = sfg_allocate(&caps, &flows);
        assert!((0.0..=1.0).contains(&f));
        for (alloc, flow) in x.iter().zip(&flows) {
            assert!((alloc - f * flow.demand_bps).abs() < 1e-6);
        }
        if f < 1.0 {
            let witness = binding_link(&caps, &flows, f).expect("binding witness when F < 1");
            let total: f64 = flows
                .iter()
                .filter(|d| d.path.links.contains(&witness))
                .map(|d| d.demand_bps)
                .sum();
            // Raising F violates the witness link.
            assert!((f + 1e-6) * total > caps[&witness]);
        }
    }
}

proptest! {
    #[test]
    fn leader_allocation_sums_to_capacity(
        hops in prop::collection::vec(1u32..20, 2..12),
        cap_mbps in 1.0f64..1000.0,
    ) {
        let users: Vec<(String, String, u32)> = hops
            .iter()
            .enumerate()
            .map(|(i, h)| (format!("e{i}"), "s".to_string(), *h))
            .collect();
        let x = leader_allocate(cap_mbps * 1e6, &users);
        let total: f64 = x.iter().sum();
        prop_assert!((total - cap_mbps * 1e6).abs() <= 1e-9 * cap_mbps * 1e6);
        // Fewer hops never get less bandwidth.
        for (i, (_, _, hi)) in users.iter().enumerate() {
            for (j, (_, _, hj)) in users.iter().enumerate() {
                if hi < hj {
                    prop_assert!(x[i] >= x[j]);
                }
            }
        }
    }

    #[test]
    fn zipf_normalizes_and_orders(k in 1usize..2000, alpha in 0.0f64..3.0) {
        let p = navsim::workload::zipf_probabilities(k, alpha).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn transmission_scales_linearly(size in 1.0f64..1e9, bw in 1.0f64..1e9) {
        let t = navsim::costs::transmission_time(size, bw).unwrap();
        let t2 = navsim::costs::transmission_time(2.0 * size, bw).unwrap();
        prop_assert!((t2 - 2.0 * t).abs() <= 1e-9 * t2.abs());
        let t3 = navsim::costs::transmission_time(size, 2.0 * bw).unwrap();
        prop_assert!((t3 - t / 2.0).abs() <= 1e-9 * t.abs());
    }
}
