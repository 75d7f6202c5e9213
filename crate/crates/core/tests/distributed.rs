use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sks_core::inference::{execute_distributed, GraphView, Permissive};
use sks_core::mapping::{peer_ids, random_mapping};
use sks_core::overlay::LatencyModel;
use sks_core::{
    Answer, InferenceParams, PeerId, SimConfig, SimTime, Simulator, SocialMultiGraph, Uid,
};

fn random_graph(users: u128, edges: usize, seed: u64) -> SocialMultiGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = SocialMultiGraph::new();
    for u in 1..=users {
        g.ensure_vertex(Uid(u));
    }
    let labels = ["friend", "colleague"];
    for _ in 0..edges {
        let a = rng.random_range(1..=users);
        let b = rng.random_range(1..=users);
        if a == b {
            continue;
        }
        let label = labels[rng.random_range(0..2)];
        let w = (rng.random_range(1..=10) as f64) / 10.0;
        g.insert_edge(Uid(a), Uid(b), label.into(), w, SimTime::ZERO);
    }
    g
}

fn network(
    g: &SocialMultiGraph,
    peers: usize,
    k: usize,
    seed: u64,
    latency: LatencyModel,
) -> Simulator {
    let users: Vec<Uid> = g.uids().collect();
    let plan = random_mapping(&users, &peer_ids(peers), k, seed).unwrap();
    let config = SimConfig {
        seed,
        latency,
        ..SimConfig::default()
    };
    Simulator::from_assignment(config, g.clone(), &plan.assignment).unwrap()
}

fn entry(sim: &Simulator, ego: Uid) -> PeerId {
    // A peer that does not host the ego, to exercise forwarding.
    let hosts = &sim.groups[&ego].members;
    *sim.peers.keys().find(|p| !hosts.contains(p)).unwrap()
}

fn users_of(a: &Answer) -> BTreeSet<Uid> {
    a.users().iter().map(|(u, _)| *u).collect()
}

#[test]
fn neighborhood_matches_oracle_without_deadline() {
    let g = random_graph(60, 180, 1);
    let mut sim = network(&g, 12, 2, 1, LatencyModel::default());
    let oracle = GraphView::new(&g, SimTime::ZERO);
    for ego in [1u128, 7, 23, 42] {
        for radius in 1..=3 {
            let req = InferenceParams::neighborhood(Uid(ego), None, 0.0, radius)
                .with_id(ego as u64 * 10 + radius as u64);
            let want = oracle.evaluate(&req).unwrap();
            let from = entry(&sim, Uid(ego));
            let got = execute_distributed(&mut sim, &req, from, &Permissive).unwrap();
            assert_eq!(got.answer, want, "ego {ego} radius {radius}");
            assert_eq!(got.completion, 1.0);
            assert!(!got.partial);
        }
    }
}

#[test]
fn filtered_neighborhood_matches_oracle() {
    let g = random_graph(50, 200, 2);
    let mut sim = network(&g, 10, 1, 2, LatencyModel::Constant { ms: 20.0 });
    let oracle = GraphView::new(&g, SimTime::ZERO);
    for ego in 1..=10u128 {
        let req = InferenceParams::neighborhood(Uid(ego), Some("friend".into()), 0.5, 2)
            .with_id(ego as u64);
        let want = oracle.evaluate(&req).unwrap();
        let got = {
            let from = entry(&sim, Uid(ego));
            execute_distributed(&mut sim, &req, from, &Permissive)
        }
        .unwrap();
        assert_eq!(users_of(&got.answer), users_of(&want), "ego {ego}");
    }
}

#[test]
fn social_strength_matches_oracle() {
    let g = random_graph(40, 240, 3);
    let mut sim = network(&g, 8, 2, 3, LatencyModel::default());
    let oracle = GraphView::new(&g, SimTime::ZERO);
    let mut checked = 0;
    for ego in 1..=40u128 {
        for alter in g
            .out_neighbors(Uid(ego))
            .map(|(v, _)| v)
            .collect::<Vec<_>>()
        {
            let req = InferenceParams::social_strength(Uid(ego), alter).with_id(checked);
            let want = oracle.evaluate(&req).unwrap().real().unwrap();
            let got = {
                let from = entry(&sim, Uid(ego));
                execute_distributed(&mut sim, &req, from, &Permissive)
            }
            .unwrap();
            let value = got.answer.real().unwrap();
            assert!(
                (value - want).abs() < 1e-12,
                "{ego}->{alter}: {value} vs {want}"
            );
            assert_eq!(got.completion, 1.0);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn direct_kinds_forward_to_the_ego_peer() {
    let g = random_graph(30, 120, 4);
    let mut sim = network(&g, 6, 1, 4, LatencyModel::default());
    let oracle = GraphView::new(&g, SimTime::ZERO);
    for ego in 1..=30u128 {
        let req = InferenceParams::top_relations(Uid(ego), "friend".into(), 3).with_id(ego as u64);
        let want = oracle.evaluate(&req).unwrap();
        let got = {
            let from = entry(&sim, Uid(ego));
            execute_distributed(&mut sim, &req, from, &Permissive)
        }
        .unwrap();
        assert_eq!(got.answer, want);
        assert_eq!(got.serving_peers.len(), 1);
    }
}

#[test]
fn message_conservation_holds() {
    let g = random_graph(60, 200, 5);
    let mut sim = network(&g, 12, 2, 5, LatencyModel::default());
    for ego in 1..=20u128 {
        let req = InferenceParams::neighborhood(Uid(ego), None, 0.0, 3).with_id(ego as u64);
        let _ = {
            let from = entry(&sim, Uid(ego));
            execute_distributed(&mut sim, &req, from, &Permissive)
        };
        assert_eq!(sim.stats.sent, sim.stats.delivered + sim.stats.dropped);
    }
}

#[test]
fn churn_lowers_completion_but_keeps_soundness() {
    let g = random_graph(80, 300, 6);
    let oracle = GraphView::new(&g, SimTime::ZERO);
    let mut sim = network(&g, 16, 3, 6, LatencyModel::default());
    sim.config.churn_rate = 0.3;
    sim.config.max_retries = 0;
    let mut lowered = false;
    for ego in 1..=30u128 {
        let req = InferenceParams::neighborhood(Uid(ego), None, 0.0, 3).with_id(ego as u64);
        let want = users_of(&oracle.evaluate(&req).unwrap());
        let from = *sim.peers.keys().next().unwrap();
        let Ok(got) = execute_distributed(&mut sim, &req, from, &Permissive) else {
            continue;
        };
        assert!(users_of(&got.answer).is_subset(&want));
        if got.completion < 1.0 {
            lowered = true;
        }
    }
    assert!(lowered);
}

fn completion_at(sim: &mut Simulator, ego: Uid, timeout: f64, id: u64) -> f64 {
    let req = InferenceParams::neighborhood(ego, None, 0.0, 3)
        .with_timeout(Some(timeout))
        .with_id(id);
    let from = entry(sim, ego);
    execute_distributed(sim, &req, from, &Permissive)
        .unwrap()
        .completion
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn completion_is_monotone_in_timeout(seed in 0u64..1000, ego in 1u128..=40, t1 in 0.05f64..2.0, extra in 0.0f64..2.0) {
        let g = random_graph(40, 140, seed);
        let mut sim = network(&g, 8, 2, seed, LatencyModel::default());
        let low = completion_at(&mut sim, Uid(ego), t1, 9);
        let high = completion_at(&mut sim, Uid(ego), t1 + extra, 9);
        prop_assert!(high + 1e-12 >= low, "{low} then {high}");
    }

    #[test]
    fn larger_radius_never_shrinks_the_answer(seed in 0u64..1000, ego in 1u128..=40) {
        let g = random_graph(40, 120, seed);
        let oracle = GraphView::new(&g, SimTime::ZERO);
        let mut last: BTreeSet<Uid> = BTreeSet::new();
        for radius in 1..=4 {
            let req = InferenceParams::neighborhood(Uid(ego), None, 0.0, radius);
            let now = users_of(&oracle.evaluate(&req).unwrap());
            prop_assert!(last.is_subset(&now));
            last = now;
        }
    }

    #[test]
    fn strength_and_two_hop_use_the_same_peers(seed in 0u64..1000, ego in 1u128..=30) {
        let g = random_graph(30, 120, seed);
        let Some(alter) = g.out_neighbors(Uid(ego)).map(|(v, _)| v).next() else { return Ok(()) };
        let mut sim = network(&g, 6, 1, seed, LatencyModel::default());
        let from = entry(&sim, Uid(ego));
        let s = execute_distributed(&mut sim, &InferenceParams::social_strength(Uid(ego), alter), from, &Permissive).unwrap();
        let n = execute_distributed(&mut sim, &InferenceParams::neighborhood(Uid(ego), None, 0.0, 2), from, &Permissive).unwrap();
        let sp: BTreeMap<PeerId, u32> = s.serving_peers;
        let np: BTreeMap<PeerId, u32> = n.serving_peers;
        let sk: BTreeSet<_> = sp.keys().collect();
        let nk: BTreeSet<_> = np.keys().collect();
        prop_assert!(sk.is_subset(&nk), "{sk:?} vs {nk:?}");
    }
}
