//! Shared fixtures for the benchmarks.

use sks_core::mapping::{peer_ids, random_mapping};
use sks_core::synth::{community_social_graph, CommunityGraphParams};
use sks_core::{SimConfig, Simulator, SocialMultiGraph, Uid};

/// The 1000-user community graph.
pub fn social_graph(seed: u64) -> SocialMultiGraph {
    community_social_graph(&CommunityGraphParams::social_1000(seed))
        .expect("preset parameters are valid")
}

/// A smaller graph for the quadratic algorithms.
pub fn small_graph(users: usize, edges: usize, seed: u64) -> SocialMultiGraph {
    let p = CommunityGraphParams {
        users,
        edges,
        ..CommunityGraphParams::social_1000(seed)
    };
    community_social_graph(&p).expect("valid generator parameters")
}

/// `graph` on `users / per_peer` peers, randomly mapped with one replica.
pub fn network(graph: &SocialMultiGraph, per_peer: usize, seed: u64) -> Simulator {
    let users: Vec<Uid> = graph.uids().collect();
    let peers = peer_ids((users.len() / per_peer).max(1));
    let plan = random_mapping(&users, &peers, 1, seed).expect("one replica always fits");
    Simulator::from_assignment(SimConfig::default(), graph.clone(), &plan.assignment)
        .expect("mapped users exist")
}
