//! Seeded synthetic social graphs with heavy-tailed degrees and planted
//! communities.

use std::collections::BTreeSet;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SocialMultiGraph;
use crate::ids::{SimTime, Uid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityGraphParams {
    pub users: usize,
    /// Undirected edges; every one becomes a pair of directed edges.
    pub edges: usize,
    pub mean_community: f64,
    /// Share of non-backbone edges whose second endpoint is drawn from the
    /// whole graph rather than the first endpoint's community.
    pub mixing: f64,
    /// Exponent of the power-law degree density.
    pub degree_exponent: f64,
    /// Share of pairs that also carry a second label.
    pub second_label_share: f64,
    pub seed: u64,
}

impl Default for CommunityGraphParams {
    fn default() -> Self {
        Self::social_1000(0)
    }
}

impl CommunityGraphParams {
    /// 1000 users in communities of about ten, mean degree 6.4.
    pub fn social_1000(seed: u64) -> Self {
        CommunityGraphParams {
            users: 1000,
            edges: 3200,
            mean_community: 10.0,
            mixing: 0.3,
            degree_exponent: 2.5,
            second_label_share: 0.2,
            seed,
        }
    }

    /// Same size as the Gnutella04 snapshot: 10,876 peers, 39,994 links.
    pub fn gnutella_sized(seed: u64) -> Self {
        CommunityGraphParams {
            users: 10_876,
            edges: 39_994,
            mean_community: 10.0,
            mixing: 0.5,
            degree_exponent: 3.0,
            second_label_share: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max_edges = self.users.saturating_mul(self.users.saturating_sub(1)) / 2;
        if self.users < 2 || self.edges + 1 < self.users || self.edges > max_edges {
            return Err(Error::Config(format!(
                "{} edges cannot connect {} users as a simple graph",
                self.edges, self.users
            )));
        }
        if !(self.mean_community >= 1.0) || !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::Config(
                "mean_community >= 1 and mixing in [0, 1] required".into(),
            ));
        }
        if !(self.degree_exponent > 1.0) || !(0.0..=1.0).contains(&self.second_label_share) {
            return Err(Error::Config(
                "degree_exponent > 1 and second_label_share in [0, 1] required".into(),
            ));
        }
        Ok(())
    }
}

/// Undirected edges and the planted community of each node.
pub type CommunityEdges = (Vec<(usize, usize)>, Vec<usize>);

/// A connected simple undirected graph on `0..users` with exactly `edges`
/// edges, plus the planted community of every node.
pub fn community_edges(p: &CommunityGraphParams) -> Result<CommunityEdges> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.users;

    // Degree propensities, capped so no node expects more than n/10 links.
    let shape = p.degree_exponent - 1.0;
    let cap = (n as f64 / 10.0).max(2.0);
    let weight: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (1.0 - u).powf(-1.0 / shape).min(cap)
        })
        .collect();

    // Community sizes uniform in [mean/2, 3·mean/2].
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut at = 0;
    while at < n {
        let lo = (p.mean_community / 2.0).max(1.0);
        let hi = (p.mean_community * 1.5).max(lo + 1.0);
        let size = (rng.random_range(lo..hi).round() as usize).clamp(1, n - at);
        members.push(order[at..at + size].to_vec());
        at += size;
    }
    let mut community = vec![0; n];
    for (c, m) in members.iter().enumerate() {
        for &v in m {
            community[v] = c;
        }
    }

    let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut edges = Vec::with_capacity(p.edges);
    let mut add = |a: usize, b: usize, edges: &mut Vec<(usize, usize)>| {
        let e = (a.min(b), a.max(b));
        if a != b && set.insert(e) {
            edges.push(e);
            true
        } else {
            false
        }
    };

    // Backbone: a preferential tree inside each community, then each
    // community hooked to an earlier one.
    let pick = |rng: &mut ChaCha8Rng, pool: &[usize]| -> usize {
        let ws: Vec<f64> = pool.iter().map(|&v| weight[v]).collect();
        pool[WeightedIndex::new(&ws).unwrap().sample(rng)]
    };
    for m in &members {
        for k in 1..m.len() {
            let parent = pick(&mut rng, &m[..k]);
            add(m[k], parent, &mut edges);
        }
    }
    for c in 1..members.len() {
        let earlier = rng.random_range(0..c);
        let a = pick(&mut rng, &members[c]);
        let b = pick(&mut rng, &members[earlier]);
        add(a, b, &mut edges);
    }

    let global = WeightedIndex::new(&weight).unwrap();
    let local: Vec<Option<WeightedIndex<f64>>> = members
        .iter()
        .map(|m| {
            let ws: Vec<f64> = m.iter().map(|&v| weight[v]).collect();
            (m.len() > 1).then(|| WeightedIndex::new(ws).unwrap())
        })
        .collect();
    let mut stalls = 0usize;
    while edges.len() < p.edges {
        let a = global.sample(&mut rng);
        let c = community[a];
        let b = match &local[c] {
            Some(idx) if rng.random::<f64>() >= p.mixing => members[c][idx.sample(&mut rng)],
            _ => global.sample(&mut rng),
        };
        if add(a, b, &mut edges) {
            stalls = 0;
        } else {
            stalls += 1;
            if stalls > 1000 * p.edges.max(1) {
                return Err(Error::Config(
                    "edge generation stalled; too dense for the degree caps".into(),
                ));
            }
            // Saturated communities fall back to global draws.
            if stalls.is_multiple_of(64) {
                let b = rng.random_range(0..n);
                if add(a, b, &mut edges) {
                    stalls = 0;
                }
            }
        }
    }
    Ok((edges, community))
}

/// Directed social multigraph on UIDs `1..=users`: each undirected edge in
/// both directions labeled `friend` with a weight uniform in `[0.1, 1]`,
/// a share of pairs also labeled `colleague`.
pub fn community_social_graph(p: &CommunityGraphParams) -> Result<SocialMultiGraph> {
    let (edges, _) = community_edges(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x1abe1);
    let mut g = SocialMultiGraph::new();
    for v in 0..p.users {
        g.ensure_vertex(Uid(v as u128 + 1));
    }
    for (a, b) in edges {
        let (a, b) = (Uid(a as u128 + 1), Uid(b as u128 + 1));
        for (x, y) in [(a, b), (b, a)] {
            let w = rng.random_range(0.1..=1.0);
            g.insert_edge(x, y, "friend".into(), w, SimTime::ZERO);
        }
        if rng.random::<f64>() < p.second_label_share {
            for (x, y) in [(a, b), (b, a)] {
                let w = rng.random_range(0.1..=1.0);
                g.insert_edge(x, y, "colleague".into(), w, SimTime::ZERO);
            }
        }
    }
    Ok(g)
}

/// Unweighted, undirected view: every edge both ways with weight 1.
pub fn unweighted_graph(users: usize, edges: &[(usize, usize)]) -> SocialMultiGraph {
    let mut g = SocialMultiGraph::new();
    for v in 0..users {
        g.ensure_vertex(Uid(v as u128 + 1));
    }
    for &(a, b) in edges {
        let (a, b) = (Uid(a as u128 + 1), Uid(b as u128 + 1));
        g.insert_edge(a, b, "link".into(), 1.0, SimTime::ZERO);
        g.insert_edge(b, a, "link".into(), 1.0, SimTime::ZERO);
    }
    g
}

/// Unweighted undirected stand-in with the Gnutella04 node and edge counts.
pub fn gnutella_sized(seed: u64) -> Result<SocialMultiGraph> {
    let p = CommunityGraphParams::gnutella_sized(seed);
    let (edges, _) = community_edges(&p)?;
    Ok(unweighted_graph(p.users, &edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_counts_and_connected() {
        let p = CommunityGraphParams::social_1000(4);
        let (edges, community) = community_edges(&p).unwrap();
        assert_eq!(edges.len(), 3200);
        assert_eq!(community.len(), 1000);
        let g = community_social_graph(&p).unwrap();
        assert_eq!(g.vertex_count(), 1000);
        assert_eq!(g.components().len(), 1);
        assert_eq!(g.symmetrized(&"friend".into()).edge_count(), 6400);
    }

    #[test]
    fn deterministic_under_seed() {
        let p = CommunityGraphParams {
            users: 200,
            edges: 600,
            ..CommunityGraphParams::social_1000(9)
        };
        assert_eq!(community_edges(&p).unwrap(), community_edges(&p).unwrap());
        let q = CommunityGraphParams {
            seed: 10,
            ..p.clone()
        };
        assert_ne!(
            community_edges(&p).unwrap().0,
            community_edges(&q).unwrap().0
        );
    }

    #[test]
    fn planted_communities_are_dense() {
        let p = CommunityGraphParams::social_1000(1);
        let (edges, community) = community_edges(&p).unwrap();
        let internal = edges
            .iter()
            .filter(|(a, b)| community[*a] == community[*b])
            .count();
        assert!(internal as f64 / edges.len() as f64 > 0.5);
    }

    #[test]
    fn rejects_impossible_sizes() {
        let p = CommunityGraphParams {
            users: 10,
            edges: 5,
            ..CommunityGraphParams::default()
        };
        assert!(community_edges(&p).is_err());
    }
}
