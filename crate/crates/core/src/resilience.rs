//! Peer influence: how many requests each peer, or group of colluding
//! peers, gets to handle beyond the requester's own peer.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SocialMultiGraph;
use crate::ids::{PeerId, SimTime, Uid};
use crate::inference::{execute_distributed, InferenceParams, Permissive};
use crate::mapping::MappingPlan;
use crate::metrics::{mean, mean_ci95, MeanCi};
use crate::overlay::{SimConfig, Simulator};

/// Undirected, unweighted view of the largest weakly connected component.
pub fn influence_graph(graph: &SocialMultiGraph) -> SocialMultiGraph {
    let lcc = graph.largest_component();
    let mut g = SocialMultiGraph::new();
    for u in lcc.uids() {
        g.ensure_vertex(u);
        for (v, _) in lcc.out_neighbors(u) {
            if u != v {
                g.insert_edge(u, v, "link".into(), 1.0, SimTime::ZERO);
                g.insert_edge(v, u, "link".into(), 1.0, SimTime::ZERO);
            }
        }
    }
    g
}

/// Which peers handled which requests. The source peer of a request is
/// never recorded for it.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceLedger {
    pub peers: Vec<PeerId>,
    pub total: usize,
    /// Per request: the issuing user, its source peer and the other
    /// peers that handled part of it.
    pub requests: Vec<(Uid, PeerId, Vec<PeerId>)>,
    served: BTreeMap<PeerId, Vec<u64>>,
}

impl InfluenceLedger {
    pub fn new(peers: Vec<PeerId>) -> Self {
        InfluenceLedger {
            peers,
            total: 0,
            requests: Vec::new(),
            served: BTreeMap::new(),
        }
    }

    pub fn record(
        &mut self,
        ego: Uid,
        source: PeerId,
        secondary: impl IntoIterator<Item = PeerId>,
    ) {
        let idx = self.total;
        self.total += 1;
        let words = self.total.div_ceil(64);
        let mut list: Vec<PeerId> = secondary.into_iter().filter(|p| *p != source).collect();
        list.sort();
        list.dedup();
        for p in &list {
            let bits = self.served.entry(*p).or_default();
            bits.resize(words, 0);
            bits[idx / 64] |= 1 << (idx % 64);
        }
        self.requests.push((ego, source, list));
    }

    pub fn served(&self, p: PeerId) -> u64 {
        self.served
            .get(&p)
            .map_or(0, |b| b.iter().map(|w| w.count_ones() as u64).sum())
    }

    pub fn influence(&self, p: PeerId) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.served(p) as f64 / self.total as f64
        }
    }

    /// Influence of every peer, including peers that served nothing.
    pub fn influences(&self) -> Vec<(PeerId, f64)> {
        self.peers
            .iter()
            .map(|p| (*p, self.influence(*p)))
            .collect()
    }

    pub fn mean_influence(&self) -> f64 {
        mean(&self.influences().iter().map(|x| x.1).collect::<Vec<_>>())
    }

    /// Fraction of requests in which any member of `set` handled a part.
    pub fn set_influence(&self, set: &BTreeSet<PeerId>) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let mut union = vec![0u64; self.total.div_ceil(64)];
        for p in set {
            if let Some(bits) = self.served.get(p) {
                for (u, b) in union.iter_mut().zip(bits) {
                    *u |= b;
                }
            }
        }
        union.iter().map(|w| w.count_ones() as f64).sum::<f64>() / self.total as f64
    }
}

/// One `hops`-hop neighborhood request per user, each submitted to the
/// user's home peer, with no deadline and no churn.
pub fn run_influence_experiment(
    graph: &SocialMultiGraph,
    plan: &MappingPlan,
    hops: u32,
    config: &SimConfig,
) -> Result<InfluenceLedger> {
    let config = SimConfig {
        churn_rate: 0.0,
        ..config.clone()
    };
    let mut sim = Simulator::from_assignment(config, graph.clone(), &plan.assignment)?;
    let mut ledger = InfluenceLedger::new(plan.peers.clone());
    for (i, u) in graph.uids().enumerate() {
        let source = plan
            .home(u)
            .ok_or_else(|| Error::Mapping(format!("user {u} has no peer")))?;
        let req = InferenceParams::neighborhood(u, None, 0.0, hops).with_id(i as u64);
        let res = execute_distributed(&mut sim, &req, source, &Permissive)?;
        if res.source_peer.is_some_and(|p| p != source) {
            return Err(Error::Invariant(format!(
                "request of {u} served first by a foreign peer"
            )));
        }
        ledger.record(u, source, res.secondary_peers());
    }
    Ok(ledger)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollusionKind {
    Random,
    Social,
}

impl CollusionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CollusionKind::Random => "random",
            CollusionKind::Social => "social",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollusionConfig {
    pub kind: CollusionKind,
    pub seed_fraction: f64,
    pub target_fraction: f64,
    pub repetitions: usize,
}

impl Default for CollusionConfig {
    fn default() -> Self {
        CollusionConfig {
            kind: CollusionKind::Random,
            seed_fraction: 0.01,
            target_fraction: 0.1,
            repetitions: 10,
        }
    }
}

impl CollusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.seed_fraction
            && self.seed_fraction <= self.target_fraction
            && self.target_fraction <= 1.0)
        {
            return Err(Error::Config(format!(
                "need 0 < seed_fraction ({}) <= target_fraction ({}) <= 1",
                self.seed_fraction, self.target_fraction
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        Ok(())
    }
}

/// Colluding peer sets grown from random seeds. Each seed grows its own
/// set in turn until `round(C · peers)` peers collude overall. Growth for a
/// given seed is a prefix of the growth for any larger `C`.
pub fn build_collusion(
    plan: &MappingPlan,
    config: &CollusionConfig,
    graph: &SocialMultiGraph,
    seed: u64,
) -> Result<(Vec<BTreeSet<PeerId>>, Vec<String>)> {
    config.validate()?;
    let peers = &plan.peers;
    let total = peers.len();
    let target = ((config.target_fraction * total as f64).round() as usize).min(total);
    let seeds = ((config.seed_fraction * total as f64).round() as usize).clamp(1, target.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = peers.clone();
    order.shuffle(&mut rng);
    let mut sets: Vec<BTreeSet<PeerId>> = order[..seeds]
        .iter()
        .map(|p| BTreeSet::from([*p]))
        .collect();
    let mut taken: BTreeSet<PeerId> = order[..seeds].iter().copied().collect();
    let mut warnings = Vec::new();

    let hosted = plan.hosted();
    let peers_of: &BTreeMap<Uid, Vec<PeerId>> = &plan.assignment;
    let mut exhausted = vec![false; sets.len()];
    let mut turn = 0;
    while taken.len() < target {
        let s = turn % sets.len();
        turn += 1;
        let next = match config.kind {
            CollusionKind::Random => None,
            CollusionKind::Social => {
                // Peers hosting users adjacent to users on the set's peers,
                // ranked by the number of such edges.
                let mut links: BTreeMap<PeerId, usize> = BTreeMap::new();
                for p in &sets[s] {
                    for u in hosted.get(p).into_iter().flatten() {
                        let nbrs = graph
                            .out_neighbors(*u)
                            .map(|(v, _)| v)
                            .chain(graph.in_neighbors(*u));
                        for v in nbrs {
                            for q in peers_of.get(&v).into_iter().flatten() {
                                if !taken.contains(q) {
                                    *links.entry(*q).or_default() += 1;
                                }
                            }
                        }
                    }
                }
                let best = links.values().copied().max();
                let top: Vec<PeerId> = links
                    .into_iter()
                    .filter(|(_, n)| Some(*n) == best)
                    .map(|(p, _)| p)
                    .collect();
                if top.is_empty() {
                    if !exhausted[s] {
                        exhausted[s] = true;
                        warnings.push(format!(
                            "social expansion of set {s} ran out of adjacent peers; filling at random"
                        ));
                    }
                    None
                } else {
                    Some(top[rng.random_range(0..top.len())])
                }
            }
        };
        let next = next.unwrap_or_else(|| {
            let free: Vec<PeerId> = peers
                .iter()
                .copied()
                .filter(|p| !taken.contains(p))
                .collect();
            free[rng.random_range(0..free.len())]
        });
        taken.insert(next);
        sets[s].insert(next);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok((sets, warnings))
}

pub fn collusion_influence(ledger: &InfluenceLedger, sets: &[BTreeSet<PeerId>]) -> Vec<f64> {
    sets.iter().map(|s| ledger.set_influence(s)).collect()
}

/// Result of repeating a collusion configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CollusionOutcome {
    /// Mean set influence per repetition.
    pub per_repetition: Vec<f64>,
    /// Mean individual influence of the colluders, per repetition.
    pub member_mean: Vec<f64>,
    pub summary: MeanCi,
    pub sets: Vec<Vec<BTreeSet<PeerId>>>,
    pub warnings: Vec<String>,
}

pub fn run_collusion(
    ledger: &InfluenceLedger,
    plan: &MappingPlan,
    graph: &SocialMultiGraph,
    config: &CollusionConfig,
    seed: u64,
) -> Result<CollusionOutcome> {
    let mut out = CollusionOutcome {
        per_repetition: Vec::new(),
        member_mean: Vec::new(),
        summary: mean_ci95(&[]),
        sets: Vec::new(),
        warnings: Vec::new(),
    };
    for r in 0..config.repetitions {
        let rep_seed = crate::ids::mix(seed, &[r as u64, 0xc011]);
        let (sets, warnings) = build_collusion(plan, config, graph, rep_seed)?;
        let values = collusion_influence(ledger, &sets);
        out.per_repetition.push(mean(&values));
        let members: Vec<f64> = sets
            .iter()
            .flatten()
            .map(|p| ledger.influence(*p))
            .collect();
        out.member_mean.push(mean(&members));
        out.sets.push(sets);
        out.warnings.extend(warnings);
    }
    out.summary = mean_ci95(&out.per_repetition);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{peer_ids, MappingKind};

    fn path6() -> SocialMultiGraph {
        let mut g = SocialMultiGraph::new();
        for i in 1..6u128 {
            g.insert_edge(Uid(i), Uid(i + 1), "link".into(), 1.0, SimTime::ZERO);
        }
        influence_graph(&g)
    }

    fn plan(groups: &[&[u128]]) -> MappingPlan {
        let peers = peer_ids(groups.len());
        let mut assignment = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            for u in *g {
                assignment.insert(Uid(*u), vec![peers[i]]);
            }
        }
        MappingPlan {
            assignment,
            peers,
            replication: 1,
            kind: MappingKind::Social,
        }
    }

    #[test]
    fn single_peer_has_no_influence() {
        let g = path6();
        let p = plan(&[&[1, 2, 3, 4, 5, 6]]);
        let l = run_influence_experiment(&g, &p, 3, &SimConfig::default()).unwrap();
        assert_eq!(l.total, 6);
        assert_eq!(l.mean_influence(), 0.0);
    }

    #[test]
    fn path_of_six_matches_hand_walk() {
        // Pairs {1,2} {3,4} {5,6}. Two hops from 2 needs 3 expanded on the
        // second peer; from 3, 2 on the first; from 4, 5 on the third;
        // from 5, 4 on the second. Ends never leave their own peer.
        let g = path6();
        let p = plan(&[&[1, 2], &[3, 4], &[5, 6]]);
        let l = run_influence_experiment(&g, &p, 2, &SimConfig::default()).unwrap();
        let peers = peer_ids(3);
        assert_eq!(l.served(peers[0]), 1);
        assert_eq!(l.served(peers[1]), 2);
        assert_eq!(l.served(peers[2]), 1);
        assert!((l.mean_influence() - 4.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn set_influence_dominates_members() {
        let mut l = InfluenceLedger::new(peer_ids(4));
        let p = peer_ids(4);
        l.record(Uid(1), p[0], [p[1], p[2]]);
        l.record(Uid(2), p[1], [p[2]]);
        l.record(Uid(3), p[2], [p[3], p[2]]);
        assert_eq!(l.served(p[2]), 2);
        let set = BTreeSet::from([p[2], p[3]]);
        assert!((l.set_influence(&set) - 1.0).abs() < 1e-12);
        assert_eq!(l.set_influence(&BTreeSet::from([p[1]])), l.influence(p[1]));
    }

    #[test]
    fn collusion_sizes_and_prefix_growth() {
        let g = path6();
        let users: Vec<Uid> = g.uids().collect();
        let plan = crate::mapping::random_mapping(&users, &peer_ids(100), 1, 1).unwrap();
        for kind in [CollusionKind::Random, CollusionKind::Social] {
            let mut last: Option<BTreeSet<PeerId>> = None;
            for c in [0.1, 0.2, 0.5] {
                let cfg = CollusionConfig {
                    kind,
                    target_fraction: c,
                    ..CollusionConfig::default()
                };
                let (sets, _) = build_collusion(&plan, &cfg, &g, 5).unwrap();
                let all: BTreeSet<PeerId> = sets.iter().flatten().copied().collect();
                assert_eq!(all.len(), (c * 100.0) as usize);
                if let Some(prev) = &last {
                    assert!(prev.is_subset(&all));
                }
                last = Some(all);
            }
        }
        let cfg = CollusionConfig {
            target_fraction: 0.01,
            ..CollusionConfig::default()
        };
        let (sets, _) = build_collusion(&plan, &cfg, &g, 5).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].len(), 1);
    }

    #[test]
    fn social_collusion_stays_in_its_clique_until_forced_out() {
        // Two 5-cliques joined by a bridge, one user per peer.
        let mut g = SocialMultiGraph::new();
        for base in [0u128, 5] {
            for a in 1..=5 {
                for b in (a + 1)..=5 {
                    g.insert_edge(Uid(base + a), Uid(base + b), "f".into(), 1.0, SimTime::ZERO);
                }
            }
        }
        g.insert_edge(Uid(5), Uid(6), "f".into(), 1.0, SimTime::ZERO);
        let g = influence_graph(&g);
        let groups: Vec<Vec<u128>> = (1..=10).map(|u| vec![u]).collect();
        let refs: Vec<&[u128]> = groups.iter().map(|v| v.as_slice()).collect();
        let plan = plan(&refs);
        let clique_of = |p: PeerId| if p.0 <= 5 { 0 } else { 1 };
        let mut checked = 0;
        for seed in 0..40 {
            for (c, outside) in [(0.5, 0), (0.7, 2)] {
                let cfg = CollusionConfig {
                    kind: CollusionKind::Social,
                    seed_fraction: 0.1,
                    target_fraction: c,
                    repetitions: 1,
                };
                let (sets, warnings) = build_collusion(&plan, &cfg, &g, seed).unwrap();
                assert!(warnings.is_empty());
                // The first member is the seed; bridge ends may cross early.
                let (_, first) = build_collusion(
                    &plan,
                    &CollusionConfig {
                        target_fraction: 0.1,
                        ..cfg.clone()
                    },
                    &g,
                    seed,
                )
                .map(|(s, w)| (w, *s[0].iter().next().unwrap()))
                .unwrap();
                if first == PeerId(5) || first == PeerId(6) {
                    continue;
                }
                let home = clique_of(first);
                let away = sets[0].iter().filter(|p| clique_of(**p) != home).count();
                assert_eq!(away, outside, "seed peer {first}, C {c}: {:?}", sets[0]);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }
}
