//! Assignment of users to peers: random placement, or placement by social
//! community so that socially close users share peers. Each user is stored
//! on `K` distinct peers.

mod betweenness;
mod louvain;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SocialMultiGraph;
use crate::ids::{PeerId, Uid};

pub use betweenness::{edge_betweenness, girvan_newman};
pub use louvain::{louvain, louvain_with_count, recursive_louvain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    Random,
    Social,
}

impl MappingKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MappingKind::Random => "random",
            MappingKind::Social => "social",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappingPlan {
    /// Each user's peers; the first is the user's home peer.
    pub assignment: BTreeMap<Uid, Vec<PeerId>>,
    pub peers: Vec<PeerId>,
    pub replication: usize,
    pub kind: MappingKind,
}

/// Peer identifiers `1..=count`.
pub fn peer_ids(count: usize) -> Vec<PeerId> {
    (1..=count as u128).map(PeerId).collect()
}

impl MappingPlan {
    /// Average number of users stored per peer.
    pub fn users_per_peer(&self) -> f64 {
        let total: usize = self.assignment.values().map(Vec::len).sum();
        total as f64 / self.peers.len().max(1) as f64
    }

    pub fn home(&self, uid: Uid) -> Option<PeerId> {
        self.assignment.get(&uid)?.first().copied()
    }

    /// Number of users on each peer (peers without users included).
    pub fn load(&self) -> BTreeMap<PeerId, usize> {
        let mut load: BTreeMap<PeerId, usize> = self.peers.iter().map(|p| (*p, 0)).collect();
        for ps in self.assignment.values() {
            for p in ps {
                *load.entry(*p).or_default() += 1;
            }
        }
        load
    }

    /// Users hosted by each peer.
    pub fn hosted(&self) -> BTreeMap<PeerId, BTreeSet<Uid>> {
        let mut out: BTreeMap<PeerId, BTreeSet<Uid>> = BTreeMap::new();
        for (u, ps) in &self.assignment {
            for p in ps {
                out.entry(*p).or_default().insert(*u);
            }
        }
        out
    }

    /// Checks coverage of `users` and distinct replicas.
    pub fn validate(&self, users: impl IntoIterator<Item = Uid>) -> Result<()> {
        for u in users {
            let ps = self
                .assignment
                .get(&u)
                .ok_or_else(|| Error::Invariant(format!("user {u} has no peer")))?;
            let distinct: BTreeSet<_> = ps.iter().collect();
            if ps.is_empty() || distinct.len() != ps.len() {
                return Err(Error::Invariant(format!(
                    "user {u} has repeated or no replicas"
                )));
            }
        }
        Ok(())
    }

    /// Fraction of directed user pairs joined by an edge that share a peer.
    pub fn internal_edge_fraction(&self, graph: &SocialMultiGraph) -> f64 {
        let (mut total, mut internal) = (0usize, 0usize);
        for u in graph.uids() {
            let Some(pu) = self.assignment.get(&u) else {
                continue;
            };
            for (v, _) in graph.out_neighbors(u) {
                if u == v {
                    continue;
                }
                total += 1;
                if self
                    .assignment
                    .get(&v)
                    .is_some_and(|pv| pv.iter().any(|p| pu.contains(p)))
                {
                    internal += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            internal as f64 / total as f64
        }
    }

    /// `uid,peer_id_1,...,peer_id_K`, one user per row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let mut header = vec!["uid".to_string()];
        header.extend((1..=self.replication).map(|i| format!("peer_id_{i}")));
        out.write_record(&header)?;
        for (u, ps) in &self.assignment {
            let mut row = vec![u.to_string()];
            row.extend(ps.iter().map(|p| p.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, kind: MappingKind) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut assignment = BTreeMap::new();
        let mut peers = BTreeSet::new();
        let mut replication = 0;
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let at = |m: String| Error::ParseAt {
                line: i + 2,
                message: m,
            };
            let mut fields = row.iter();
            let uid: Uid = fields
                .next()
                .ok_or_else(|| at("empty row".into()))?
                .parse()
                .map_err(|e: Error| at(e.to_string()))?;
            let ps: Vec<PeerId> = fields
                .map(|f| f.parse().map_err(|e: Error| at(e.to_string())))
                .collect::<Result<_>>()?;
            if ps.is_empty() {
                return Err(at(format!("user {uid} has no peer")));
            }
            replication = replication.max(ps.len());
            peers.extend(ps.iter().copied());
            assignment.insert(uid, ps);
        }
        Ok(MappingPlan {
            assignment,
            peers: peers.into_iter().collect(),
            replication,
            kind,
        })
    }
}

/// Each user on `k` distinct peers drawn uniformly, balanced so every peer
/// receives `⌊U·k/P⌋` or `⌈U·k/P⌉` users.
pub fn random_mapping(users: &[Uid], peers: &[PeerId], k: usize, seed: u64) -> Result<MappingPlan> {
    if k == 0 || k > peers.len() {
        return Err(Error::Mapping(format!(
            "replication {k} needs between 1 and {} peers",
            peers.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<Uid> = users.to_vec();
    users.sort();
    users.dedup();
    let mut assignment: BTreeMap<Uid, Vec<PeerId>> =
        users.iter().map(|u| (*u, Vec::with_capacity(k))).collect();
    // Spread slots across rounds so the remainder rotates between peers.
    let mut order: Vec<PeerId> = peers.to_vec();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    for _ in 0..k {
        let mut slots: Vec<PeerId> = (0..users.len())
            .map(|i| order[(cursor + i) % order.len()])
            .collect();
        cursor = (cursor + users.len()) % order.len();
        slots.shuffle(&mut rng);
        for i in 0..users.len() {
            if !assignment[&users[i]].contains(&slots[i]) {
                continue;
            }
            // Swap with a slot that fits both users. Later users are
            // re-checked when their turn comes.
            let mut fixed = false;
            for _ in 0..4 * users.len() {
                let j = rng.random_range(0..users.len());
                if j == i || assignment[&users[i]].contains(&slots[j]) {
                    continue;
                }
                if j < i && assignment[&users[j]].contains(&slots[i]) {
                    continue;
                }
                slots.swap(i, j);
                fixed = true;
                break;
            }
            if !fixed {
                let taken = &assignment[&users[i]];
                let free: Vec<PeerId> = peers
                    .iter()
                    .copied()
                    .filter(|p| !taken.contains(p))
                    .collect();
                slots[i] = free[rng.random_range(0..free.len())];
            }
        }
        for (i, u) in users.iter().enumerate() {
            assignment.get_mut(u).unwrap().push(slots[i]);
        }
    }
    Ok(MappingPlan {
        assignment,
        peers: peers.to_vec(),
        replication: k,
        kind: MappingKind::Random,
    })
}

/// Places communities on peers and adds replicas. Community `c` goes to
/// a randomly permuted peer; a user's extra replicas go to the peers of the
/// communities it has most edges into, then to random peers.
pub fn plan_from_communities(
    graph: &SocialMultiGraph,
    communities: &[BTreeSet<Uid>],
    peers: &[PeerId],
    k: usize,
    seed: u64,
) -> Result<MappingPlan> {
    if k == 0 || k > peers.len() {
        return Err(Error::Mapping(format!(
            "replication {k} needs between 1 and {} peers",
            peers.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x50c1a1);
    let mut perm: Vec<PeerId> = peers.to_vec();
    perm.shuffle(&mut rng);
    let community_peer: Vec<PeerId> = (0..communities.len())
        .map(|c| perm[c % perm.len()])
        .collect();
    let mut member_of: BTreeMap<Uid, usize> = BTreeMap::new();
    for (c, members) in communities.iter().enumerate() {
        for u in members {
            member_of.insert(*u, c);
        }
    }
    let mut assignment = BTreeMap::new();
    for (&u, &c) in &member_of {
        let mut ps = vec![community_peer[c]];
        if k > 1 {
            let mut links: BTreeMap<usize, usize> = BTreeMap::new();
            let nbrs = graph
                .out_neighbors(u)
                .map(|(v, _)| v)
                .chain(graph.in_neighbors(u));
            for v in nbrs {
                if let Some(&cv) = member_of.get(&v) {
                    if cv != c {
                        *links.entry(cv).or_default() += 1;
                    }
                }
            }
            let mut ranked: Vec<(usize, usize)> = links.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (cv, _) in ranked {
                if ps.len() == k {
                    break;
                }
                let p = community_peer[cv];
                if !ps.contains(&p) {
                    ps.push(p);
                }
            }
            while ps.len() < k {
                let p = peers[rng.random_range(0..peers.len())];
                if !ps.contains(&p) {
                    ps.push(p);
                }
            }
        }
        assignment.insert(u, ps);
    }
    Ok(MappingPlan {
        assignment,
        peers: peers.to_vec(),
        replication: k,
        kind: MappingKind::Social,
    })
}

/// Community detection method for the social mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommunityMethod {
    Betweenness,
    Louvain,
}

/// `count` communities by `method`, with any fallback warnings.
pub fn detect_communities(
    graph: &SocialMultiGraph,
    method: CommunityMethod,
    count: usize,
    min_size: usize,
    seed: u64,
) -> (Vec<BTreeSet<Uid>>, Vec<String>) {
    match method {
        CommunityMethod::Betweenness => {
            let r = girvan_newman(graph, count, min_size);
            (r.communities, r.warnings)
        }
        CommunityMethod::Louvain => (louvain_with_count(graph, count, seed), Vec::new()),
    }
}

/// Social mapping with one community per peer.
pub fn social_mapping(
    graph: &SocialMultiGraph,
    method: CommunityMethod,
    peers: &[PeerId],
    k: usize,
    min_size: usize,
    seed: u64,
) -> Result<(MappingPlan, Vec<String>)> {
    let (communities, warnings) = detect_communities(graph, method, peers.len(), min_size, seed);
    Ok((
        plan_from_communities(graph, &communities, peers, k, seed)?,
        warnings,
    ))
}

/// Undirected simple adjacency over all users, indexed densely.
pub(crate) struct Dense {
    pub uids: Vec<Uid>,
    pub adj: Vec<Vec<usize>>,
}

impl Dense {
    pub fn new(graph: &SocialMultiGraph) -> Self {
        let uids: Vec<Uid> = graph.uids().collect();
        let index: BTreeMap<Uid, usize> = uids.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); uids.len()];
        for (i, &u) in uids.iter().enumerate() {
            for (v, _) in graph.out_neighbors(u) {
                let j = index[&v];
                if i != j {
                    sets[i].insert(j);
                    sets[j].insert(i);
                }
            }
        }
        Dense {
            uids,
            adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Newman modularity of a partition of the undirected simple graph.
pub fn modularity(graph: &SocialMultiGraph, communities: &[BTreeSet<Uid>]) -> f64 {
    let d = Dense::new(graph);
    let m = d.edge_count() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let mut label = vec![usize::MAX; d.uids.len()];
    let index: BTreeMap<Uid, usize> = d.uids.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    for (c, members) in communities.iter().enumerate() {
        for u in members {
            if let Some(&i) = index.get(u) {
                label[i] = c;
            }
        }
    }
    let mut internal = vec![0.0; communities.len()];
    let mut degree = vec![0.0; communities.len()];
    for (i, nbrs) in d.adj.iter().enumerate() {
        if label[i] == usize::MAX {
            continue;
        }
        degree[label[i]] += nbrs.len() as f64;
        for &j in nbrs {
            if label[j] == label[i] {
                internal[label[i]] += 0.5;
            }
        }
    }
    internal
        .iter()
        .zip(&degree)
        .map(|(l, d)| l / m - (d / (2.0 * m)).powi(2))
        .sum()
}
