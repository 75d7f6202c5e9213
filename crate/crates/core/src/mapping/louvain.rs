//! Modularity optimisation by local moving and aggregation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::betweenness::bfs_halves;
use super::Dense;
use crate::graph::SocialMultiGraph;
use crate::ids::Uid;

/// Weighted undirected graph with self-loop weight kept apart in `loops`.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
}

impl Level {
    fn degree(&self, v: usize) -> f64 {
        self.adj[v].iter().map(|e| e.1).sum::<f64>() + 2.0 * self.loops[v]
    }

    fn total_weight(&self) -> f64 {
        (0..self.adj.len()).map(|v| self.degree(v)).sum::<f64>() / 2.0
    }

    /// One local-moving phase. Returns the community of each node and
    /// whether anything moved.
    fn local_moving(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.adj.len();
        let m2 = 2.0 * self.total_weight();
        let mut comm: Vec<usize> = (0..n).collect();
        let degree: Vec<f64> = (0..n).map(|v| self.degree(v)).collect();
        let mut tot: Vec<f64> = degree.clone();
        if m2 == 0.0 {
            return (comm, false);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut moved_any = false;
        for _ in 0..100 {
            let mut moved = false;
            for &v in &order {
                let own = comm[v];
                let mut links: BTreeMap<usize, f64> = BTreeMap::new();
                for &(u, w) in &self.adj[v] {
                    *links.entry(comm[u]).or_default() += w;
                }
                tot[own] -= degree[v];
                let gain = |c: usize, k_in: f64| k_in - tot[c] * degree[v] / m2;
                let mut best = (own, gain(own, links.get(&own).copied().unwrap_or(0.0)));
                for (&c, &k_in) in &links {
                    let g = gain(c, k_in);
                    if g > best.1 + 1e-12 {
                        best = (c, g);
                    }
                }
                tot[best.0] += degree[v];
                if best.0 != own {
                    comm[v] = best.0;
                    moved = true;
                    moved_any = true;
                }
            }
            if !moved {
                break;
            }
        }
        (comm, moved_any)
    }

    fn aggregate(&self, comm: &[usize]) -> (Level, Vec<usize>) {
        let mut renum: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in comm {
            let next = renum.len();
            renum.entry(c).or_insert(next);
        }
        let k = renum.len();
        let map: Vec<usize> = comm.iter().map(|c| renum[c]).collect();
        let mut edges: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut loops = vec![0.0; k];
        for v in 0..self.adj.len() {
            loops[map[v]] += self.loops[v];
            for &(u, w) in &self.adj[v] {
                if map[u] == map[v] {
                    // Each internal edge is seen from both ends.
                    loops[map[v]] += w / 2.0;
                } else {
                    *edges[map[v]].entry(map[u]).or_default() += w;
                }
            }
        }
        let adj = edges.into_iter().map(|m| m.into_iter().collect()).collect();
        (Level { adj, loops }, map)
    }
}

fn run(adj: Vec<Vec<(usize, f64)>>, seed: u64) -> Vec<usize> {
    let n = adj.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = Level {
        adj,
        loops: vec![0.0; n],
    };
    let mut membership: Vec<usize> = (0..n).collect();
    loop {
        let (comm, moved) = level.local_moving(&mut rng);
        if !moved {
            break;
        }
        let (next, map) = level.aggregate(&comm);
        for m in membership.iter_mut() {
            *m = map[*m];
        }
        if next.adj.len() == level.adj.len() {
            break;
        }
        level = next;
    }
    membership
}

fn group(uids: &[Uid], membership: &[usize]) -> Vec<BTreeSet<Uid>> {
    let mut by: BTreeMap<usize, BTreeSet<Uid>> = BTreeMap::new();
    for (i, &c) in membership.iter().enumerate() {
        by.entry(c).or_default().insert(uids[i]);
    }
    let mut out: Vec<BTreeSet<Uid>> = by.into_values().collect();
    out.sort_by(|a, b| a.first().cmp(&b.first()));
    out
}

fn unweighted(adj: &[Vec<usize>]) -> Vec<Vec<(usize, f64)>> {
    adj.iter()
        .map(|ns| ns.iter().map(|&u| (u, 1.0)).collect())
        .collect()
}

/// Louvain communities of the undirected simple view of `graph`.
pub fn louvain(graph: &SocialMultiGraph, seed: u64) -> Vec<BTreeSet<Uid>> {
    let d = Dense::new(graph);
    let membership = run(unweighted(&d.adj), seed);
    group(&d.uids, &membership)
}

/// Louvain, then repeatedly re-partitions the largest community until there
/// are `⌊U / avg_size⌋` communities.
pub fn recursive_louvain(graph: &SocialMultiGraph, avg_size: f64, seed: u64) -> Vec<BTreeSet<Uid>> {
    let n = graph.vertex_count();
    let target = (n as f64 / avg_size.max(1.0)).floor() as usize;
    louvain_with_count(graph, target, seed)
}

/// Louvain refined to exactly `target` communities (capped by the user
/// count): the largest community is re-partitioned until the count is
/// reached, and pieces beyond it are merged into their best-connected
/// sibling.
pub fn louvain_with_count(
    graph: &SocialMultiGraph,
    target: usize,
    seed: u64,
) -> Vec<BTreeSet<Uid>> {
    let d = Dense::new(graph);
    let n = d.uids.len();
    if n == 0 {
        return Vec::new();
    }
    let target = target.clamp(1, n);
    let mut comms: Vec<Vec<usize>> = {
        let membership = run(unweighted(&d.adj), seed);
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in membership.iter().enumerate() {
            by.entry(c).or_default().push(i);
        }
        by.into_values().collect()
    };
    // Too many from the first pass: merge smallest into neighbors.
    merge_down(&d.adj, &mut comms, target);
    let mut round = 0u64;
    while comms.len() < target {
        round += 1;
        let c = (0..comms.len())
            .max_by(|&a, &b| comms[a].len().cmp(&comms[b].len()).then(b.cmp(&a)))
            .unwrap();
        if comms[c].len() < 2 {
            break;
        }
        let nodes = std::mem::take(&mut comms[c]);
        let local: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let sub: Vec<Vec<(usize, f64)>> = nodes
            .iter()
            .map(|v| {
                d.adj[*v]
                    .iter()
                    .filter_map(|u| local.get(u).map(|&j| (j, 1.0)))
                    .collect()
            })
            .collect();
        let membership = run(sub, seed.wrapping_add(round));
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &m) in membership.iter().enumerate() {
            by.entry(m).or_default().push(nodes[i]);
        }
        let mut pieces: Vec<Vec<usize>> = by.into_values().collect();
        if pieces.len() < 2 {
            let (a, b) = bfs_halves(&d.adj, &nodes);
            pieces = vec![a, b];
        }
        let room = target - comms.len() + 1;
        merge_down(&d.adj, &mut pieces, room);
        comms[c] = pieces.remove(0);
        comms.extend(pieces);
    }
    let mut out: Vec<BTreeSet<Uid>> = comms
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|c| c.into_iter().map(|i| d.uids[i]).collect())
        .collect();
    out.sort_by(|a, b| a.first().cmp(&b.first()));
    out
}

/// Merges the smallest piece into the piece it shares most edges with
/// (or the next smallest) until at most `limit` remain.
fn merge_down(adj: &[Vec<usize>], pieces: &mut Vec<Vec<usize>>, limit: usize) {
    let limit = limit.max(1);
    while pieces.len() > limit {
        let small = (0..pieces.len())
            .min_by(|&a, &b| pieces[a].len().cmp(&pieces[b].len()).then(a.cmp(&b)))
            .unwrap();
        let moving = pieces.remove(small);
        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, p) in pieces.iter().enumerate() {
            for &v in p {
                owner.insert(v, i);
            }
        }
        let mut links: BTreeMap<usize, usize> = BTreeMap::new();
        for &v in &moving {
            for u in &adj[v] {
                if let Some(&i) = owner.get(u) {
                    *links.entry(i).or_default() += 1;
                }
            }
        }
        let into = links
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or_else(|| {
                (0..pieces.len())
                    .min_by(|&a, &b| pieces[a].len().cmp(&pieces[b].len()).then(a.cmp(&b)))
                    .unwrap()
            });
        pieces[into].extend(moving);
        pieces[into].sort_unstable();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::SimTime;
    use crate::mapping::modularity;

    fn cliques(count: u128, size: u128) -> SocialMultiGraph {
        let mut g = SocialMultiGraph::new();
        for c in 0..count {
            let base = c * size;
            for a in 1..=size {
                for b in (a + 1)..=size {
                    g.insert_edge(Uid(base + a), Uid(base + b), "f".into(), 1.0, SimTime::ZERO);
                }
            }
            // Ring of single links between consecutive cliques.
            let next = ((c + 1) % count) * size + 1;
            g.insert_edge(Uid(base + size), Uid(next), "f".into(), 1.0, SimTime::ZERO);
        }
        g
    }

    #[test]
    fn ring_of_cliques_is_recovered() {
        let g = cliques(6, 5);
        let comms = louvain(&g, 1);
        assert_eq!(comms.len(), 6);
        assert!(comms.iter().all(|c| c.len() == 5));
        assert!(modularity(&g, &comms) > 0.6);
    }

    #[test]
    fn recursive_split_reaches_target_count() {
        let g = cliques(6, 10);
        let comms = recursive_louvain(&g, 5.0, 3);
        assert_eq!(comms.len(), 12);
        let total: usize = comms.iter().map(BTreeSet::len).sum();
        assert_eq!(total, 60);
        let merged = recursive_louvain(&g, 20.0, 3);
        assert_eq!(merged.len(), 3);
    }
}
