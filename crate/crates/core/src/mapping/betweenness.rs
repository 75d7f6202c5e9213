//! Divisive community detection by repeated removal of the edge with the
//! highest shortest-path betweenness.

use std::collections::{BTreeSet, VecDeque};

use super::Dense;
use crate::graph::SocialMultiGraph;
use crate::ids::Uid;

/// Edge betweenness (Brandes) restricted to the nodes in `nodes`, over the
/// edges still present in `adj`. Returns `(u, v, score)` with `u < v`.
pub(crate) fn betweenness_within(adj: &[Vec<usize>], nodes: &[usize]) -> Vec<(usize, usize, f64)> {
    // Compact row layout over local indices.
    let mut local = std::collections::HashMap::with_capacity(nodes.len());
    for (i, &v) in nodes.iter().enumerate() {
        local.insert(v, i as u32);
    }
    let n = nodes.len();
    let mut offs = Vec::with_capacity(n + 1);
    let mut nbr: Vec<u32> = Vec::new();
    let mut eid: Vec<u32> = Vec::new();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut ids: std::collections::HashMap<(u32, u32), u32> = std::collections::HashMap::new();
    offs.push(0u32);
    for (i, &v) in nodes.iter().enumerate() {
        let i = i as u32;
        for &w in &adj[v] {
            let j = local[&w];
            let key = (i.min(j), i.max(j));
            let e = *ids.entry(key).or_insert_with(|| {
                edges.push(key);
                edges.len() as u32 - 1
            });
            nbr.push(j);
            eid.push(e);
        }
        offs.push(nbr.len() as u32);
    }
    let mut score = vec![0.0f64; edges.len()];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![u32::MAX; n];
    let mut delta = vec![0.0f64; n];
    let mut order: Vec<u32> = Vec::with_capacity(n);
    for s in 0..n {
        for &v in &order {
            let v = v as usize;
            sigma[v] = 0.0;
            dist[v] = u32::MAX;
            delta[v] = 0.0;
        }
        order.clear();
        sigma[s] = 1.0;
        dist[s] = 0;
        order.push(s as u32);
        let mut head = 0;
        while head < order.len() {
            let v = order[head] as usize;
            head += 1;
            let next = dist[v] + 1;
            for &w in &nbr[offs[v] as usize..offs[v + 1] as usize] {
                let w = w as usize;
                if dist[w] == u32::MAX {
                    dist[w] = next;
                    order.push(w as u32);
                }
                if dist[w] == next {
                    sigma[w] += sigma[v];
                }
            }
        }
        for &w in order.iter().rev() {
            let w = w as usize;
            let coef = (1.0 + delta[w]) / sigma[w];
            let below = dist[w].wrapping_sub(1);
            for k in offs[w] as usize..offs[w + 1] as usize {
                let v = nbr[k] as usize;
                if dist[v] == below {
                    let c = sigma[v] * coef;
                    score[eid[k] as usize] += c;
                    delta[v] += c;
                }
            }
        }
    }
    let mut out: Vec<(usize, usize, f64)> = edges
        .iter()
        .zip(score)
        .map(|(&(i, j), s)| {
            let (u, v) = (nodes[i as usize], nodes[j as usize]);
            (u.min(v), u.max(v), s / 2.0)
        })
        .collect();
    out.sort_by_key(|a| (a.0, a.1));
    out
}

/// Edge betweenness over the undirected simple view of `graph`.
pub fn edge_betweenness(graph: &SocialMultiGraph) -> Vec<(Uid, Uid, f64)> {
    let d = Dense::new(graph);
    let nodes: Vec<usize> = (0..d.uids.len()).collect();
    betweenness_within(&d.adj, &nodes)
        .into_iter()
        .map(|(u, v, s)| (d.uids[u], d.uids[v], s))
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct CommunitySplit {
    pub communities: Vec<BTreeSet<Uid>>,
    pub edges_removed: usize,
    pub warnings: Vec<String>,
}

fn component_of(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut seen = std::collections::HashSet::from([start]);
    let mut out = vec![start];
    let mut head = 0;
    while head < out.len() {
        let u = out[head];
        head += 1;
        for &v in &adj[u] {
            if seen.insert(v) {
                out.push(v);
            }
        }
    }
    out.sort_unstable();
    out
}

fn remove_edge(adj: &mut [Vec<usize>], u: usize, v: usize) {
    adj[u].retain(|&x| x != v);
    adj[v].retain(|&x| x != u);
}

fn add_edge(adj: &mut [Vec<usize>], u: usize, v: usize) {
    let at = adj[u].partition_point(|&x| x < v);
    adj[u].insert(at, v);
    let at = adj[v].partition_point(|&x| x < u);
    adj[v].insert(at, u);
}

/// Splits the undirected view of `graph` into `target` communities by
/// removing highest-betweenness edges. A removal that would cut off a piece
/// smaller than `min_size` is undone and the edge kept for good. If no
/// admissible edge remains, the largest community is cut in BFS order.
pub fn girvan_newman(graph: &SocialMultiGraph, target: usize, min_size: usize) -> CommunitySplit {
    let d = Dense::new(graph);
    let mut adj = d.adj.clone();
    let n = adj.len();
    let mut result = CommunitySplit::default();
    if n == 0 || target == 0 {
        return result;
    }
    let min_size = min_size.max(1);
    // Components as sorted node lists, with cached scores per component.
    let mut comps: Vec<Vec<usize>> = {
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if !seen[s] {
                let c = component_of(&adj, s);
                for &v in &c {
                    seen[v] = true;
                }
                out.push(c);
            }
        }
        out
    };
    let mut protected: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut scores: Vec<Option<Vec<(usize, usize, f64)>>> = vec![None; comps.len()];
    let mut stuck = vec![false; comps.len()];

    while comps.len() < target {
        // Highest admissible edge across components that can still split.
        let mut best: Option<(usize, usize, usize, f64)> = None;
        for c in 0..comps.len() {
            if stuck[c] || comps[c].len() < 2 * min_size {
                continue;
            }
            if scores[c].is_none() {
                scores[c] = Some(betweenness_within(&adj, &comps[c]));
            }
            let mut any = false;
            for &(u, v, s) in scores[c].as_ref().unwrap() {
                if protected.contains(&(u, v)) {
                    continue;
                }
                any = true;
                let better = match best {
                    None => true,
                    Some((_, bu, bv, bs)) => {
                        s > bs + 1e-9 || ((s - bs).abs() <= 1e-9 && (u, v) < (bu, bv))
                    }
                };
                if better {
                    best = Some((c, u, v, s));
                }
            }
            if !any {
                stuck[c] = true;
            }
        }
        let Some((c, u, v, _)) = best else { break };
        remove_edge(&mut adj, u, v);
        let side = component_of(&adj, u);
        if side.len() == comps[c].len() {
            result.edges_removed += 1;
            scores[c] = None;
            continue;
        }
        let other_len = comps[c].len() - side.len();
        if side.len() < min_size || other_len < min_size {
            add_edge(&mut adj, u, v);
            protected.insert((u, v));
            continue;
        }
        result.edges_removed += 1;
        let other = component_of(&adj, v);
        comps[c] = side;
        scores[c] = None;
        stuck[c] = false;
        comps.push(other);
        scores.push(None);
        stuck.push(false);
    }

    if comps.len() < target {
        result.warnings.push(format!(
            "betweenness split stopped at {} of {} communities; cutting the largest",
            comps.len(),
            target
        ));
        while comps.len() < target {
            let (c, _) = comps
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
                .unwrap();
            if comps[c].len() < 2 {
                result.warnings.push(format!(
                    "only {} non-empty communities possible",
                    comps.len()
                ));
                break;
            }
            let (keep, rest) = bfs_halves(&d.adj, &comps[c]);
            comps[c] = keep;
            comps.push(rest);
        }
    }
    result.communities = comps
        .into_iter()
        .map(|c| c.into_iter().map(|i| d.uids[i]).collect())
        .collect();
    result
        .communities
        .sort_by(|a: &BTreeSet<Uid>, b| a.first().cmp(&b.first()));
    result
}

/// Splits `nodes` in two: the first half in BFS order from the smallest
/// node over the original adjacency, and the remainder.
pub(crate) fn bfs_halves(adj: &[Vec<usize>], nodes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let inside: BTreeSet<usize> = nodes.iter().copied().collect();
    let half = nodes.len() / 2;
    let mut order = Vec::with_capacity(nodes.len());
    let mut seen = BTreeSet::new();
    for &s in nodes {
        if order.len() >= half {
            break;
        }
        if !seen.insert(s) {
            continue;
        }
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            if order.len() >= half {
                break;
            }
            for &v in &adj[u] {
                if inside.contains(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
    }
    let mut keep: Vec<usize> = order;
    keep.sort_unstable();
    let kept: BTreeSet<usize> = keep.iter().copied().collect();
    let rest = nodes
        .iter()
        .copied()
        .filter(|v| !kept.contains(v))
        .collect();
    (keep, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::SimTime;

    fn barbell() -> SocialMultiGraph {
        let mut g = SocialMultiGraph::new();
        for base in [0u128, 5] {
            for a in 1..=5 {
                for b in (a + 1)..=5 {
                    g.insert_edge(Uid(base + a), Uid(base + b), "f".into(), 1.0, SimTime::ZERO);
                }
            }
        }
        g.insert_edge(Uid(5), Uid(6), "f".into(), 1.0, SimTime::ZERO);
        g
    }

    #[test]
    fn bridge_has_highest_betweenness() {
        let scores = edge_betweenness(&barbell());
        let top = scores.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        assert_eq!((top.0, top.1), (Uid(5), Uid(6)));
        assert!((top.2 - 25.0).abs() < 1e-9);
    }

    #[test]
    fn barbell_splits_at_the_bridge() {
        let split = girvan_newman(&barbell(), 2, 3);
        assert_eq!(split.edges_removed, 1);
        assert!(split.warnings.is_empty());
        assert_eq!(split.communities[0], (1..=5).map(Uid).collect());
        assert_eq!(split.communities[1], (6..=10).map(Uid).collect());
    }

    #[test]
    fn min_size_forces_fallback() {
        let split = girvan_newman(&barbell(), 4, 3);
        assert_eq!(split.communities.len(), 4);
        assert!(!split.warnings.is_empty());
        let total: usize = split.communities.iter().map(BTreeSet::len).sum();
        assert_eq!(total, 10);
    }
}
