//! Centralized evaluation over a single graph. Used by peers on their local
//! snapshots and as the reference oracle.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{Answer, InferenceKind, InferenceParams};
use crate::acp::{AccessPolicy, RequestContext, RequestedObject};
use crate::error::{Error, Result};
use crate::geo::great_circle_m;
use crate::graph::{EdgeLabel, SocialMultiGraph};
use crate::ids::{PeerId, SimTime, Uid};

/// How a read reached the data owner.
#[derive(Clone, Copy, Debug)]
pub struct Via<'a> {
    pub originator: Uid,
    pub users: &'a [Uid],
    pub peers: &'a [PeerId],
}

impl Via<'_> {
    pub fn direct(originator: Uid) -> Via<'static> {
        Via {
            originator,
            users: &[],
            peers: &[],
        }
    }
}

/// Decides whether an owner discloses a piece of data to a request.
pub trait AccessGate {
    fn permits(&self, owner: Uid, requested: &RequestedObject, via: &Via<'_>) -> bool;

    /// Whether `via` influences decisions; lets callers skip building it.
    fn uses_path(&self) -> bool {
        true
    }
}

/// Grants everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct Permissive;

impl AccessGate for Permissive {
    fn permits(&self, _: Uid, _: &RequestedObject, _: &Via<'_>) -> bool {
        true
    }

    fn uses_path(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
struct Relationship {
    distance: Option<u32>,
    labels: BTreeSet<EdgeLabel>,
    weight: Option<f64>,
}

/// Evaluates per-user policies. Users without a policy disclose everything.
pub struct PolicyGate<'a> {
    graph: &'a SocialMultiGraph,
    policies: &'a BTreeMap<Uid, AccessPolicy>,
    now: SimTime,
    pub originator_peer: PeerId,
    pub application: String,
    relations: RefCell<BTreeMap<(Uid, Uid), Relationship>>,
}

impl<'a> PolicyGate<'a> {
    pub fn new(
        graph: &'a SocialMultiGraph,
        policies: &'a BTreeMap<Uid, AccessPolicy>,
        now: SimTime,
    ) -> Self {
        PolicyGate {
            graph,
            policies,
            now,
            originator_peer: PeerId(0),
            application: String::new(),
            relations: RefCell::new(BTreeMap::new()),
        }
    }

    /// Social distance from owner to originator, labels over which they are
    /// joined within two hops, and the widest such connection.
    fn relationship(&self, owner: Uid, originator: Uid) -> Relationship {
        if let Some(r) = self.relations.borrow().get(&(owner, originator)) {
            return r.clone();
        }
        let g = self.graph;
        let mut dist = BTreeMap::from([(owner, 0u32)]);
        let mut queue = VecDeque::from([owner]);
        let mut distance = (owner == originator).then_some(0);
        while let (None, Some(u)) = (distance, queue.pop_front()) {
            let d = dist[&u];
            for (v, _) in g.out_neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    if v == originator {
                        distance = Some(d + 1);
                        break;
                    }
                    queue.push_back(v);
                }
            }
        }
        let mut labels = BTreeSet::new();
        let mut weight: Option<f64> = None;
        let mut offer = |w: f64| weight = Some(weight.map_or(w, |x: f64| x.max(w)));
        for (l, w) in g.weights(owner, originator, self.now) {
            labels.insert(l);
            offer(w);
        }
        for (j, first) in g.out_neighbors(owner) {
            if j == originator || j == owner {
                continue;
            }
            for (l2, w2) in g.weights(j, originator, self.now) {
                for (l1, s1) in first {
                    let w1 = g.effective_weight(owner, s1, self.now);
                    offer(w1.min(w2));
                    if *l1 == l2 {
                        labels.insert(l2.clone());
                    }
                }
            }
        }
        let r = Relationship {
            distance,
            labels,
            weight,
        };
        self.relations
            .borrow_mut()
            .insert((owner, originator), r.clone());
        r
    }
}

impl AccessGate for PolicyGate<'_> {
    fn permits(&self, owner: Uid, requested: &RequestedObject, via: &Via<'_>) -> bool {
        let Some(policy) = self.policies.get(&owner) else {
            return true;
        };
        let rel = self.relationship(owner, via.originator);
        let ctx = RequestContext {
            originator_user: via.originator,
            originator_peer: self.originator_peer,
            application: self.application.clone(),
            intermediate_users: via.users.iter().copied().filter(|u| *u != owner).collect(),
            intermediate_peers: via.peers.iter().copied().collect(),
            social_distance: rel.distance,
            connection_labels: rel.labels,
            connection_weight: rel.weight,
            originator_location: self
                .graph
                .vertex(via.originator)
                .and_then(|v| v.location)
                .map(|f| (f.lat, f.lon)),
        };
        policy.evaluate(&ctx, requested).granted()
    }
}

/// A graph at a point in simulated time, read through an access gate.
#[derive(Clone, Copy)]
pub struct GraphView<'a> {
    pub graph: &'a SocialMultiGraph,
    pub now: SimTime,
    pub gate: &'a dyn AccessGate,
    pub originator: Uid,
}

impl<'a> GraphView<'a> {
    pub fn new(graph: &'a SocialMultiGraph, now: SimTime) -> Self {
        GraphView {
            graph,
            now,
            gate: &Permissive,
            originator: Uid(0),
        }
    }

    pub fn with_gate(mut self, gate: &'a dyn AccessGate, originator: Uid) -> Self {
        self.gate = gate;
        self.originator = originator;
        self
    }

    fn require(&self, uid: Uid) -> Result<()> {
        if self.graph.contains(uid) {
            Ok(())
        } else {
            Err(Error::UnknownUser(uid))
        }
    }

    /// Out-neighbors of `u` joined by an edge with the label (any label when
    /// `None`) and an aged weight of at least `min_weight`, which the owner
    /// discloses. Each neighbor appears once, with its best such weight.
    pub fn qualifying_neighbors(
        &self,
        u: Uid,
        label: Option<&EdgeLabel>,
        min_weight: f64,
        via: &Via<'_>,
    ) -> Vec<(Uid, f64)> {
        let mut out = Vec::new();
        for (v, labels) in self.graph.out_neighbors(u) {
            if v == u {
                continue;
            }
            let mut best: Option<f64> = None;
            for (l, s) in labels {
                if label.is_some_and(|want| want != l) {
                    continue;
                }
                let w = self.graph.effective_weight(u, s, self.now);
                if w < min_weight || best.is_some_and(|b| b >= w) {
                    continue;
                }
                if self
                    .gate
                    .permits(u, &RequestedObject::edge(l.clone(), w), via)
                {
                    best = Some(w);
                }
            }
            if let Some(w) = best {
                out.push((v, w));
            }
        }
        out
    }

    pub fn relation_test(
        &self,
        ego: Uid,
        alter: Uid,
        label: &EdgeLabel,
        min_weight: f64,
    ) -> Result<bool> {
        self.require(ego)?;
        let weight = self
            .graph
            .edge(ego, alter, label)
            .map(|s| self.graph.effective_weight(ego, s, self.now));
        let requested = RequestedObject::edge(label.clone(), weight.unwrap_or(min_weight));
        if !self
            .gate
            .permits(ego, &requested, &Via::direct(self.originator))
        {
            return Err(Error::AccessDenied { owner: ego });
        }
        Ok(weight.is_some_and(|w| w >= min_weight))
    }

    /// Out-neighbors over `label` by decreasing weight, ties by ascending
    /// UID, truncated to `n`.
    pub fn top_relations(&self, ego: Uid, label: &EdgeLabel, n: usize) -> Result<Vec<(Uid, f64)>> {
        self.require(ego)?;
        let mut v = self.qualifying_neighbors(ego, Some(label), 0.0, &Via::direct(self.originator));
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(n);
        Ok(v)
    }

    /// Normalized weights of every out-neighbor of `i`: label-summed weight
    /// over the largest label-summed weight among them.
    pub fn normalized_weights(&self, i: Uid) -> BTreeMap<Uid, f64> {
        let via = Via::direct(self.originator);
        let mut sums = BTreeMap::new();
        for (j, labels) in self.graph.out_neighbors(i) {
            if j == i {
                continue;
            }
            let mut sum = 0.0;
            for (l, s) in labels {
                let w = self.graph.effective_weight(i, s, self.now);
                if self
                    .gate
                    .permits(i, &RequestedObject::edge(l.clone(), w), &via)
                {
                    sum += w;
                }
            }
            sums.insert(j, sum);
        }
        let max = sums.values().copied().fold(0.0, f64::max);
        for v in sums.values_mut() {
            *v = if max > 0.0 { *v / max } else { 0.0 };
        }
        sums
    }

    pub fn normalized_weight(&self, i: Uid, j: Uid) -> Result<f64> {
        self.normalized_weights(i)
            .get(&j)
            .copied()
            .ok_or(Error::UndefinedPair { ego: i, alter: j })
    }

    /// Social strength of `i` toward `m` and the number of paths folded:
    /// one factor for the direct edge and one per intermediate `j` with
    /// edges `i → j → m`. Factors are folded in UID order of the
    /// intermediate (`m` itself for the direct edge), the same order the
    /// distributed executor uses, so both give bit-identical results.
    pub fn social_strength(&self, i: Uid, m: Uid) -> Result<(f64, usize)> {
        self.require(i)?;
        let nw_i = self.normalized_weights(i);
        let mut legs = BTreeMap::new();
        for (&j, &first) in &nw_i {
            if j == m {
                legs.insert(m, first);
            } else if let Some(&second) = self.normalized_weights(j).get(&m) {
                legs.insert(j, first.min(second));
            }
        }
        let mut acc = StrengthAcc::default();
        for w in legs.into_values() {
            acc.fold(w);
        }
        Ok((acc.value(), acc.paths))
    }

    /// Users reachable from `ego` in at most `radius` hops where every
    /// traversed edge satisfies the label and weight filters. Scored by hop
    /// distance; ordered by distance, then UID. `ego` is excluded.
    pub fn neighborhood(
        &self,
        ego: Uid,
        label: Option<&EdgeLabel>,
        min_weight: f64,
        radius: u32,
    ) -> Result<Vec<(Uid, f64)>> {
        self.require(ego)?;
        let track = self.gate.uses_path();
        let mut dist = BTreeMap::from([(ego, 0u32)]);
        let mut parent: BTreeMap<Uid, Uid> = BTreeMap::new();
        let mut queue = VecDeque::from([ego]);
        let mut path = Vec::new();
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d >= radius {
                continue;
            }
            if track {
                path.clear();
                let mut cur = u;
                while let Some(&p) = parent.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
            }
            let via = Via {
                originator: self.originator,
                users: &path,
                peers: &[],
            };
            for (v, _) in self.qualifying_neighbors(u, label, min_weight, &via) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    parent.insert(v, u);
                    queue.push_back(v);
                }
            }
        }
        dist.remove(&ego);
        let mut out: Vec<(Uid, f64)> = dist.into_iter().map(|(u, d)| (u, d as f64)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Keeps the users whose disclosed, fresh location is within
    /// `distance_m` of `origin`.
    pub fn filter_by_location(
        &self,
        users: Vec<(Uid, f64)>,
        origin: (f64, f64),
        distance_m: f64,
        fresh_since: Option<SimTime>,
    ) -> Vec<(Uid, f64)> {
        let via = Via::direct(self.originator);
        users
            .into_iter()
            .filter(|(u, _)| {
                let Some(fix) = self.graph.vertex(*u).and_then(|v| v.location) else {
                    return false;
                };
                fresh_since.is_none_or(|t| fix.timestamp >= t)
                    && great_circle_m(origin.0, origin.1, fix.lat, fix.lon) <= distance_m
                    && self.gate.permits(*u, &RequestedObject::location(), &via)
            })
            .collect()
    }

    pub fn location_of(&self, uid: Uid) -> Result<(f64, f64)> {
        self.require(uid)?;
        self.graph
            .vertex(uid)
            .and_then(|v| v.location)
            .map(|f| (f.lat, f.lon))
            .ok_or(Error::MissingLocation(uid))
    }

    pub fn proximity(
        &self,
        ego: Uid,
        label: Option<&EdgeLabel>,
        min_weight: f64,
        radius: u32,
        distance_m: f64,
        fresh_since: Option<SimTime>,
    ) -> Result<Vec<(Uid, f64)>> {
        let origin = self.location_of(ego)?;
        let found = self.neighborhood(ego, label, min_weight, radius)?;
        Ok(self.filter_by_location(found, origin, distance_m, fresh_since))
    }

    /// Runs any request; the oracle behind distributed execution.
    pub fn evaluate(&self, p: &InferenceParams) -> Result<Answer> {
        p.validate()?;
        let any = EdgeLabel::new("");
        match p.kind {
            InferenceKind::RelationTest => Ok(Answer::Bool(self.relation_test(
                p.ego,
                p.alter.unwrap_or_default(),
                p.label.as_ref().unwrap_or(&any),
                p.min_weight,
            )?)),
            InferenceKind::TopRelations => Ok(Answer::Users(self.top_relations(
                p.ego,
                p.label.as_ref().unwrap_or(&any),
                p.n.unwrap_or(1),
            )?)),
            InferenceKind::Neighborhood => Ok(Answer::Users(self.neighborhood(
                p.ego,
                p.label.as_ref(),
                p.min_weight,
                p.radius.unwrap_or(1),
            )?)),
            InferenceKind::Proximity => Ok(Answer::Users(self.proximity(
                p.ego,
                p.label.as_ref(),
                p.min_weight,
                p.radius.unwrap_or(1),
                p.distance_m.unwrap_or(0.0),
                p.fresh_since(),
            )?)),
            InferenceKind::SocialStrength => Ok(Answer::Real(
                self.social_strength(p.ego, p.alter.unwrap_or_default())?.0,
            )),
        }
    }
}

/// Running product for social strength.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StrengthAcc {
    product: f64,
    pub paths: usize,
}

impl Default for StrengthAcc {
    fn default() -> Self {
        StrengthAcc {
            product: 1.0,
            paths: 0,
        }
    }
}

impl StrengthAcc {
    pub fn fold(&mut self, path_weight: f64) {
        self.product *= 1.0 - path_weight / 2.0;
        self.paths += 1;
    }

    pub fn value(&self) -> f64 {
        (1.0 - self.product).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acp::parse_policy;
    use crate::graph::LocationFix;

    fn u(x: u128) -> Uid {
        Uid(x)
    }

    fn graph(edges: &[(u128, u128, &str, f64)]) -> SocialMultiGraph {
        let mut g = SocialMultiGraph::new();
        for &(a, b, l, w) in edges {
            g.insert_edge(u(a), u(b), l.into(), w, SimTime::ZERO);
        }
        g
    }

    #[test]
    fn relation_test_threshold_and_direction() {
        let g = graph(&[(1, 2, "LinkedIn", 0.4)]);
        let v = GraphView::new(&g, SimTime::ZERO);
        let li = EdgeLabel::new("LinkedIn");
        assert!(v.relation_test(u(1), u(2), &li, 0.3).unwrap());
        assert!(!v.relation_test(u(1), u(2), &li, 0.5).unwrap());
        assert!(!v.relation_test(u(2), u(1), &li, 0.0).unwrap());
        assert!(matches!(
            v.relation_test(u(9), u(1), &li, 0.0),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn relation_test_denial_is_distinct_from_false() {
        let g = graph(&[(1, 2, "LinkedIn", 0.4)]);
        let policies = BTreeMap::from([(u(1), parse_policy(u(1), "<α=Skype> :: <ρ=1>").unwrap())]);
        let gate = PolicyGate::new(&g, &policies, SimTime::ZERO);
        let v = GraphView::new(&g, SimTime::ZERO).with_gate(&gate, u(3));
        assert!(matches!(
            v.relation_test(u(1), u(2), &"LinkedIn".into(), 0.1),
            Err(Error::AccessDenied { owner }) if owner == u(1)
        ));
        // the owner reads her own data
        let v = GraphView::new(&g, SimTime::ZERO).with_gate(&gate, u(1));
        assert!(v
            .relation_test(u(1), u(2), &"LinkedIn".into(), 0.1)
            .unwrap());
    }

    #[test]
    fn top_relations_sort_truncate_and_ties() {
        let g = graph(&[
            (1, 2, "a", 0.9),
            (1, 3, "a", 0.2),
            (1, 4, "a", 0.5),
            (1, 5, "b", 1.0),
        ]);
        let v = GraphView::new(&g, SimTime::ZERO);
        let a = EdgeLabel::new("a");
        assert_eq!(
            v.top_relations(u(1), &a, 2).unwrap(),
            vec![(u(2), 0.9), (u(4), 0.5)]
        );
        assert_eq!(v.top_relations(u(1), &a, 10).unwrap().len(), 3);

        // every insertion order of an equal-weight pair yields the lower UID
        for order in [[7u128, 8], [8, 7]] {
            let g = graph(&[(1, order[0], "a", 0.5), (1, order[1], "a", 0.5)]);
            let v = GraphView::new(&g, SimTime::ZERO);
            assert_eq!(v.top_relations(u(1), &a, 1).unwrap(), vec![(u(7), 0.5)]);
        }
    }

    #[test]
    fn normalized_weight_cases() {
        let g = graph(&[
            (1, 2, "a", 0.1),
            (1, 2, "b", 0.2),
            (1, 3, "a", 0.6),
            (4, 5, "a", 0.05),
        ]);
        let v = GraphView::new(&g, SimTime::ZERO);
        assert!((v.normalized_weight(u(1), u(2)).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(v.normalized_weight(u(1), u(3)).unwrap(), 1.0);
        assert_eq!(v.normalized_weight(u(4), u(5)).unwrap(), 1.0);
        assert!(matches!(
            v.normalized_weight(u(2), u(1)),
            Err(Error::UndefinedPair { .. })
        ));
    }

    #[test]
    fn social_strength_examples() {
        // no shared neighbors, no edge
        let g = graph(&[(1, 2, "a", 0.5), (3, 4, "a", 0.5)]);
        let v = GraphView::new(&g, SimTime::ZERO);
        assert_eq!(v.social_strength(u(1), u(3)).unwrap(), (0.0, 0));

        // one path with nw 0.8 and 0.6
        let g = graph(&[
            (1, 2, "a", 0.8),
            (1, 9, "a", 1.0),
            (2, 3, "a", 0.6),
            (2, 8, "a", 1.0),
        ]);
        let v = GraphView::new(&g, SimTime::ZERO);
        let (s, paths) = v.social_strength(u(1), u(3)).unwrap();
        assert!((s - 0.3).abs() < 1e-12);
        assert_eq!(paths, 1);

        // diamond: two paths with min nw 1.0
        let g = graph(&[
            (1, 2, "a", 0.5),
            (1, 3, "a", 0.5),
            (2, 4, "a", 0.5),
            (3, 4, "a", 0.5),
        ]);
        let v = GraphView::new(&g, SimTime::ZERO);
        let (s, paths) = v.social_strength(u(1), u(4)).unwrap();
        assert!((s - 0.75).abs() < 1e-12);
        assert_eq!(paths, 2);
    }

    #[test]
    fn neighborhood_star_and_filters() {
        let g = graph(&[
            (1, 2, "a", 0.5),
            (1, 3, "a", 0.5),
            (1, 4, "a", 0.5),
            (2, 5, "a", 0.5),
            (5, 6, "b", 0.5),
            (3, 7, "a", 0.01),
        ]);
        let v = GraphView::new(&g, SimTime::ZERO);
        let a = EdgeLabel::new("a");
        let r1: Vec<Uid> = v
            .neighborhood(u(1), Some(&a), 0.0, 1)
            .unwrap()
            .into_iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(r1, vec![u(2), u(3), u(4)]);
        let r2: Vec<Uid> = v
            .neighborhood(u(1), Some(&a), 0.1, 2)
            .unwrap()
            .into_iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(r2, vec![u(2), u(3), u(4), u(5)]);
        // label filter applies along the whole path
        assert_eq!(v.neighborhood(u(1), Some(&a), 0.0, 5).unwrap().len(), 5);
        assert_eq!(v.neighborhood(u(1), None, 0.0, 5).unwrap().len(), 6);
    }

    #[test]
    fn neighborhood_denial_prunes_onward_edges() {
        let g = graph(&[(1, 2, "a", 0.5), (2, 3, "a", 0.5), (3, 4, "a", 0.5)]);
        let policies = BTreeMap::from([(u(2), parse_policy(u(2), "<α=a> :: <B=99>").unwrap())]);
        let gate = PolicyGate::new(&g, &policies, SimTime::ZERO);
        let v = GraphView::new(&g, SimTime::ZERO).with_gate(&gate, u(1));
        let r = v.neighborhood(u(1), None, 0.0, 3).unwrap();
        assert_eq!(r, vec![(u(2), 1.0)]);
    }

    #[test]
    fn proximity_distances() {
        let mut g = graph(&[(1, 2, "a", 0.5), (1, 3, "a", 0.5), (1, 4, "a", 0.5)]);
        let t = SimTime::from_secs_f64(100.0);
        let fix = |lat, lon, ts| {
            Some(LocationFix {
                lat,
                lon,
                timestamp: ts,
            })
        };
        g.set_location(u(1), fix(40.0, -74.0, t));
        g.set_location(u(2), fix(40.0, -74.0, t));
        // ~120 m north
        g.set_location(u(3), fix(40.0 + 120.0 / 111_195.0, -74.0, t));
        g.set_location(u(4), fix(40.0, -74.0, SimTime::ZERO));
        let v = GraphView::new(&g, t);
        let ids = |r: Vec<(Uid, f64)>| r.into_iter().map(|x| x.0).collect::<Vec<_>>();
        let fresh = Some(SimTime::from_secs_f64(50.0));
        assert_eq!(
            ids(v.proximity(u(1), None, 0.0, 1, 0.0, fresh).unwrap()),
            vec![u(2)]
        );
        assert_eq!(
            ids(v.proximity(u(1), None, 0.0, 1, 100.0, fresh).unwrap()),
            vec![u(2)]
        );
        assert_eq!(
            ids(v.proximity(u(1), None, 0.0, 1, 150.0, fresh).unwrap()),
            vec![u(2), u(3)]
        );
        assert_eq!(
            ids(v.proximity(u(1), None, 0.0, 1, 150.0, None).unwrap()),
            vec![u(2), u(3), u(4)]
        );
        assert!(matches!(
            v.proximity(u(2), None, 0.0, 1, 10.0, None),
            Ok(r) if r.is_empty()
        ));
        assert!(matches!(
            GraphView::new(&graph(&[(1, 2, "a", 0.5)]), t).proximity(u(1), None, 0.0, 1, 1.0, None),
            Err(Error::MissingLocation(_))
        ));
    }

    #[test]
    fn reads_apply_lazy_aging() {
        let g = graph(&[(1, 2, "a", 0.5)]);
        let later = SimTime::ZERO + crate::ids::SimDuration::WEEK.times(2);
        let v = GraphView::new(&g, later);
        assert!(v.relation_test(u(1), u(2), &"a".into(), 0.4).unwrap());
        assert!(!v.relation_test(u(1), u(2), &"a".into(), 0.41).unwrap());
    }
}
