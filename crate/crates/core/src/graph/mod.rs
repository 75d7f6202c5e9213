//! The social multigraph: directed, labeled, weighted edges between users,
//! mutated only through sequence-numbered update records.
//!
//! Edge weights live in `[0, 1]`. Idle edges decay multiplicatively by the
//! ego's aging decrement once per aging period; decay is applied lazily
//! by readers ([`SocialMultiGraph::effective_weight`]) and can be
//! materialized with [`SocialMultiGraph::age_edges`].

mod io;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ids::{SimDuration, SimTime, Uid};

pub use io::{
    parse_edge_list, parse_pair_list, read_update_log, write_edge_list, write_update_log,
};

/// Smallest weight an aged edge can reach; the connection never disappears.
pub const MIN_AGED_WEIGHT: f64 = f64::MIN_POSITIVE;

pub const DEFAULT_AGING_DECREMENT: f64 = 0.10;

/// An interaction domain such as `Facebook` or `collocation`. Opaque.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeLabel(Arc<str>);

impl EdgeLabel {
    pub fn new(name: impl AsRef<str>) -> Self {
        EdgeLabel(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl From<&str> for EdgeLabel {
    fn from(s: &str) -> Self {
        EdgeLabel::new(s)
    }
}

impl Serialize for EdgeLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EdgeLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(EdgeLabel::new(String::deserialize(d)?))
    }
}

/// Mutable per-edge state.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeState {
    pub weight: f64,
    pub last_interaction: SimTime,
    /// Idle periods already folded into `weight` since `last_interaction`.
    aged_periods: u64,
}

impl EdgeState {
    pub fn new(weight: f64, last_interaction: SimTime) -> Self {
        EdgeState {
            weight: clamp_weight(weight),
            last_interaction,
            aged_periods: 0,
        }
    }
}

/// A materialized edge, as returned by queries.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialEdge {
    pub ego: Uid,
    pub alter: Uid,
    pub label: EdgeLabel,
    pub weight: f64,
    pub last_interaction: SimTime,
}

/// A geographic position with the instant it was reported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationFix {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexAttributes {
    pub uid: Uid,
    /// Latest known location; carries its own timestamp.
    pub location: Option<LocationFix>,
    pub aging_decrement: f64,
    pub aging_period: SimDuration,
}

impl VertexAttributes {
    pub fn new(uid: Uid) -> Self {
        VertexAttributes {
            uid,
            location: None,
            aging_decrement: DEFAULT_AGING_DECREMENT,
            aging_period: SimDuration::WEEK,
        }
    }

    /// Number of whole idle periods between `since` and `now`.
    fn idle_periods(&self, since: SimTime, now: SimTime) -> u64 {
        if self.aging_period.0 == 0 {
            return 0;
        }
        now.since(since).0 / self.aging_period.0
    }

    fn decay(&self, weight: f64, periods: u64) -> f64 {
        if periods == 0 || weight <= 0.0 {
            return weight;
        }
        let factor = (1.0 - self.aging_decrement).clamp(0.0, 1.0);
        let exp = periods.min(i32::MAX as u64) as i32;
        (weight * factor.powi(exp)).max(MIN_AGED_WEIGHT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOp {
    Create,
    Remove,
    /// Additive change; the emulated sensor sends `+0.01`.
    AdjustWeight,
    /// Absolute weight, for replaying traces.
    SetWeight,
}

/// One record of a user's append-only social data file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeUpdateRecord {
    pub seq: u64,
    pub ego: Uid,
    pub alter: Uid,
    pub label: EdgeLabel,
    pub op: UpdateOp,
    pub weight_delta_or_value: f64,
    #[serde(with = "secs")]
    pub issued_at: SimTime,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::ids::SimTime;

    pub fn serialize<S: Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(t.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimTime, D::Error> {
        Ok(SimTime::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    /// A `remove` named an edge that does not exist; nothing changed.
    MissingEdge,
}

pub fn clamp_weight(w: f64) -> f64 {
    if w.is_nan() {
        0.0
    } else {
        w.clamp(0.0, 1.0)
    }
}

type LabelMap = BTreeMap<EdgeLabel, EdgeState>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SocialMultiGraph {
    vertices: BTreeMap<Uid, VertexAttributes>,
    out: BTreeMap<Uid, BTreeMap<Uid, LabelMap>>,
    incoming: BTreeMap<Uid, BTreeSet<Uid>>,
    applied_seq: BTreeMap<Uid, u64>,
    edge_count: usize,
}

impl SocialMultiGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, uid: Uid) -> bool {
        self.vertices.contains_key(&uid)
    }

    pub fn uids(&self) -> impl Iterator<Item = Uid> + '_ {
        self.vertices.keys().copied()
    }

    pub fn vertex(&self, uid: Uid) -> Option<&VertexAttributes> {
        self.vertices.get(&uid)
    }

    /// Returns the vertex, creating it with default attributes if absent.
    pub fn ensure_vertex(&mut self, uid: Uid) -> &mut VertexAttributes {
        self.vertices
            .entry(uid)
            .or_insert_with(|| VertexAttributes::new(uid))
    }

    pub fn set_location(&mut self, uid: Uid, fix: Option<LocationFix>) {
        self.ensure_vertex(uid).location = fix;
    }

    /// Sets a per-user aging rule, as an aggregator may.
    pub fn set_aging(&mut self, uid: Uid, decrement: f64, period: SimDuration) {
        let v = self.ensure_vertex(uid);
        v.aging_decrement = decrement.clamp(0.0, 1.0);
        v.aging_period = period;
    }

    /// Highest sequence number applied for `ego` (0 when none).
    pub fn last_seq(&self, ego: Uid) -> u64 {
        self.applied_seq.get(&ego).copied().unwrap_or(0)
    }

    /// Inserts or overwrites an edge directly, bypassing the update log.
    /// Used by loaders and generators.
    pub fn insert_edge(
        &mut self,
        ego: Uid,
        alter: Uid,
        label: EdgeLabel,
        weight: f64,
        last_interaction: SimTime,
    ) {
        self.ensure_vertex(ego);
        self.ensure_vertex(alter);
        let labels = self.out.entry(ego).or_default().entry(alter).or_default();
        if labels
            .insert(label, EdgeState::new(weight, last_interaction))
            .is_none()
        {
            self.edge_count += 1;
        }
        self.incoming.entry(alter).or_default().insert(ego);
    }

    pub fn remove_edge(&mut self, ego: Uid, alter: Uid, label: &EdgeLabel) -> bool {
        let Some(alters) = self.out.get_mut(&ego) else {
            return false;
        };
        let Some(labels) = alters.get_mut(&alter) else {
            return false;
        };
        if labels.remove(label).is_none() {
            return false;
        }
        self.edge_count -= 1;
        if labels.is_empty() {
            alters.remove(&alter);
            if let Some(inc) = self.incoming.get_mut(&alter) {
                inc.remove(&ego);
            }
        }
        true
    }

    pub fn edge(&self, ego: Uid, alter: Uid, label: &EdgeLabel) -> Option<&EdgeState> {
        self.out.get(&ego)?.get(&alter)?.get(label)
    }

    /// Direct out-neighbors with their per-label edge state.
    pub fn out_neighbors(&self, uid: Uid) -> impl Iterator<Item = (Uid, &LabelMap)> + '_ {
        self.out
            .get(&uid)
            .into_iter()
            .flat_map(|m| m.iter().map(|(a, l)| (*a, l)))
    }

    pub fn out_degree(&self, uid: Uid) -> usize {
        self.out.get(&uid).map_or(0, |m| m.len())
    }

    pub fn is_neighbor(&self, ego: Uid, alter: Uid) -> bool {
        self.out.get(&ego).is_some_and(|m| m.contains_key(&alter))
    }

    /// Users with at least one edge pointing at `uid`.
    pub fn in_neighbors(&self, uid: Uid) -> impl Iterator<Item = Uid> + '_ {
        self.incoming.get(&uid).into_iter().flatten().copied()
    }

    /// Labels on edges from `ego` to `alter`.
    pub fn labels_between(&self, ego: Uid, alter: Uid) -> Vec<EdgeLabel> {
        self.out
            .get(&ego)
            .and_then(|m| m.get(&alter))
            .map(|l| l.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// One weight per label between the pair, aged to `now`. Never merged.
    pub fn weights(&self, ego: Uid, alter: Uid, now: SimTime) -> Vec<(EdgeLabel, f64)> {
        self.out
            .get(&ego)
            .and_then(|m| m.get(&alter))
            .map(|labels| {
                labels
                    .iter()
                    .map(|(l, s)| (l.clone(), self.effective_weight(ego, s, now)))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// All edges, ordered by (ego, alter, label).
    pub fn edges(&self) -> impl Iterator<Item = SocialEdge> + '_ {
        self.out.iter().flat_map(|(ego, alters)| {
            alters.iter().flat_map(move |(alter, labels)| {
                labels.iter().map(move |(label, s)| SocialEdge {
                    ego: *ego,
                    alter: *alter,
                    label: label.clone(),
                    weight: s.weight,
                    last_interaction: s.last_interaction,
                })
            })
        })
    }

    /// Distinct labels present in the graph.
    pub fn labels(&self) -> BTreeSet<EdgeLabel> {
        self.out
            .values()
            .flat_map(|m| m.values().flat_map(|l| l.keys().cloned()))
            .collect()
    }

    /// Weight of an edge owned by `ego` with pending decay applied, without
    /// mutating anything.
    pub fn effective_weight(&self, ego: Uid, state: &EdgeState, now: SimTime) -> f64 {
        match self.vertices.get(&ego) {
            Some(v) => {
                let total = v.idle_periods(state.last_interaction, now);
                v.decay(state.weight, total.saturating_sub(state.aged_periods))
            }
            None => state.weight,
        }
    }

    /// Applies one update record. Records for an ego must be replayed
    /// gap-free, in sequence order.
    pub fn apply_update(&mut self, rec: &EdgeUpdateRecord) -> Result<ApplyOutcome> {
        let expected = self.last_seq(rec.ego) + 1;
        if rec.seq != expected {
            return Err(Error::ReplayGap {
                ego: rec.ego,
                expected,
                got: rec.seq,
            });
        }
        self.applied_seq.insert(rec.ego, rec.seq);
        self.ensure_vertex(rec.ego);
        self.ensure_vertex(rec.alter);
        let outcome = match rec.op {
            UpdateOp::Create | UpdateOp::SetWeight => {
                self.insert_edge(
                    rec.ego,
                    rec.alter,
                    rec.label.clone(),
                    rec.weight_delta_or_value,
                    rec.issued_at,
                );
                ApplyOutcome::Applied
            }
            UpdateOp::Remove => {
                if self.remove_edge(rec.ego, rec.alter, &rec.label) {
                    ApplyOutcome::Applied
                } else {
                    ApplyOutcome::MissingEdge
                }
            }
            UpdateOp::AdjustWeight => {
                // Fold pending decay up to the interaction, then add the delta.
                let base = match self.edge(rec.ego, rec.alter, &rec.label) {
                    Some(s) => self.effective_weight(rec.ego, s, rec.issued_at),
                    None => 0.0,
                };
                self.insert_edge(
                    rec.ego,
                    rec.alter,
                    rec.label.clone(),
                    base + rec.weight_delta_or_value,
                    rec.issued_at,
                );
                ApplyOutcome::Applied
            }
        };
        Ok(outcome)
    }

    /// Materializes decay for every edge up to `now`. Idempotent for a
    /// fixed `now`.
    pub fn age_edges(&mut self, now: SimTime) {
        let vertices = &self.vertices;
        for (ego, alters) in self.out.iter_mut() {
            let Some(v) = vertices.get(ego) else { continue };
            for labels in alters.values_mut() {
                for s in labels.values_mut() {
                    let total = v.idle_periods(s.last_interaction, now);
                    if total > s.aged_periods {
                        s.weight = v.decay(s.weight, total - s.aged_periods);
                        s.aged_periods = total;
                    }
                }
            }
        }
    }

    /// The subgraph a peer holds for `users`: their vertices, every edge
    /// incident to them, and the boundary vertices those edges reach.
    pub fn snapshot_subgraph(&self, users: &BTreeSet<Uid>) -> Result<SocialMultiGraph> {
        let mut sub = SocialMultiGraph::new();
        for &u in users {
            let attrs = self.vertices.get(&u).ok_or(Error::UnknownUser(u))?;
            sub.vertices.insert(u, attrs.clone());
            if let Some(seq) = self.applied_seq.get(&u) {
                sub.applied_seq.insert(u, *seq);
            }
        }
        for &u in users {
            if let Some(alters) = self.out.get(&u) {
                for (alter, labels) in alters {
                    sub.copy_pair(self, u, *alter, labels);
                }
            }
            for ego in self.in_neighbors(u) {
                if users.contains(&ego) {
                    continue;
                }
                if let Some(labels) = self.out.get(&ego).and_then(|m| m.get(&u)) {
                    sub.copy_pair(self, ego, u, labels);
                }
            }
        }
        Ok(sub)
    }

    fn copy_pair(&mut self, from: &SocialMultiGraph, ego: Uid, alter: Uid, labels: &LabelMap) {
        for uid in [ego, alter] {
            self.vertices
                .entry(uid)
                .or_insert_with(|| from.vertices[&uid].clone());
        }
        let slot = self.out.entry(ego).or_default().entry(alter).or_default();
        for (l, s) in labels {
            if slot.insert(l.clone(), s.clone()).is_none() {
                self.edge_count += 1;
            }
        }
        self.incoming.entry(alter).or_default().insert(ego);
    }

    /// Undirected, unweighted copy with a single label: every pair joined in
    /// either direction becomes a reciprocal pair of weight-1 edges.
    pub fn symmetrized(&self, label: &EdgeLabel) -> SocialMultiGraph {
        let mut g = SocialMultiGraph::new();
        for u in self.uids() {
            g.ensure_vertex(u);
        }
        for (ego, alters) in &self.out {
            for alter in alters.keys() {
                if ego == alter {
                    continue;
                }
                g.insert_edge(*ego, *alter, label.clone(), 1.0, SimTime::ZERO);
                g.insert_edge(*alter, *ego, label.clone(), 1.0, SimTime::ZERO);
            }
        }
        g
    }

    /// Weakly connected components, largest first (ties by smallest uid).
    pub fn components(&self) -> Vec<BTreeSet<Uid>> {
        let mut seen = BTreeSet::new();
        let mut comps = Vec::new();
        for start in self.uids() {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = BTreeSet::from([start]);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                let nbrs = self
                    .out_neighbors(u)
                    .map(|(v, _)| v)
                    .chain(self.in_neighbors(u));
                for v in nbrs {
                    if seen.insert(v) {
                        comp.insert(v);
                        queue.push_back(v);
                    }
                }
            }
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a.first().cmp(&b.first())));
        comps
    }

    /// Induced subgraph on the largest weakly connected component.
    pub fn largest_component(&self) -> SocialMultiGraph {
        let Some(lcc) = self.components().into_iter().next() else {
            return SocialMultiGraph::new();
        };
        let mut g = SocialMultiGraph::new();
        for &u in &lcc {
            g.vertices.insert(u, self.vertices[&u].clone());
        }
        for &u in &lcc {
            for (alter, labels) in self.out_neighbors(u) {
                if lcc.contains(&alter) {
                    g.copy_pair(self, u, alter, labels);
                }
            }
        }
        g
    }
}
