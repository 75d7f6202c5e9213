//! Recursive, timeout-budgeted execution of a request across trusted peers.
//!
//! The entry peer resolves the ego's trusted peer list and forwards the
//! request to the fastest member (the source peer). A peer serves what its
//! replicas cover and sends one secondary request per peer holding the
//! remaining users. A peer at level `k` of the recursion waits
//! `T·(n−k−1)` for its secondary replies, then answers with whatever has
//! arrived. Late replies are discarded.
//!
//! Every message latency is a hash of the message's position in the request
//! tree, so a larger timeout never changes which messages are sent or when;
//! it only lets more replies in before each deadline.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::local::{AccessGate, GraphView, StrengthAcc, Via};
use super::{set_completion, Answer, InferenceKind, InferenceParams, InferenceResult};
use crate::error::{Error, Result};
use crate::graph::EdgeLabel;
use crate::ids::{fold128, mix, PeerId, SimDuration, SimTime, Uid};
use crate::overlay::{MsgKind, Simulator};

/// Time a peer at recursion level `level` waits for secondary replies:
/// `T·(hops − level − 1)`, never negative. `None` is unbounded.
pub fn budget_for_level(
    timeout: Option<SimDuration>,
    hops: u32,
    level: u32,
) -> Option<SimDuration> {
    let t = timeout?;
    let k = hops.saturating_sub(level + 1);
    Some(t.times(k as u64))
}

#[derive(Clone, Debug)]
struct Seed {
    user: Uid,
    /// Hops still allowed from `user`.
    rem: u32,
    path: Vec<Uid>,
    /// Social strength: normalized weight of ego → user.
    first: f64,
}

#[derive(Clone, Debug, Default)]
struct Partial {
    /// Discovered users and their hop distance.
    found: BTreeMap<Uid, u32>,
    /// Discovered users passing the location filter.
    near: BTreeSet<Uid>,
    /// Social strength path weights keyed by the intermediate user (the
    /// alter itself for the direct edge).
    legs: BTreeMap<Uid, f64>,
    answer: Option<Answer>,
}

impl Partial {
    fn merge(&mut self, other: &Partial) {
        for (&u, &d) in &other.found {
            let e = self.found.entry(u).or_insert(d);
            *e = (*e).min(d);
        }
        self.near.extend(other.near.iter().copied());
        for (&j, &w) in &other.legs {
            self.legs.insert(j, w);
        }
        if other.answer.is_some() {
            self.answer = other.answer.clone();
        }
    }
}

#[derive(Debug)]
struct Task {
    key: u64,
    peer: PeerId,
    parent: Option<usize>,
    level: u32,
    is_entry: bool,
    seeds: Vec<Seed>,
    excluded: BTreeSet<PeerId>,
    attempt: u32,
    /// Seeds the peer turned out unable to serve.
    refused: Vec<Seed>,
    chain: Vec<PeerId>,
    outstanding: u32,
    children: u64,
    done: bool,
    partial: bool,
    out: Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Start(usize),
    Reply(usize),
    Fail(usize),
    Refuse(usize),
    Deadline(usize),
}

impl Ev {
    /// Deliveries at an instant are handled before deadlines at it.
    fn class(&self) -> u8 {
        match self {
            Ev::Deadline(_) => 1,
            _ => 0,
        }
    }
}

struct Exec<'a> {
    sim: &'a mut Simulator,
    req: &'a InferenceParams,
    gate: &'a dyn AccessGate,
    t0: SimTime,
    tasks: Vec<Task>,
    queue: BinaryHeap<Reverse<(SimTime, u8, u64, Ev)>>,
    seq: u64,
    serving: BTreeMap<PeerId, u32>,
    source: Option<PeerId>,
    origin: Option<(f64, f64)>,
    finished_at: Option<SimTime>,
    error: Option<Error>,
}

/// Runs `req` entering the network at `entry`.
pub fn execute_distributed(
    sim: &mut Simulator,
    req: &InferenceParams,
    entry: PeerId,
    gate: &dyn AccessGate,
) -> Result<InferenceResult> {
    req.validate()?;
    if !sim.peers.contains_key(&entry) {
        return Err(Error::UnknownPeer(entry));
    }
    if !sim.groups.contains_key(&req.ego) {
        return Err(Error::UnknownUser(req.ego));
    }
    let sent_before = sim.stats.sent;
    let t0 = sim.now;
    let root_key = mix(
        sim.config.seed,
        &[
            req.request_id,
            fold128(req.ego.0),
            fold128(req.alter.unwrap_or_default().0),
            req.kind as u64,
        ],
    );
    let mut ex = Exec {
        sim,
        req,
        gate,
        t0,
        tasks: Vec::new(),
        queue: BinaryHeap::new(),
        seq: 0,
        serving: BTreeMap::new(),
        source: None,
        origin: None,
        finished_at: None,
        error: None,
    };
    ex.tasks.push(Task {
        key: root_key,
        peer: entry,
        parent: None,
        level: 0,
        is_entry: true,
        seeds: Vec::new(),
        excluded: BTreeSet::new(),
        attempt: 0,
        refused: Vec::new(),
        chain: Vec::new(),
        outstanding: 0,
        children: 0,
        done: false,
        partial: false,
        out: Partial::default(),
    });
    let ego_seed = Seed {
        user: req.ego,
        rem: req.hops(),
        path: Vec::new(),
        first: 1.0,
    };
    if ex.sim.can_serve(entry, req.ego, t0) {
        ex.spawn_local(0, ego_seed, t0);
    } else {
        ex.dispatch(0, t0, vec![ego_seed], &BTreeSet::new(), 0);
        if ex.tasks[0].outstanding == 0 {
            return Err(Error::ServiceUnavailable(req.ego));
        }
    }
    ex.run();
    if let Some(e) = ex.error {
        return Err(e);
    }
    let root = &ex.tasks[0];
    let end = ex.finished_at.unwrap_or(t0);
    let (answer, completion) = ex.score(&root.out)?;
    let partial = root.partial || completion < 1.0;
    let messages_sent = ex.sim.stats.sent - sent_before;
    Ok(InferenceResult {
        answer,
        completion,
        serving_peers: ex.serving,
        source_peer: ex.source,
        messages_sent,
        elapsed: end.since(t0),
        partial,
    })
}

impl Exec<'_> {
    fn push(&mut self, at: SimTime, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((at, ev.class(), self.seq, ev)));
    }

    fn run(&mut self) {
        while let Some(Reverse((t, _, _, ev))) = self.queue.pop() {
            if self.error.is_some() {
                return;
            }
            match ev {
                Ev::Start(c) => self.on_start(c, t),
                Ev::Reply(c) => self.on_reply(c, t),
                Ev::Fail(c) => self.on_fail(c, t),
                Ev::Refuse(c) => {
                    let p = self.tasks[c].parent.expect("refusal has a parent");
                    let seeds = std::mem::take(&mut self.tasks[c].refused);
                    self.retry(p, c, seeds, t);
                    self.child_settled(p, t);
                }
                Ev::Deadline(c) => {
                    if !self.tasks[c].done {
                        self.tasks[c].partial = true;
                        self.finish(c, t);
                    }
                }
            }
        }
    }

    fn new_child(
        &mut self,
        p: usize,
        peer: PeerId,
        seeds: Vec<Seed>,
        excluded: BTreeSet<PeerId>,
        attempt: u32,
    ) -> usize {
        let parent = &mut self.tasks[p];
        parent.children += 1;
        parent.outstanding += 1;
        let key = mix(parent.key, &[parent.children, attempt as u64]);
        let level = if parent.is_entry { 0 } else { parent.level + 1 };
        let mut chain = parent.chain.clone();
        if !parent.is_entry {
            chain.push(parent.peer);
        }
        self.tasks.push(Task {
            key,
            peer,
            parent: Some(p),
            level,
            is_entry: false,
            seeds,
            excluded,
            attempt,
            refused: Vec::new(),
            chain,
            outstanding: 0,
            children: 0,
            done: false,
            partial: false,
            out: Partial::default(),
        });
        self.tasks.len() - 1
    }

    /// The entry peer itself holds the ego: serve there without messages.
    fn spawn_local(&mut self, p: usize, seed: Seed, at: SimTime) {
        let peer = self.tasks[p].peer;
        let c = self.new_child(p, peer, vec![seed], BTreeSet::new(), 0);
        self.push(at, Ev::Start(c));
    }

    /// Sends `seeds` from task `p` to the fastest available trusted peer of
    /// each user, one message per target peer.
    fn dispatch(
        &mut self,
        p: usize,
        at: SimTime,
        seeds: Vec<Seed>,
        excluded: &BTreeSet<PeerId>,
        attempt: u32,
    ) {
        let from = self.tasks[p].peer;
        let key = self.tasks[p].key;
        let mut groups: BTreeMap<PeerId, (Vec<Seed>, SimDuration)> = BTreeMap::new();
        for s in seeds {
            let rkey = mix(key, &[fold128(s.user.0), attempt as u64, 0x7e1]);
            let target = match self.sim.resolve_tpl_keyed(from, s.user, true, at, rkey) {
                Ok(res) => res
                    .list
                    .entries
                    .iter()
                    .map(|e| e.0)
                    .find(|q| !excluded.contains(q))
                    .map(|q| (q, res.latency)),
                Err(_) => None,
            };
            match target {
                Some((q, lat)) => {
                    let g = groups.entry(q).or_insert((Vec::new(), SimDuration::ZERO));
                    g.0.push(s);
                    g.1 = g.1.max(lat);
                }
                // Every trusted peer of the user is unreachable.
                None => self.tasks[p].partial = true,
            }
        }
        let kind = if self.tasks[p].is_entry {
            MsgKind::Forward
        } else {
            MsgKind::InferenceRequest
        };
        for (target, (seeds, lat)) in groups {
            let user = seeds.first().map(|s| s.user);
            let c = self.new_child(p, target, seeds, excluded.clone(), attempt);
            let send_at = at + lat;
            let online = self.sim.is_online(target, self.t0);
            self.sim
                .record_at(send_at, kind, Some(from), Some(target), user, online);
            let hop = self.sim.latency(from, target, mix(self.tasks[c].key, &[0]));
            if online {
                self.push(send_at + hop, Ev::Start(c));
            } else {
                // The sender notices the silence after a round trip.
                self.push(send_at + hop.times(2), Ev::Fail(c));
            }
        }
    }

    fn on_fail(&mut self, c: usize, t: SimTime) {
        let p = self.tasks[c].parent.expect("failed task has a parent");
        let seeds = std::mem::take(&mut self.tasks[c].seeds);
        self.retry(p, c, seeds, t);
        self.child_settled(p, t);
    }

    /// Resends seeds a child could not serve, avoiding that child's peer.
    fn retry(&mut self, p: usize, c: usize, seeds: Vec<Seed>, t: SimTime) {
        if seeds.is_empty() {
            return;
        }
        let from = self.tasks[p].peer;
        for s in &seeds {
            self.sim.invalidate_tpl(from, s.user);
        }
        let attempt = self.tasks[c].attempt + 1;
        if attempt > self.sim.config.max_retries {
            self.tasks[p].partial = true;
            return;
        }
        let mut excluded = self.tasks[c].excluded.clone();
        excluded.insert(self.tasks[c].peer);
        self.dispatch(p, t, seeds, &excluded, attempt);
    }

    fn child_settled(&mut self, p: usize, t: SimTime) {
        let task = &mut self.tasks[p];
        task.outstanding -= 1;
        if task.outstanding == 0 && !task.done {
            self.finish(p, t);
        }
    }

    fn on_reply(&mut self, c: usize, t: SimTime) {
        let p = self.tasks[c].parent.expect("reply has a parent");
        if !self.tasks[p].done {
            let (head, tail) = self.tasks.split_at_mut(c);
            head[p].out.merge(&tail[0].out);
            if tail[0].partial {
                head[p].partial = true;
            }
        }
        self.child_settled(p, t);
    }

    fn finish(&mut self, c: usize, t: SimTime) {
        let task = &mut self.tasks[c];
        task.done = true;
        if task.outstanding > 0 {
            task.partial = true;
        }
        let Some(p) = task.parent else {
            self.finished_at = Some(t);
            return;
        };
        let (from, to) = (self.tasks[c].peer, self.tasks[p].peer);
        if from == to {
            self.push(t, Ev::Reply(c));
            return;
        }
        let kind = if self.tasks[p].is_entry {
            MsgKind::ForwardReply
        } else {
            MsgKind::InferenceReply
        };
        let user = self.tasks[c].seeds.first().map(|s| s.user);
        self.sim
            .record_at(t, kind, Some(from), Some(to), user, true);
        let hop = self.sim.latency(from, to, mix(self.tasks[c].key, &[1]));
        self.push(t + hop, Ev::Reply(c));
    }

    fn on_start(&mut self, c: usize, t: SimTime) {
        let peer = self.tasks[c].peer;
        *self.serving.entry(peer).or_default() += 1;
        if self.tasks[c].level == 0 && self.source.is_none() {
            self.source = Some(peer);
        }
        let seeds = self.tasks[c].seeds.clone();
        let (served, refused): (Vec<Seed>, Vec<Seed>) = seeds
            .into_iter()
            .partition(|s| self.sim.can_serve(peer, s.user, self.t0));
        if !refused.is_empty() {
            // Stale list at the sender: tell it right away so it can retry
            // elsewhere.
            let p = self.tasks[c].parent.expect("started task has a parent");
            let to = self.tasks[p].peer;
            self.tasks[c].refused = refused;
            self.tasks[p].outstanding += 1;
            self.sim
                .record_at(t, MsgKind::InferenceReply, Some(peer), Some(to), None, true);
            let hop = self.sim.latency(peer, to, mix(self.tasks[c].key, &[2]));
            self.push(t + hop, Ev::Refuse(c));
        }
        let now = t;
        let remote = match self.req.kind {
            InferenceKind::Neighborhood | InferenceKind::Proximity => self.expand(c, served, now),
            InferenceKind::SocialStrength if self.tasks[c].level == 0 => {
                self.strength_source(c, served, now)
            }
            InferenceKind::SocialStrength => {
                self.strength_legs(c, served, now);
                Vec::new()
            }
            InferenceKind::RelationTest | InferenceKind::TopRelations => {
                self.direct(c, served, now);
                Vec::new()
            }
        };
        if self.error.is_some() {
            return;
        }
        let ready = t + self.sim.config.processing();
        if !remote.is_empty() {
            let excluded = BTreeSet::new();
            self.dispatch(c, ready, remote, &excluded, 0);
        }
        if self.tasks[c].outstanding == 0 {
            self.finish(c, ready);
        } else if let Some(b) =
            budget_for_level(self.req.timeout(), self.req.hops(), self.tasks[c].level)
        {
            self.push(ready + b, Ev::Deadline(c));
        }
    }

    fn view(&self, peer: PeerId, user: Uid, now: SimTime) -> Option<GraphView<'_>> {
        let replica = self.sim.replica(peer, user, self.t0)?;
        Some(GraphView::new(&replica.graph, now).with_gate(self.gate, self.req.originator()))
    }

    /// Neighborhood expansion over the users this peer holds. Returns the
    /// seeds that must continue on other peers.
    fn expand(&mut self, c: usize, served: Vec<Seed>, now: SimTime) -> Vec<Seed> {
        let peer = self.tasks[c].peer;
        let radius = self.req.hops();
        let label: Option<&EdgeLabel> = self.req.label.as_ref();
        let proximity = self.req.kind == InferenceKind::Proximity;
        let track = self.gate.uses_path();
        if proximity && self.tasks[c].level == 0 && self.origin.is_none() {
            match self
                .view(peer, self.req.ego, now)
                .map(|v| v.location_of(self.req.ego))
            {
                Some(Ok(loc)) => self.origin = Some(loc),
                Some(Err(e)) => {
                    self.error = Some(e);
                    return Vec::new();
                }
                None => {}
            }
        }
        let chain = self.tasks[c].chain.clone();
        let mut heap: BinaryHeap<(u32, Reverse<Uid>, usize)> = BinaryHeap::new();
        let mut pending: Vec<Seed> = Vec::new();
        for s in served {
            heap.push((s.rem, Reverse(s.user), pending.len()));
            pending.push(s);
        }
        let mut expanded: BTreeMap<Uid, u32> = BTreeMap::new();
        let mut remote: BTreeMap<Uid, Seed> = BTreeMap::new();
        let mut out = Partial::default();
        while let Some((rem, Reverse(u), idx)) = heap.pop() {
            if expanded.get(&u).is_some_and(|&r| r >= rem) || rem == 0 {
                continue;
            }
            expanded.insert(u, rem);
            let path = pending[idx].path.clone();
            let Some(view) = self.view(peer, u, now) else {
                continue;
            };
            let via = Via {
                originator: self.req.originator(),
                users: &path,
                peers: &chain,
            };
            let depth = radius - rem + 1;
            let next_path = if track {
                let mut p = path.clone();
                p.push(u);
                p
            } else {
                Vec::new()
            };
            for (v, _) in view.qualifying_neighbors(u, label, self.req.min_weight, &via) {
                let e = out.found.entry(v).or_insert(depth);
                *e = (*e).min(depth);
                if proximity {
                    if let Some(origin) = self.origin {
                        let near = view.filter_by_location(
                            vec![(v, 0.0)],
                            origin,
                            self.req.distance_m.unwrap_or(0.0),
                            self.req.fresh_since(),
                        );
                        if !near.is_empty() {
                            out.near.insert(v);
                        }
                    }
                }
                if rem > 1 {
                    let seed = Seed {
                        user: v,
                        rem: rem - 1,
                        path: next_path.clone(),
                        first: 0.0,
                    };
                    if self.sim.can_serve(peer, v, self.t0) {
                        heap.push((seed.rem, Reverse(v), pending.len()));
                        pending.push(seed);
                    } else if remote.get(&v).is_none_or(|s| s.rem < seed.rem) {
                        remote.insert(v, seed);
                    }
                }
            }
        }
        self.tasks[c].out.merge(&out);
        remote
            .into_values()
            .filter(|s| expanded.get(&s.user).is_none_or(|&r| r < s.rem))
            .collect()
    }

    fn strength_source(&mut self, c: usize, served: Vec<Seed>, now: SimTime) -> Vec<Seed> {
        let peer = self.tasks[c].peer;
        let alter = self.req.alter.unwrap_or_default();
        let Some(seed) = served.into_iter().next() else {
            return Vec::new();
        };
        let Some(view) = self.view(peer, seed.user, now) else {
            return Vec::new();
        };
        let nw_i = view.normalized_weights(seed.user);
        let mut legs = BTreeMap::new();
        let mut remote = Vec::new();
        for (&j, &w) in &nw_i {
            if j == alter {
                legs.insert(alter, w);
                continue;
            }
            match self.view(peer, j, now) {
                Some(vj) => {
                    if let Some(&second) = vj.normalized_weights(j).get(&alter) {
                        legs.insert(j, w.min(second));
                    }
                }
                None => remote.push(Seed {
                    user: j,
                    rem: 1,
                    path: Vec::new(),
                    first: w,
                }),
            }
        }
        self.tasks[c].out.legs.extend(legs);
        remote
    }

    fn strength_legs(&mut self, c: usize, served: Vec<Seed>, now: SimTime) {
        let peer = self.tasks[c].peer;
        let alter = self.req.alter.unwrap_or_default();
        let mut legs = BTreeMap::new();
        for s in served {
            if let Some(v) = self.view(peer, s.user, now) {
                if let Some(&second) = v.normalized_weights(s.user).get(&alter) {
                    legs.insert(s.user, s.first.min(second));
                }
            }
        }
        self.tasks[c].out.legs.extend(legs);
    }

    /// One-hop operations: answered entirely from the ego's replica.
    fn direct(&mut self, c: usize, served: Vec<Seed>, now: SimTime) {
        let peer = self.tasks[c].peer;
        let Some(seed) = served.into_iter().next() else {
            return;
        };
        let Some(view) = self.view(peer, seed.user, now) else {
            return;
        };
        let any = EdgeLabel::new("");
        let label = self.req.label.as_ref().unwrap_or(&any);
        let answer = match self.req.kind {
            InferenceKind::RelationTest => view
                .relation_test(
                    seed.user,
                    self.req.alter.unwrap_or_default(),
                    label,
                    self.req.min_weight,
                )
                .map(Answer::Bool),
            _ => view
                .top_relations(seed.user, label, self.req.n.unwrap_or(1))
                .map(Answer::Users),
        };
        match answer {
            Ok(a) => self.tasks[c].out.answer = Some(a),
            Err(e) => self.error = Some(e),
        }
    }

    /// Builds the answer from what reached the entry peer and scores it
    /// against the same request evaluated on the authoritative graph.
    fn score(&self, out: &Partial) -> Result<(Answer, f64)> {
        let oracle =
            GraphView::new(&self.sim.truth, self.t0).with_gate(self.gate, self.req.originator());
        match self.req.kind {
            InferenceKind::Neighborhood | InferenceKind::Proximity => {
                let proximity = self.req.kind == InferenceKind::Proximity;
                let mut users: Vec<(Uid, f64)> = out
                    .found
                    .iter()
                    .filter(|(u, _)| **u != self.req.ego && (!proximity || out.near.contains(u)))
                    .map(|(u, d)| (*u, *d as f64))
                    .collect();
                users.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let expected = match oracle.evaluate(self.req) {
                    Ok(a) => a.users().to_vec(),
                    Err(Error::MissingLocation(_)) if !proximity => Vec::new(),
                    Err(e) => return Err(e),
                };
                let completion = set_completion(&users, &expected);
                Ok((Answer::Users(users), completion))
            }
            InferenceKind::SocialStrength => {
                let mut acc = StrengthAcc::default();
                for &w in out.legs.values() {
                    acc.fold(w);
                }
                let alter = self.req.alter.unwrap_or_default();
                let (_, oracle_paths) = oracle.social_strength(self.req.ego, alter)?;
                let completion = if oracle_paths == 0 {
                    1.0
                } else {
                    (acc.paths as f64 / oracle_paths as f64).min(1.0)
                };
                Ok((Answer::Real(acc.value()), completion))
            }
            InferenceKind::RelationTest | InferenceKind::TopRelations => match &out.answer {
                Some(a) => Ok((a.clone(), 1.0)),
                None => Ok((
                    if self.req.kind == InferenceKind::RelationTest {
                        Answer::Bool(false)
                    } else {
                        Answer::Users(Vec::new())
                    },
                    0.0,
                )),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_shrink_per_level() {
        let t = Some(SimDuration::from_secs_f64(15.0));
        assert_eq!(
            budget_for_level(t, 3, 0),
            Some(SimDuration::from_secs_f64(30.0))
        );
        assert_eq!(
            budget_for_level(t, 3, 1),
            Some(SimDuration::from_secs_f64(15.0))
        );
        assert_eq!(budget_for_level(t, 3, 2), Some(SimDuration::ZERO));
        assert_eq!(budget_for_level(None, 3, 0), None);
    }
}
