//! Discrete-event model of the peer network: DHT storage, trusted peer
//! groups, trusted peer list discovery and caching, update logs with
//! polling, message accounting, latency and churn.
//!
//! Cryptography is modeled structurally: a peer can serve a user only while
//! it is a member of the user's group and holds the current key epoch.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::acp::AccessPolicy;
use crate::error::{Error, Result};
use crate::graph::{ApplyOutcome, EdgeUpdateRecord, SocialMultiGraph};
use crate::ids::{fold128, mix, unit, PeerId, SimDuration, SimTime, Uid};

pub use config::{LatencyModel, SimConfig};

/// Prefix of every trusted peer group handle.
pub const GROUP_HANDLE_PREFIX: &str = "Trusted_Peer_Group";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    DhtRoute,
    TplResponse,
    Invite,
    Accept,
    Decline,
    Keys,
    Subscribe,
    KeyUnicast,
    RemovalMulticast,
    RemovalAlert,
    PollRequest,
    PollReply,
    Forward,
    ForwardReply,
    InferenceRequest,
    InferenceReply,
}

/// A user's data as held by one trusted peer.
#[derive(Clone, Debug, PartialEq)]
pub struct UserReplica {
    /// The user's vertex, incident edges and boundary vertices.
    pub graph: SocialMultiGraph,
    pub epoch: u64,
    /// Highest log sequence number applied.
    pub high_water: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustedPeerList {
    pub owner: Uid,
    /// Members that answered, fastest first.
    pub entries: Vec<(PeerId, SimDuration)>,
    pub fetched_at: SimTime,
}

impl TrustedPeerList {
    pub fn fastest(&self) -> Option<PeerId> {
        self.entries.first().map(|e| e.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PeerNode {
    pub peer_id: PeerId,
    pub owner: Option<Uid>,
    pub address: u64,
    pub trusted_users: BTreeSet<Uid>,
    pub replicas: BTreeMap<Uid, UserReplica>,
    pub tpl_cache: BTreeMap<Uid, TrustedPeerList>,
    pub policies: BTreeMap<Uid, AccessPolicy>,
    /// Whether the peer accepts trust invitations.
    pub accepts_invites: bool,
}

impl PeerNode {
    fn new(peer_id: PeerId, address: u64) -> Self {
        PeerNode {
            peer_id,
            owner: None,
            address,
            trusted_users: BTreeSet::new(),
            replicas: BTreeMap::new(),
            tpl_cache: BTreeMap::new(),
            policies: BTreeMap::new(),
            accepts_invites: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustedPeerGroup {
    pub owner: Uid,
    pub handle: String,
    pub members: BTreeSet<PeerId>,
    pub key_epoch: u64,
    /// Bumped whenever the stored data is re-encrypted.
    pub store_version: u64,
}

/// DHT value for a user: contributed peer endpoints under a signature.
#[derive(Clone, Debug, PartialEq)]
pub struct DhtRecord {
    pub endpoints: Vec<(PeerId, u64)>,
    pub integrity_tag: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time_s: f64,
    pub event_kind: MsgKind,
    pub delivered: bool,
    pub src_peer: Option<PeerId>,
    pub dst_peer: Option<PeerId>,
    pub user: Option<Uid>,
    pub bytes_estimate: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandshakeOutcome {
    Added,
    AlreadyMember,
    Offline,
    Declined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemovalInitiator {
    Owner,
    Peer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TplResolution {
    pub list: TrustedPeerList,
    pub cache_hit: bool,
    pub messages: u64,
    /// Time until the first member answered (or the lookup gave up).
    pub latency: SimDuration,
}

/// The simulated network. Owns every peer's state; single threaded.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: SimConfig,
    /// Authoritative graph: every appended update is applied here first.
    /// Used to score completion, never to serve requests.
    pub truth: SocialMultiGraph,
    pub peers: BTreeMap<PeerId, PeerNode>,
    pub groups: BTreeMap<Uid, TrustedPeerGroup>,
    dht: BTreeMap<Uid, DhtRecord>,
    logs: BTreeMap<Uid, Vec<EdgeUpdateRecord>>,
    forced_offline: BTreeSet<PeerId>,
    next_poll: BTreeSet<(SimTime, PeerId)>,
    pub now: SimTime,
    pub stats: MessageStats,
    pub by_kind: BTreeMap<MsgKind, u64>,
    trace: Option<Vec<TraceEvent>>,
    nonce: u64,
}

impl Simulator {
    pub fn new(config: SimConfig, truth: SocialMultiGraph) -> Result<Self> {
        config.validate()?;
        Ok(Simulator {
            config,
            truth,
            peers: BTreeMap::new(),
            groups: BTreeMap::new(),
            dht: BTreeMap::new(),
            logs: BTreeMap::new(),
            forced_offline: BTreeSet::new(),
            next_poll: BTreeSet::new(),
            now: SimTime::ZERO,
            stats: MessageStats::default(),
            by_kind: BTreeMap::new(),
            trace: None,
            nonce: 0,
        })
    }

    /// Builds a network from a user → peers assignment without charging
    /// messages: users registered with their peers, groups populated and
    /// replicas installed.
    pub fn from_assignment(
        config: SimConfig,
        truth: SocialMultiGraph,
        assignment: &BTreeMap<Uid, Vec<PeerId>>,
    ) -> Result<Self> {
        let mut sim = Simulator::new(config, truth)?;
        let all: BTreeSet<PeerId> = assignment.values().flatten().copied().collect();
        for p in all {
            sim.add_peer(p);
        }
        for (&u, peers) in assignment {
            if !sim.truth.contains(u) {
                return Err(Error::UnknownUser(u));
            }
            sim.store_mapping(u, peers);
            for &p in peers {
                sim.install_member(u, p)?;
            }
        }
        sim.reset_stats();
        Ok(sim)
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in self.trace() {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn reset_stats(&mut self) {
        self.stats = MessageStats::default();
        self.by_kind.clear();
        if let Some(t) = &mut self.trace {
            t.clear();
        }
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    /// Adds a peer (idempotent) and schedules its polls.
    pub fn add_peer(&mut self, id: PeerId) -> &mut PeerNode {
        if !self.peers.contains_key(&id) {
            let address = mix(self.config.seed, &[fold128(id.0), 0xadd7]);
            self.peers.insert(id, PeerNode::new(id, address));
            let phase =
                unit(mix(self.config.seed, &[fold128(id.0), 0x9011])) * self.config.poll_period_s;
            self.next_poll
                .insert((self.now + SimDuration::from_secs_f64(phase), id));
        }
        self.peers.get_mut(&id).unwrap()
    }

    fn region(&self, p: PeerId) -> u64 {
        mix(self.config.seed, &[fold128(p.0), 0x4e61]) % self.config.latency.regions()
    }

    /// Latency of the message identified by `key` from `src` to `dst`.
    pub fn latency(&self, src: PeerId, dst: PeerId, key: u64) -> SimDuration {
        let h = mix(self.config.seed, &[fold128(src.0), fold128(dst.0), key]);
        self.config
            .latency
            .sample(h, self.region(src), self.region(dst))
    }

    /// Online state of a peer during the churn tick containing `at`.
    pub fn is_online(&self, p: PeerId, at: SimTime) -> bool {
        if !self.peers.contains_key(&p) || self.forced_offline.contains(&p) {
            return false;
        }
        if self.config.churn_rate <= 0.0 {
            return true;
        }
        let tick = (at.as_secs_f64() / self.config.churn_tick_s).floor() as u64;
        unit(mix(self.config.seed, &[fold128(p.0), tick, 0xc4u64])) >= self.config.churn_rate
    }

    pub fn set_offline(&mut self, p: PeerId) {
        self.forced_offline.insert(p);
    }

    /// Brings a peer back, optionally at a new address. The DHT mappings
    /// naming it are refreshed and cached lists naming it are dropped.
    /// Members with a stale key fetch the current one.
    pub fn rejoin(&mut self, p: PeerId, new_address: Option<u64>) -> Result<()> {
        if !self.peers.contains_key(&p) {
            return Err(Error::UnknownPeer(p));
        }
        self.forced_offline.remove(&p);
        if let Some(addr) = new_address {
            self.peers.get_mut(&p).unwrap().address = addr;
            let hops = self.hops();
            let users: Vec<Uid> = self
                .dht
                .iter()
                .filter(|(_, r)| r.endpoints.iter().any(|e| e.0 == p))
                .map(|(u, _)| *u)
                .collect();
            for u in users {
                self.charge_route(p, Some(u), hops);
                let rec = self.dht.get_mut(&u).unwrap();
                for e in &mut rec.endpoints {
                    if e.0 == p {
                        e.1 = addr;
                    }
                }
                rec.integrity_tag = integrity_tag(self.config.seed, u, &rec.endpoints);
            }
            for node in self.peers.values_mut() {
                node.tpl_cache
                    .retain(|_, tpl| tpl.entries.iter().all(|e| e.0 != p));
            }
        }
        let stale: Vec<(Uid, u64)> = self.peers[&p]
            .replicas
            .iter()
            .filter_map(|(u, r)| {
                let g = self.groups.get(u)?;
                (r.epoch != g.key_epoch).then_some((*u, g.key_epoch))
            })
            .collect();
        for (u, epoch) in stale {
            let src = self.home_peer(u).unwrap_or(p);
            if self.record(MsgKind::KeyUnicast, Some(src), Some(p), Some(u), true) {
                self.peers
                    .get_mut(&p)
                    .unwrap()
                    .replicas
                    .get_mut(&u)
                    .unwrap()
                    .epoch = epoch;
            }
        }
        Ok(())
    }

    fn hops(&self) -> u32 {
        self.config.dht_lookup_hops(self.peers.len())
    }

    /// Records one message send and its delivery or drop.
    fn record(
        &mut self,
        kind: MsgKind,
        src: Option<PeerId>,
        dst: Option<PeerId>,
        user: Option<Uid>,
        delivered: bool,
    ) -> bool {
        self.record_at(self.now, kind, src, dst, user, delivered)
    }

    pub(crate) fn record_at(
        &mut self,
        at: SimTime,
        kind: MsgKind,
        src: Option<PeerId>,
        dst: Option<PeerId>,
        user: Option<Uid>,
        delivered: bool,
    ) -> bool {
        self.stats.sent += 1;
        if delivered {
            self.stats.delivered += 1;
        } else {
            self.stats.dropped += 1;
        }
        *self.by_kind.entry(kind).or_default() += 1;
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent {
                time_s: at.as_secs_f64(),
                event_kind: kind,
                delivered,
                src_peer: src,
                dst_peer: dst,
                user,
                bytes_estimate: 64,
            });
        }
        delivered
    }

    fn charge_route(&mut self, src: PeerId, user: Option<Uid>, hops: u32) {
        for _ in 0..hops {
            self.record(MsgKind::DhtRoute, Some(src), None, user, true);
        }
    }

    fn store_mapping(&mut self, uid: Uid, peers: &[PeerId]) {
        let endpoints: Vec<(PeerId, u64)> = peers
            .iter()
            .map(|p| (*p, self.peers.get(p).map_or(0, |n| n.address)))
            .collect();
        let integrity_tag = integrity_tag(self.config.seed, uid, &endpoints);
        self.dht.insert(
            uid,
            DhtRecord {
                endpoints,
                integrity_tag,
            },
        );
        self.groups.entry(uid).or_insert_with(|| TrustedPeerGroup {
            owner: uid,
            handle: format!("{GROUP_HANDLE_PREFIX}{uid}"),
            members: BTreeSet::new(),
            key_epoch: 0,
            store_version: 0,
        });
        if let Some(first) = peers.first() {
            if let Some(node) = self.peers.get_mut(first) {
                node.owner.get_or_insert(uid);
            }
        }
    }

    /// Stores `uid → contributed peers` in the DHT and creates the user's
    /// trusted peer group.
    pub fn register_user(&mut self, uid: Uid, contributed: &[PeerId]) -> Result<()> {
        if self.dht.contains_key(&uid) {
            return Err(Error::DuplicateUser(uid));
        }
        for p in contributed {
            if !self.peers.contains_key(p) {
                return Err(Error::UnknownPeer(*p));
            }
        }
        self.truth.ensure_vertex(uid);
        self.store_mapping(uid, contributed);
        if let Some(&src) = contributed.first() {
            let hops = self.hops();
            self.charge_route(src, Some(uid), hops);
        }
        Ok(())
    }

    pub fn lookup_user(&self, uid: Uid) -> Result<&DhtRecord> {
        self.dht.get(&uid).ok_or(Error::UnknownUser(uid))
    }

    /// Whether the signature on a DHT record matches its content.
    pub fn verify_record(&self, uid: Uid) -> bool {
        self.dht
            .get(&uid)
            .is_some_and(|r| r.integrity_tag == integrity_tag(self.config.seed, uid, &r.endpoints))
    }

    /// The user's first contributed peer.
    pub fn home_peer(&self, uid: Uid) -> Option<PeerId> {
        self.dht.get(&uid)?.endpoints.first().map(|e| e.0)
    }

    pub fn group(&self, uid: Uid) -> Result<&TrustedPeerGroup> {
        self.groups.get(&uid).ok_or(Error::UnknownUser(uid))
    }

    fn install_member(&mut self, uid: Uid, p: PeerId) -> Result<()> {
        let users = BTreeSet::from([uid]);
        let graph = self.truth.snapshot_subgraph(&users)?;
        let group = self.groups.get_mut(&uid).ok_or(Error::UnknownUser(uid))?;
        group.members.insert(p);
        let replica = UserReplica {
            graph,
            epoch: group.key_epoch,
            high_water: self.truth.last_seq(uid),
        };
        let node = self.peers.get_mut(&p).ok_or(Error::UnknownPeer(p))?;
        node.trusted_users.insert(uid);
        node.replicas.insert(uid, replica);
        Ok(())
    }

    pub fn set_policy(&mut self, uid: Uid, policy: AccessPolicy) -> Result<()> {
        let members = self.group(uid)?.members.clone();
        for p in members {
            self.peers
                .get_mut(&p)
                .unwrap()
                .policies
                .insert(uid, policy.clone());
        }
        Ok(())
    }

    /// Three-step invitation (invite, accept, keys) followed by a group
    /// subscription. The new member receives the user's data and key epoch.
    pub fn handshake_add_trusted(
        &mut self,
        uid: Uid,
        candidate: PeerId,
    ) -> Result<HandshakeOutcome> {
        let group = self.group(uid)?;
        if !self.peers.contains_key(&candidate) {
            return Err(Error::UnknownPeer(candidate));
        }
        if group.members.contains(&candidate) {
            return Ok(HandshakeOutcome::AlreadyMember);
        }
        let src = self
            .home_peer(uid)
            .or_else(|| group.members.first().copied())
            .unwrap_or(candidate);
        let online = self.is_online(candidate, self.now);
        if !self.record(
            MsgKind::Invite,
            Some(src),
            Some(candidate),
            Some(uid),
            online,
        ) {
            return Ok(HandshakeOutcome::Offline);
        }
        if !self.peers[&candidate].accepts_invites {
            self.record(
                MsgKind::Decline,
                Some(candidate),
                Some(src),
                Some(uid),
                true,
            );
            return Ok(HandshakeOutcome::Declined);
        }
        self.record(MsgKind::Accept, Some(candidate), Some(src), Some(uid), true);
        self.record(MsgKind::Keys, Some(src), Some(candidate), Some(uid), true);
        self.record(MsgKind::Subscribe, Some(candidate), None, Some(uid), true);
        self.install_member(uid, candidate)?;
        let policy = self
            .peers
            .get(&src)
            .and_then(|n| n.policies.get(&uid))
            .cloned();
        if let Some(policy) = policy {
            self.peers
                .get_mut(&candidate)
                .unwrap()
                .policies
                .insert(uid, policy);
        }
        Ok(HandshakeOutcome::Added)
    }

    /// Removes a member: new keys are unicast to the remaining members and
    /// the removal is multicast to the group. A peer leaving on its own
    /// first alerts the group.
    pub fn remove_trusted(
        &mut self,
        uid: Uid,
        peer: PeerId,
        initiator: RemovalInitiator,
    ) -> Result<()> {
        let group = self.group(uid)?;
        if !group.members.contains(&peer) {
            return Err(Error::InvalidParams(format!(
                "{peer} is not a trusted peer of {uid}"
            )));
        }
        let src = self.home_peer(uid).unwrap_or(peer);
        if initiator == RemovalInitiator::Peer {
            self.record(MsgKind::RemovalAlert, Some(peer), None, Some(uid), true);
        }
        let group = self.groups.get_mut(&uid).unwrap();
        group.members.remove(&peer);
        group.key_epoch += 1;
        group.store_version += 1;
        let epoch = group.key_epoch;
        let remaining: Vec<PeerId> = group.members.iter().copied().collect();
        for p in remaining {
            let online = self.is_online(p, self.now);
            if self.record(MsgKind::KeyUnicast, Some(src), Some(p), Some(uid), online) {
                if let Some(r) = self.peers.get_mut(&p).unwrap().replicas.get_mut(&uid) {
                    r.epoch = epoch;
                }
            }
        }
        self.record(MsgKind::RemovalMulticast, Some(src), None, Some(uid), true);
        let node = self.peers.get_mut(&peer).unwrap();
        node.trusted_users.remove(&uid);
        node.replicas.remove(&uid);
        node.policies.remove(&uid);
        for n in self.peers.values_mut() {
            if let Some(tpl) = n.tpl_cache.get_mut(&uid) {
                tpl.entries.retain(|e| e.0 != peer);
            }
        }
        Ok(())
    }

    /// Trust boundary: `p` may read `uid`'s data only as a current member
    /// holding the current key, while online.
    pub fn can_serve(&self, p: PeerId, uid: Uid, at: SimTime) -> bool {
        let Some(group) = self.groups.get(&uid) else {
            return false;
        };
        group.members.contains(&p)
            && self
                .peers
                .get(&p)
                .and_then(|n| n.replicas.get(&uid))
                .is_some_and(|r| r.epoch == group.key_epoch)
            && self.is_online(p, at)
    }

    /// The replica `p` holds for `uid`, if the trust boundary allows it.
    pub fn replica(&self, p: PeerId, uid: Uid, at: SimTime) -> Option<&UserReplica> {
        if self.can_serve(p, uid, at) {
            self.peers[&p].replicas.get(&uid)
        } else {
            None
        }
    }

    /// Discovers the online members of `uid`'s group by a multicast on the
    /// group handle, unless a usable cached list exists.
    pub fn resolve_tpl(
        &mut self,
        requester: PeerId,
        uid: Uid,
        use_cache: bool,
    ) -> Result<TplResolution> {
        self.nonce += 1;
        let key = mix(0x7e1, &[self.nonce]);
        self.resolve_tpl_keyed(requester, uid, use_cache, self.now, key)
    }

    pub(crate) fn resolve_tpl_keyed(
        &mut self,
        requester: PeerId,
        uid: Uid,
        use_cache: bool,
        at: SimTime,
        key: u64,
    ) -> Result<TplResolution> {
        if !self.groups.contains_key(&uid) {
            return Err(Error::UnknownUser(uid));
        }
        if !self.peers.contains_key(&requester) {
            return Err(Error::UnknownPeer(requester));
        }
        if use_cache {
            if let Some(tpl) = self.peers[&requester].tpl_cache.get(&uid) {
                let fresh = self
                    .config
                    .tpl_ttl_s
                    .is_none_or(|ttl| at.since(tpl.fetched_at).as_secs_f64() <= ttl);
                if fresh {
                    return Ok(TplResolution {
                        list: tpl.clone(),
                        cache_hit: true,
                        messages: 0,
                        latency: SimDuration::ZERO,
                    });
                }
            }
        }
        let hops = self.hops();
        let mut route = SimDuration::ZERO;
        for h in 0..hops {
            route = route + self.latency(requester, requester, mix(key, &[h as u64, 0x40]));
            self.record_at(
                at,
                MsgKind::DhtRoute,
                Some(requester),
                None,
                Some(uid),
                true,
            );
        }
        let members: Vec<PeerId> = self.groups[&uid].members.iter().copied().collect();
        let mut entries = Vec::new();
        for m in members {
            if !self.is_online(m, at) {
                continue;
            }
            let down = self.latency(requester, m, mix(key, &[fold128(m.0), 0x41]));
            let back = self.latency(m, requester, mix(key, &[fold128(m.0), 0x42]));
            self.record_at(
                at,
                MsgKind::TplResponse,
                Some(m),
                Some(requester),
                Some(uid),
                true,
            );
            entries.push((m, down + back));
        }
        entries.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        let latency = route + entries.first().map_or(SimDuration::ZERO, |e| e.1);
        let list = TrustedPeerList {
            owner: uid,
            entries,
            fetched_at: at,
        };
        let messages = hops as u64 + list.entries.len() as u64;
        if !list.is_empty() {
            self.peers
                .get_mut(&requester)
                .unwrap()
                .tpl_cache
                .insert(uid, list.clone());
        }
        Ok(TplResolution {
            list,
            cache_hit: false,
            messages,
            latency,
        })
    }

    /// Drops `peer` from `requester`'s cached list for `uid` after it
    /// failed to answer.
    pub fn invalidate_tpl(&mut self, requester: PeerId, uid: Uid) {
        if let Some(n) = self.peers.get_mut(&requester) {
            n.tpl_cache.remove(&uid);
        }
    }

    /// Appends a record to the user's log. It is validated against, and
    /// applied to, the authoritative graph; peers pick it up when they poll.
    pub fn append_record(&mut self, rec: EdgeUpdateRecord) -> Result<ApplyOutcome> {
        let outcome = self.truth.apply_update(&rec)?;
        if let Some(src) = self.home_peer(rec.ego) {
            let hops = self.hops();
            self.charge_route(src, Some(rec.ego), hops);
        }
        self.logs.entry(rec.ego).or_default().push(rec);
        Ok(outcome)
    }

    pub fn log(&self, uid: Uid) -> &[EdgeUpdateRecord] {
        self.logs.get(&uid).map_or(&[], |v| v.as_slice())
    }

    /// Fetches and applies records past each replica's high-water mark.
    /// Returns the number of records applied.
    pub fn poll(&mut self, p: PeerId) -> Result<usize> {
        if !self.is_online(p, self.now) {
            return Ok(0);
        }
        let users: Vec<Uid> = self
            .peers
            .get(&p)
            .ok_or(Error::UnknownPeer(p))?
            .replicas
            .keys()
            .copied()
            .collect();
        let mut applied = 0;
        for u in users {
            self.record(MsgKind::PollRequest, Some(p), None, Some(u), true);
            self.record(MsgKind::PollReply, None, Some(p), Some(u), true);
            let log = self.logs.get(&u).map_or(&[][..], |v| v.as_slice());
            let replica = self
                .peers
                .get_mut(&p)
                .unwrap()
                .replicas
                .get_mut(&u)
                .unwrap();
            let from = replica.high_water;
            for rec in log.iter().filter(|r| r.seq > from) {
                replica.graph.apply_update(rec)?;
                replica.high_water = rec.seq;
                applied += 1;
            }
        }
        Ok(applied)
    }

    /// Runs every scheduled poll up to `t` and moves the clock there.
    pub fn advance_to(&mut self, t: SimTime) -> Result<()> {
        let period = SimDuration::from_secs_f64(self.config.poll_period_s);
        while let Some(&(when, p)) = self.next_poll.first() {
            if when > t {
                break;
            }
            self.next_poll.pop_first();
            self.now = self.now.max(when);
            self.poll(p)?;
            self.next_poll.insert((when + period, p));
        }
        self.now = self.now.max(t);
        Ok(())
    }
}

fn integrity_tag(seed: u64, uid: Uid, endpoints: &[(PeerId, u64)]) -> u64 {
    let mut parts = vec![fold128(uid.0)];
    for (p, a) in endpoints {
        parts.push(fold128(p.0));
        parts.push(*a);
    }
    mix(seed ^ 0x51, &parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UpdateOp;

    fn sim_with_peers(n: u128) -> Simulator {
        let mut g = SocialMultiGraph::new();
        g.insert_edge(Uid(1), Uid(2), "a".into(), 0.1, SimTime::ZERO);
        let mut sim = Simulator::new(SimConfig::default(), g).unwrap();
        for p in 1..=n {
            sim.add_peer(PeerId(p));
        }
        sim
    }

    #[test]
    fn register_lookup_and_duplicate() {
        let mut sim = sim_with_peers(3);
        sim.register_user(Uid(1), &[PeerId(1)]).unwrap();
        assert_eq!(sim.lookup_user(Uid(1)).unwrap().endpoints[0].0, PeerId(1));
        assert!(sim.verify_record(Uid(1)));
        assert!(matches!(
            sim.register_user(Uid(1), &[]),
            Err(Error::DuplicateUser(_))
        ));
        assert!(matches!(
            sim.lookup_user(Uid(9)),
            Err(Error::UnknownUser(_))
        ));
        assert_eq!(
            sim.group(Uid(1)).unwrap().handle,
            format!("Trusted_Peer_Group{}", Uid(1))
        );
    }

    #[test]
    fn rejoin_with_new_address_updates_mapping() {
        let mut sim = sim_with_peers(3);
        sim.register_user(Uid(1), &[PeerId(1)]).unwrap();
        sim.set_offline(PeerId(1));
        sim.rejoin(PeerId(1), Some(42)).unwrap();
        assert_eq!(
            sim.lookup_user(Uid(1)).unwrap().endpoints[0],
            (PeerId(1), 42)
        );
        assert!(sim.verify_record(Uid(1)));
    }

    #[test]
    fn handshake_accounting() {
        let mut sim = sim_with_peers(3);
        sim.register_user(Uid(1), &[PeerId(1)]).unwrap();
        sim.reset_stats();
        assert_eq!(
            sim.handshake_add_trusted(Uid(1), PeerId(2)).unwrap(),
            HandshakeOutcome::Added
        );
        assert_eq!(sim.stats.sent, 4);
        assert_eq!(sim.group(Uid(1)).unwrap().members.len(), 1);
        assert!(sim.can_serve(PeerId(2), Uid(1), sim.now));

        sim.reset_stats();
        assert_eq!(
            sim.handshake_add_trusted(Uid(1), PeerId(2)).unwrap(),
            HandshakeOutcome::AlreadyMember
        );
        assert_eq!(sim.stats.sent, 0);

        sim.set_offline(PeerId(3));
        assert_eq!(
            sim.handshake_add_trusted(Uid(1), PeerId(3)).unwrap(),
            HandshakeOutcome::Offline
        );
        assert_eq!(sim.group(Uid(1)).unwrap().members.len(), 1);
        assert_eq!(sim.stats.dropped, 1);
        assert_eq!(sim.stats.sent, sim.stats.delivered + sim.stats.dropped);
    }

    #[test]
    fn removal_rotates_keys() {
        let mut sim = sim_with_peers(3);
        sim.register_user(Uid(1), &[PeerId(1)]).unwrap();
        for p in 1..=3 {
            sim.handshake_add_trusted(Uid(1), PeerId(p)).unwrap();
        }
        sim.reset_stats();
        sim.remove_trusted(Uid(1), PeerId(3), RemovalInitiator::Owner)
            .unwrap();
        assert_eq!(sim.stats.sent, 3);
        assert_eq!(sim.by_kind[&MsgKind::KeyUnicast], 2);
        assert_eq!(sim.by_kind[&MsgKind::RemovalMulticast], 1);
        let g = sim.group(Uid(1)).unwrap();
        assert_eq!(g.key_epoch, 1);
        assert_eq!(g.store_version, 1);
        assert!(!sim.can_serve(PeerId(3), Uid(1), sim.now));
        assert!(sim.can_serve(PeerId(1), Uid(1), sim.now));
    }

    #[test]
    fn tpl_cold_then_cached() {
        let mut sim = sim_with_peers(3);
        sim.register_user(Uid(1), &[PeerId(1)]).unwrap();
        for p in 1..=3 {
            sim.handshake_add_trusted(Uid(1), PeerId(p)).unwrap();
        }
        sim.reset_stats();
        let cold = sim.resolve_tpl(PeerId(2), Uid(1), true).unwrap();
        assert!(!cold.cache_hit);
        assert_eq!(cold.list.entries.len(), 3);
        assert!(cold.list.entries.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(cold.messages, 1 + 3);
        assert_eq!(sim.stats.sent, 4);
        let warm = sim.resolve_tpl(PeerId(2), Uid(1), true).unwrap();
        assert!(warm.cache_hit);
        assert_eq!(warm.list, cold.list);
        assert_eq!(warm.messages, 0);
        assert_eq!(sim.stats.sent, 4);
    }

    #[test]
    fn polling_applies_new_records_once() {
        let mut sim = sim_with_peers(2);
        sim.register_user(Uid(1), &[PeerId(1)]).unwrap();
        sim.handshake_add_trusted(Uid(1), PeerId(1)).unwrap();
        for seq in 1..=5 {
            sim.append_record(EdgeUpdateRecord {
                seq,
                ego: Uid(1),
                alter: Uid(2),
                label: "a".into(),
                op: UpdateOp::AdjustWeight,
                weight_delta_or_value: 0.01,
                issued_at: SimTime::ZERO,
            })
            .unwrap();
        }
        assert_eq!(sim.poll(PeerId(1)).unwrap(), 5);
        assert_eq!(sim.peers[&PeerId(1)].replicas[&Uid(1)].high_water, 5);
        let before = sim.peers[&PeerId(1)].replicas[&Uid(1)].graph.clone();
        assert_eq!(sim.poll(PeerId(1)).unwrap(), 0);
        assert_eq!(sim.peers[&PeerId(1)].replicas[&Uid(1)].graph, before);
        let w = before.edge(Uid(1), Uid(2), &"a".into()).unwrap().weight;
        assert!((w - 0.15).abs() < 1e-12);
    }
}
