//! Per-user access control policies.
//!
//! A policy is a whitelist of rules `<objects> :: <specification>` plus a
//! blacklist of users and peers. Evaluation checks the blacklist first,
//! then rules selecting edge labels, then rules selecting edge weights,
//! then the remaining (location) rules. Nothing is granted unless a rule
//! matches, except to the data owner.

mod parser;

use std::collections::{BTreeMap, BTreeSet};

use crate::geo::great_circle_m;
use crate::graph::EdgeLabel;
use crate::ids::{PeerId, Uid};

pub use parser::parse_policy;

/// Boolean combination of atoms.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr<A> {
    Atom(A),
    Not(Box<Expr<A>>),
    And(Vec<Expr<A>>),
    Or(Vec<Expr<A>>),
}

impl<A> Expr<A> {
    pub fn eval(&self, f: &mut impl FnMut(&A) -> bool) -> bool {
        match self {
            Expr::Atom(a) => f(a),
            Expr::Not(e) => !e.eval(f),
            Expr::And(es) => es.iter().all(|e| e.eval(f)),
            Expr::Or(es) => es.iter().any(|e| e.eval(f)),
        }
    }

    pub fn any_atom(&self, f: &impl Fn(&A) -> bool) -> bool {
        match self {
            Expr::Atom(a) => f(a),
            Expr::Not(e) => e.any_atom(f),
            Expr::And(es) | Expr::Or(es) => es.iter().any(|e| e.any_atom(f)),
        }
    }

    fn map_atoms(&mut self, f: &mut impl FnMut(&mut A)) {
        match self {
            Expr::Atom(a) => f(a),
            Expr::Not(e) => e.map_atoms(f),
            Expr::And(es) | Expr::Or(es) => es.iter_mut().for_each(|e| e.map_atoms(f)),
        }
    }
}

/// A reference to a user: a UID, or a symbolic name bound later.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Principal {
    Uid(Uid),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PeerRef {
    Id(PeerId),
    Name(String),
}

/// A circular area: center in degrees, radius in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoArea {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

impl GeoArea {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        great_circle_m(self.lat, self.lon, lat, lon) <= self.radius_m
    }
}

/// Data object atoms: α (label), χ (weight threshold), Δ (location).
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectAtom {
    Label(EdgeLabel),
    /// Weights at or above the threshold may be disclosed.
    MinWeight(f64),
    Location,
}

pub type DataObjectSelector = Expr<ObjectAtom>;

/// Specification atoms ρ γ y B P C M S L.
#[derive(Clone, Debug, PartialEq)]
pub enum SpecAtom {
    /// Originator within this many hops of the owner.
    Distance(u32),
    ConnectionLabel(EdgeLabel),
    ConnectionWeight(f64),
    OriginatorUser(Principal),
    OriginatorPeer(PeerRef),
    IntermediateUser(Principal),
    IntermediatePeer(PeerRef),
    Application(String),
    OriginatorLocation(GeoArea),
}

pub type AcpSpecification = Expr<SpecAtom>;

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub objects: DataObjectSelector,
    pub spec: AcpSpecification,
}

/// Blacklist entry; the letter is kept only for printing. Users and peers
/// listed here are denied as originators and as intermediates alike.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlacklistEntry {
    OriginatorUser(Principal),
    OriginatorPeer(PeerRef),
    IntermediateUser(Principal),
    IntermediatePeer(PeerRef),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccessPolicy {
    pub owner: Uid,
    pub rules: Vec<Rule>,
    pub blacklist: Vec<BlacklistEntry>,
}

/// Name bindings for symbolic principals (`B=mom`).
#[derive(Clone, Debug, Default)]
pub struct Directory {
    pub users: BTreeMap<String, Uid>,
    pub peers: BTreeMap<String, PeerId>,
}

impl Directory {
    pub fn user(mut self, name: &str, uid: Uid) -> Self {
        self.users.insert(name.to_owned(), uid);
        self
    }

    pub fn peer(mut self, name: &str, id: PeerId) -> Self {
        self.peers.insert(name.to_owned(), id);
        self
    }

    fn bind_user(&self, p: &mut Principal) {
        if let Principal::Name(n) = p {
            if let Some(u) = self.users.get(n) {
                *p = Principal::Uid(*u);
            }
        }
    }

    fn bind_peer(&self, p: &mut PeerRef) {
        if let PeerRef::Name(n) = p {
            if let Some(id) = self.peers.get(n) {
                *p = PeerRef::Id(*id);
            }
        }
    }
}

/// Who is asking, through whom, and how they relate to the owner.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RequestContext {
    pub originator_user: Uid,
    pub originator_peer: PeerId,
    pub application: String,
    pub intermediate_users: BTreeSet<Uid>,
    pub intermediate_peers: BTreeSet<PeerId>,
    /// Hops from owner to originator; `None` when unreachable.
    pub social_distance: Option<u32>,
    /// Labels over which the originator is connected to the owner.
    pub connection_labels: BTreeSet<EdgeLabel>,
    /// Strongest connecting edge weight (bottleneck for indirect contacts).
    pub connection_weight: Option<f64>,
    pub originator_location: Option<(f64, f64)>,
}

/// The concrete piece of data being read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RequestedObject {
    pub label: Option<EdgeLabel>,
    pub weight: Option<f64>,
    pub location: bool,
}

impl RequestedObject {
    pub fn edge(label: EdgeLabel, weight: f64) -> Self {
        RequestedObject {
            label: Some(label),
            weight: Some(weight),
            location: false,
        }
    }

    pub fn label(label: EdgeLabel) -> Self {
        RequestedObject {
            label: Some(label),
            ..Default::default()
        }
    }

    pub fn location() -> Self {
        RequestedObject {
            location: true,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Grant,
    Deny,
}

/// Which evaluation stage settled the verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Blacklist,
    Owner,
    LabelRules,
    WeightRules,
    OtherRules,
    Default,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub verdict: Verdict,
    pub stage: Stage,
    /// Index of the granting rule.
    pub rule: Option<usize>,
}

impl Decision {
    pub fn granted(&self) -> bool {
        self.verdict == Verdict::Grant
    }
}

fn user_is(p: &Principal, uid: Uid) -> bool {
    matches!(p, Principal::Uid(u) if *u == uid)
}

fn peer_is(p: &PeerRef, id: PeerId) -> bool {
    matches!(p, PeerRef::Id(x) if *x == id)
}

impl ObjectAtom {
    fn covers(&self, req: &RequestedObject) -> bool {
        match self {
            ObjectAtom::Label(l) => req.label.as_ref() == Some(l),
            ObjectAtom::MinWeight(x) => req.weight.is_some_and(|w| w >= *x),
            ObjectAtom::Location => req.location,
        }
    }
}

impl SpecAtom {
    fn holds(&self, ctx: &RequestContext) -> bool {
        match self {
            SpecAtom::Distance(k) => ctx.social_distance.is_some_and(|d| d <= *k),
            SpecAtom::ConnectionLabel(l) => ctx.connection_labels.contains(l),
            SpecAtom::ConnectionWeight(y) => ctx.connection_weight.is_some_and(|w| w >= *y),
            SpecAtom::OriginatorUser(p) => user_is(p, ctx.originator_user),
            SpecAtom::OriginatorPeer(p) => peer_is(p, ctx.originator_peer),
            SpecAtom::IntermediateUser(p) => ctx.intermediate_users.iter().any(|u| user_is(p, *u)),
            SpecAtom::IntermediatePeer(p) => {
                ctx.intermediate_peers.iter().any(|id| peer_is(p, *id))
            }
            SpecAtom::Application(s) => &ctx.application == s,
            SpecAtom::OriginatorLocation(area) => ctx
                .originator_location
                .is_some_and(|(lat, lon)| area.contains(lat, lon)),
        }
    }
}

impl BlacklistEntry {
    fn hits(&self, ctx: &RequestContext) -> bool {
        match self {
            BlacklistEntry::OriginatorUser(p) | BlacklistEntry::IntermediateUser(p) => {
                user_is(p, ctx.originator_user)
                    || ctx.intermediate_users.iter().any(|u| user_is(p, *u))
            }
            BlacklistEntry::OriginatorPeer(p) | BlacklistEntry::IntermediatePeer(p) => {
                peer_is(p, ctx.originator_peer)
                    || ctx.intermediate_peers.iter().any(|id| peer_is(p, *id))
            }
        }
    }
}

impl Rule {
    fn stage(&self) -> Stage {
        if self
            .objects
            .any_atom(&|a| matches!(a, ObjectAtom::Label(_)))
        {
            Stage::LabelRules
        } else if self
            .objects
            .any_atom(&|a| matches!(a, ObjectAtom::MinWeight(_)))
        {
            Stage::WeightRules
        } else {
            Stage::OtherRules
        }
    }

    pub fn matches(&self, ctx: &RequestContext, requested: &RequestedObject) -> bool {
        self.objects.eval(&mut |a| a.covers(requested)) && self.spec.eval(&mut |a| a.holds(ctx))
    }
}

impl AccessPolicy {
    /// A policy with no rules: deny everyone but the owner.
    pub fn empty(owner: Uid) -> Self {
        AccessPolicy {
            owner,
            rules: Vec::new(),
            blacklist: Vec::new(),
        }
    }

    /// Replaces symbolic names with bound identifiers. Unbound names stay
    /// symbolic and never match.
    pub fn bind(&mut self, dir: &Directory) {
        for rule in &mut self.rules {
            rule.spec.map_atoms(&mut |a| match a {
                SpecAtom::OriginatorUser(p) | SpecAtom::IntermediateUser(p) => dir.bind_user(p),
                SpecAtom::OriginatorPeer(p) | SpecAtom::IntermediatePeer(p) => dir.bind_peer(p),
                _ => {}
            });
        }
        for e in &mut self.blacklist {
            match e {
                BlacklistEntry::OriginatorUser(p) | BlacklistEntry::IntermediateUser(p) => {
                    dir.bind_user(p)
                }
                BlacklistEntry::OriginatorPeer(p) | BlacklistEntry::IntermediatePeer(p) => {
                    dir.bind_peer(p)
                }
            }
        }
    }

    pub fn is_blacklisted(&self, ctx: &RequestContext) -> bool {
        self.blacklist.iter().any(|e| e.hits(ctx))
    }

    /// Evaluates a request in the order blacklist → label rules → weight
    /// rules → remaining rules.
    pub fn evaluate(&self, ctx: &RequestContext, requested: &RequestedObject) -> Decision {
        if self.is_blacklisted(ctx) {
            return Decision {
                verdict: Verdict::Deny,
                stage: Stage::Blacklist,
                rule: None,
            };
        }
        if ctx.originator_user == self.owner {
            return Decision {
                verdict: Verdict::Grant,
                stage: Stage::Owner,
                rule: None,
            };
        }
        for stage in [Stage::LabelRules, Stage::WeightRules, Stage::OtherRules] {
            for (idx, rule) in self.rules.iter().enumerate() {
                if rule.stage() == stage && rule.matches(ctx, requested) {
                    return Decision {
                        verdict: Verdict::Grant,
                        stage,
                        rule: Some(idx),
                    };
                }
            }
        }
        Decision {
            verdict: Verdict::Deny,
            stage: Stage::Default,
            rule: None,
        }
    }
}

/// Free-function form of [`AccessPolicy::evaluate`].
pub fn evaluate(
    policy: &AccessPolicy,
    ctx: &RequestContext,
    requested: &RequestedObject,
) -> Verdict {
    policy.evaluate(ctx, requested).verdict
}
