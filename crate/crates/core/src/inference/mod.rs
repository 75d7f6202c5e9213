//! The five social inference operations, centrally and over peers.

mod distributed;
mod local;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeLabel;
use crate::ids::{PeerId, SimDuration, SimTime, Uid};

pub use distributed::{budget_for_level, execute_distributed};
pub use local::{AccessGate, GraphView, Permissive, PolicyGate, Via};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceKind {
    RelationTest,
    TopRelations,
    Neighborhood,
    Proximity,
    SocialStrength,
}

impl InferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InferenceKind::RelationTest => "relation_test",
            InferenceKind::TopRelations => "top_relations",
            InferenceKind::Neighborhood => "neighborhood",
            InferenceKind::Proximity => "proximity",
            InferenceKind::SocialStrength => "social_strength",
        }
    }

    pub fn is_set_valued(&self) -> bool {
        matches!(self, InferenceKind::Neighborhood | InferenceKind::Proximity)
    }
}

/// One inference request, as read from a request file (one JSON object per
/// line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    #[serde(default)]
    pub request_id: u64,
    pub kind: InferenceKind,
    pub ego: Uid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alter: Option<Uid>,
    /// Edge label to follow; `None` accepts every label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<EdgeLabel>,
    #[serde(default)]
    pub min_weight: f64,
    /// Result size for `top_relations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Social hops for `neighborhood` and `proximity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    /// Oldest acceptable location fix, in simulated seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    /// Per-hop timeout in simulated seconds; absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
    /// Requesting user, when different from `ego`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub originator: Option<Uid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application: Option<String>,
}

impl InferenceParams {
    fn base(kind: InferenceKind, ego: Uid) -> Self {
        InferenceParams {
            request_id: 0,
            kind,
            ego,
            alter: None,
            label: None,
            min_weight: 0.0,
            n: None,
            radius: None,
            distance_m: None,
            timestamp: None,
            timeout_s: None,
            originator: None,
            application: None,
        }
    }

    pub fn relation_test(ego: Uid, alter: Uid, label: EdgeLabel, min_weight: f64) -> Self {
        InferenceParams {
            alter: Some(alter),
            label: Some(label),
            min_weight,
            ..Self::base(InferenceKind::RelationTest, ego)
        }
    }

    pub fn top_relations(ego: Uid, label: EdgeLabel, n: usize) -> Self {
        InferenceParams {
            label: Some(label),
            n: Some(n),
            ..Self::base(InferenceKind::TopRelations, ego)
        }
    }

    pub fn neighborhood(ego: Uid, label: Option<EdgeLabel>, min_weight: f64, radius: u32) -> Self {
        InferenceParams {
            label,
            min_weight,
            radius: Some(radius),
            ..Self::base(InferenceKind::Neighborhood, ego)
        }
    }

    pub fn proximity(
        ego: Uid,
        label: Option<EdgeLabel>,
        min_weight: f64,
        radius: u32,
        distance_m: f64,
    ) -> Self {
        InferenceParams {
            label,
            min_weight,
            radius: Some(radius),
            distance_m: Some(distance_m),
            ..Self::base(InferenceKind::Proximity, ego)
        }
    }

    pub fn social_strength(ego: Uid, alter: Uid) -> Self {
        InferenceParams {
            alter: Some(alter),
            ..Self::base(InferenceKind::SocialStrength, ego)
        }
    }

    pub fn with_timeout(mut self, secs: Option<f64>) -> Self {
        self.timeout_s = secs;
        self
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.request_id = id;
        self
    }

    pub fn timeout(&self) -> Option<SimDuration> {
        self.timeout_s.map(SimDuration::from_secs_f64)
    }

    pub fn fresh_since(&self) -> Option<SimTime> {
        self.timestamp.map(SimTime::from_secs_f64)
    }

    pub fn originator(&self) -> Uid {
        self.originator.unwrap_or(self.ego)
    }

    /// Number of social hops the request spans; drives the timeout budget.
    pub fn hops(&self) -> u32 {
        match self.kind {
            InferenceKind::Neighborhood | InferenceKind::Proximity => self.radius.unwrap_or(1),
            InferenceKind::SocialStrength => 2,
            InferenceKind::RelationTest | InferenceKind::TopRelations => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::InvalidParams(format!(
                "request {}: {m}",
                self.request_id
            )))
        };
        if !(0.0..=1.0).contains(&self.min_weight) {
            return bad(&format!("min_weight {} outside [0, 1]", self.min_weight));
        }
        if self.timeout_s.is_some_and(|t| !(t >= 0.0)) {
            return bad("timeout must be non-negative");
        }
        match self.kind {
            InferenceKind::RelationTest | InferenceKind::SocialStrength if self.alter.is_none() => {
                bad("alter is required")
            }
            InferenceKind::SocialStrength if self.alter == Some(self.ego) => {
                bad("ego and alter must differ")
            }
            InferenceKind::TopRelations if !self.n.is_some_and(|n| n >= 1) => {
                bad("n >= 1 is required")
            }
            InferenceKind::Neighborhood | InferenceKind::Proximity
                if !self.radius.is_some_and(|r| r >= 1) =>
            {
                bad("radius >= 1 is required")
            }
            InferenceKind::Proximity if !self.distance_m.is_some_and(|d| d >= 0.0) => {
                bad("distance_m >= 0 is required")
            }
            _ => Ok(()),
        }
    }
}

/// The value an inference produces.
#[derive(Clone, Debug, PartialEq)]
pub enum Answer {
    Bool(bool),
    /// Users with a score: weight for `top_relations`, hop distance for
    /// `neighborhood` and `proximity`. Ordered by the operation's rule.
    Users(Vec<(Uid, f64)>),
    Real(f64),
}

impl Answer {
    pub fn users(&self) -> &[(Uid, f64)] {
        match self {
            Answer::Users(u) => u,
            _ => &[],
        }
    }

    pub fn real(&self) -> Option<f64> {
        match self {
            Answer::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Answer::Users(u) => u.len(),
            _ => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub answer: Answer,
    /// Fraction of the full answer returned.
    pub completion: f64,
    /// Peers that handled any part of the request, with multiplicity.
    pub serving_peers: BTreeMap<PeerId, u32>,
    /// The trusted peer that first served the request.
    pub source_peer: Option<PeerId>,
    pub messages_sent: u64,
    pub elapsed: SimDuration,
    /// True when some part of the answer was cut off by a timeout or an
    /// unavailable peer.
    pub partial: bool,
}

impl InferenceResult {
    pub fn local(answer: Answer) -> Self {
        InferenceResult {
            answer,
            completion: 1.0,
            serving_peers: BTreeMap::new(),
            source_peer: None,
            messages_sent: 0,
            elapsed: SimDuration::ZERO,
            partial: false,
        }
    }

    /// Distinct serving peers other than the source peer.
    pub fn secondary_peers(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.serving_peers
            .keys()
            .copied()
            .filter(move |p| Some(*p) != self.source_peer)
    }
}

/// Fraction of `expected` users present in `got`; 1 when nothing was
/// expected.
pub fn set_completion(got: &[(Uid, f64)], expected: &[(Uid, f64)]) -> f64 {
    if expected.is_empty() {
        return 1.0;
    }
    let want: std::collections::BTreeSet<Uid> = expected.iter().map(|(u, _)| *u).collect();
    let hit = got.iter().filter(|(u, _)| want.contains(u)).count();
    hit as f64 / want.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_json_round_trip_and_validation() {
        let p = InferenceParams::neighborhood(Uid(1), Some("Facebook".into()), 0.05, 3)
            .with_timeout(Some(15.0))
            .with_id(7);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"kind\":\"neighborhood\""));
        let back: InferenceParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(p.validate().is_ok());

        let line = r#"{"kind":"social_strength","ego":"1","alter":"0x2"}"#;
        let q: InferenceParams = serde_json::from_str(line).unwrap();
        assert_eq!(q.alter, Some(Uid(2)));
        assert_eq!(q.timeout(), None);
        assert!(q.validate().is_ok());

        let mut bad = p.clone();
        bad.min_weight = 1.5;
        assert!(bad.validate().is_err());
        bad = p.clone();
        bad.radius = Some(0);
        assert!(bad.validate().is_err());
        let same = InferenceParams::social_strength(Uid(1), Uid(1));
        assert!(same.validate().is_err());
    }

    #[test]
    fn completion_of_sets() {
        let e = vec![(Uid(1), 1.0), (Uid(2), 1.0)];
        assert_eq!(set_completion(&e[..1], &e), 0.5);
        assert_eq!(set_completion(&[], &[]), 1.0);
    }
}
