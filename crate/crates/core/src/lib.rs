//! Social knowledge services over a peer-to-peer overlay.

// Range checks use `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acp;
pub mod error;
pub mod experiment;
pub mod geo;
pub mod graph;
pub mod ids;
pub mod inference;
pub mod mapping;
pub mod metrics;
pub mod overlay;
pub mod resilience;
pub mod synth;
pub mod workload;

pub use error::{Error, Result};
pub use graph::{EdgeLabel, EdgeState, EdgeUpdateRecord, SocialMultiGraph, UpdateOp};
pub use ids::{PeerId, SimDuration, SimTime, Uid};
pub use inference::{Answer, InferenceKind, InferenceParams, InferenceResult};
pub use overlay::{SimConfig, Simulator};
