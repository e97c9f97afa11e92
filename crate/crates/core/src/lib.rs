//! Online joint clustering of text-bearing diffusion cascades with
//! per-cluster transmission network inference.
//!
//! Events arrive as a time-ordered stream. Each one is assigned to a topic
//! cluster by a particle filter whose prior favours clusters already active
//! around the event's node; every cluster carries its own exponential
//! transmission network, estimated by maximum likelihood.

pub mod eval;
pub mod event_stream;
pub mod language;
pub mod prior;
pub mod smc;
pub mod survival;
pub mod synth;

pub use event_stream::{Event, NodeId, StreamHeader, WordCounts, WordId};
pub use smc::{EngineConfig, InferenceResult, Mode};
pub use survival::{Adjacency, HazardSpec};
