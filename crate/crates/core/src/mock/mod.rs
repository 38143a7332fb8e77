//! Deterministic stand-ins for every backend port.
//!
//! * [`ScriptedReplies`]: canned text/VLM answers driven by a small fixture
//!   grammar, consumed per run.
//! * [`ToyDenoiser`]: a seeded linear "diffusion" backend whose
//!   cross-attention is differentiable in closed form, so guidance math can
//!   be exercised and finite-difference checked hermetically.
//! * [`MockScorer`]: rates images by how close a token's attention centroid
//!   lands to a configured target point.

mod scorer;
mod scripted;
mod toy;

pub use scorer::MockScorer;
pub use scripted::{ExhaustPolicy, FixtureError, ScriptedReplies};
pub use toy::{ToyConfig, ToyDenoiser};
