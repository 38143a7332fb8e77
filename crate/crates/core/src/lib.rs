//! Progressive multi-object image generation, orchestrated around pluggable
//! model ports.
//!
//! The core idea: instead of asking a diffusion backend to render a whole
//! scene at once, split the prompt into objects, generate them one stage at
//! a time inside planned regions, steer each stage by nudging the latent
//! against a cross-attention energy, and splice stages together through
//! their stored trajectories. A vision-language checker inspects each stage
//! and triggers retries under escalated guidance when the render misses.
//!
//! Nothing in this crate talks to a real model. The four ports in [`ports`]
//! (text completion, denoiser, vision-language, layout scorer) are the only
//! seams; [`mock`] provides deterministic in-process implementations good
//! enough to exercise every code path, including a tiny analytic denoiser
//! with a real attention surface and exact energy gradients.
//!
//! The crate is `no_std` with `alloc`: state lives in plain vectors, errors
//! are enums, and every public operation is a pure function of its inputs
//! plus explicit seeds.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod candidates;
pub mod eval;
pub mod feedback;
pub mod geometry;
pub mod guidance;
pub mod latent;
pub mod mock;
pub mod pipeline;
pub mod planner;
pub mod ports;
pub mod rng;

pub use candidates::{generate_candidates, select_best, CandidateSet, Selection};
pub use eval::{build_questionnaire, evaluate, AspectScores, EvalOutcome, Questionnaire};
pub use feedback::{
    build_stage_questions, inspect_stage, run_stage_with_feedback, ConfigDelta, FeedbackOutcome,
    FeedbackReport, RetryPolicy, Verdict,
};
pub use geometry::{
    bbox_from_attention, overlap_candidate, rough_mask_first, rough_mask_next, BBox, BinaryMask,
    Canvas, PositionChoice,
};
pub use guidance::{
    combine_latents, guidance_step, single_object_diffusion, GuidanceConfig, StageInputs,
    StageRecord,
};
pub use latent::{AttentionMaps, BlockClass, DecodedImage, Grid, LatentState};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineRun, Ports, StageReport};
pub use planner::{Planner, PlannerTranscript};
pub use ports::{DenoiserPort, PortError, ScorerPort, TextCompletionPort, VlmPort};
