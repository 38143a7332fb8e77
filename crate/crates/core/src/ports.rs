//! Backend ports: every model dependency sits behind one of these traits.
//!
//! The pipeline is generic over a text-completion model (planning), a
//! denoiser (latent diffusion with observable cross-attention), a
//! vision-language checker (yes/no inspection), and an image-text scorer
//! (candidate ranking). The bundled mocks implement all four; adapters for
//! real services implement the same contracts out of tree.
//!
//! Determinism contract: given identical inputs (and identical construction
//! parameters), every port method must return identical outputs within one
//! process and across processes. The mock suite is bit-deterministic;
//! adapters for sampling services must pin their own seeds to honor this.

use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::geometry::{BBox, Canvas};
use crate::latent::{AttentionMaps, BlockClass, DecodedImage, LatentState};

#[derive(Clone, Debug, PartialEq)]
pub enum PortError {
    /// A scripted reply set ran out of (matching) entries.
    Exhausted { query: String },
    /// The caller violated the port contract (bad shapes, unknown token,
    /// missing configuration).
    Contract(String),
    /// The backing service failed (transport, process death, bad payload).
    Backend(String),
}

impl fmt::Display for PortError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortError::Exhausted { query } => {
                write!(f, "scripted replies exhausted for query: {query:?}")
            }
            PortError::Contract(why) => write!(f, "port contract violation: {why}"),
            PortError::Backend(why) => write!(f, "backend failure: {why}"),
        }
    }
}

impl core::error::Error for PortError {}

/// Free-form text completion, used for all planning queries.
///
/// Ports may be stateful per run (scripted sets consume their entries), so
/// completion takes `&mut self`.
pub trait TextCompletionPort: Send {
    fn complete(&mut self, prompt: &str) -> Result<String, PortError>;
}

impl TextCompletionPort for Box<dyn TextCompletionPort> {
    fn complete(&mut self, prompt: &str) -> Result<String, PortError> {
        (**self).complete(prompt)
    }
}

/// Latent diffusion backend with observable per-block cross-attention.
///
/// Timesteps count down: a run starts at `t = T` and `step` carries a latent
/// from `t` to `t - 1`. Attention and energy gradients are functions of the
/// latent they are asked about; they must not advance any internal state, so
/// concurrent calls are safe.
pub trait DenoiserPort: Send + Sync {
    /// Latent grid dimensions (the geometry canvas for the whole run).
    fn canvas(&self) -> Canvas;

    fn channels(&self) -> u32;

    /// Fresh starting latent for `(seed, stage)`; deterministic.
    fn init_latent(&self, seed: u64, stage: u32) -> LatentState;

    /// One denoising step from timestep `t` toward `t - 1`.
    fn step(&self, latent: &LatentState, t: u32, text: &str) -> Result<LatentState, PortError>;

    /// Cross-attention maps observed for `latent` at timestep `t`.
    fn attention(
        &self,
        latent: &LatentState,
        t: u32,
        text: &str,
    ) -> Result<AttentionMaps, PortError>;

    /// Gradient, with respect to every latent value, of the attention
    /// confinement energy for `token` and `bbox` (at canvas scale) summed
    /// over the blocks of `blocks` class. Layout matches
    /// [`LatentState::values`].
    fn energy_gradient(
        &self,
        latent: &LatentState,
        t: u32,
        text: &str,
        bbox: &BBox,
        token: u32,
        blocks: BlockClass,
    ) -> Result<alloc::vec::Vec<f64>, PortError>;

    /// Render a latent to an inspectable image.
    fn decode(&self, latent: &LatentState, text: &str) -> Result<DecodedImage, PortError>;
}

/// Yes/no visual inspection of a decoded image.
pub trait VlmPort: Send {
    fn ask(&mut self, image: &DecodedImage, question: &str) -> Result<String, PortError>;
}

/// Image-text alignment score; higher is better. Must be deterministic.
pub trait ScorerPort: Send {
    fn score(&self, image: &DecodedImage, text: &str) -> Result<f64, PortError>;
}
