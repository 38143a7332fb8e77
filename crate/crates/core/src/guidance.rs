//! Attention-confinement energy, the guided sampling loop, and latent
//! combination.
//!
//! One stage of the progressive pipeline runs the denoiser from timestep `T`
//! down to 0 under three interleaved operations, each gated by a countdown
//! threshold:
//!
//! * while `t > guide_until`, the latent is nudged downhill on an energy that
//!   measures how much of one token's attention falls outside its planned
//!   region;
//! * every timestep takes one ordinary denoiser step;
//! * while `t > combine_until` (stages after the first), cells outside the
//!   region are overwritten with the previous stage's latent at the same
//!   timestep, so earlier objects are preserved verbatim.
//!
//! The stage ends by extracting a tight bounding box from the token's final
//! attention map; the next stage plans against that box rather than the
//! coarse planned region.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    bbox_from_attention, indicator_mask, scaled_span, BBox, BinaryMask, Canvas, GeometryError,
};
use crate::latent::{AttentionMaps, BlockClass, DecodedImage, Grid, LatentState};
use crate::ports::{DenoiserPort, PortError};

/// Hyperparameters of one guided stage.
///
/// All thresholds are on the countdown clock: `steps` is the starting
/// timestep `T`, and an operation gated by a threshold runs while `t` is
/// strictly above it. A threshold equal to `steps` disables its operation; 0
/// keeps it on for the whole schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Total denoising steps `T`.
    pub steps: u32,
    /// Guidance applies while `t > guide_until`.
    pub guide_until: u32,
    /// Latent combination applies while `t > combine_until`.
    pub combine_until: u32,
    /// Gradient-descent rate on the latent.
    pub lr: f64,
    /// Gradient updates per guided timestep.
    pub iterations: u32,
    /// Attention blocks whose energies are summed.
    pub blocks: Vec<BlockClass>,
    /// Quantile of the averaged attention map used to threshold the precise
    /// mask.
    pub mask_quantile: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            steps: 8,
            guide_until: 0,
            combine_until: 0,
            lr: 60.0,
            iterations: 1,
            blocks: alloc::vec![BlockClass::NearMiddle],
            mask_quantile: 0.75,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.steps == 0 {
            return Err(GuidanceError::InvalidConfig(String::from(
                "steps must be at least 1",
            )));
        }
        if self.guide_until > self.steps {
            return Err(GuidanceError::InvalidConfig(format!(
                "guide-until {} exceeds steps {}",
                self.guide_until, self.steps
            )));
        }
        if self.combine_until > self.steps {
            return Err(GuidanceError::InvalidConfig(format!(
                "combine-until {} exceeds steps {}",
                self.combine_until, self.steps
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GuidanceError::InvalidConfig(format!(
                "learning rate {} is not positive and finite",
                self.lr
            )));
        }
        if self.iterations == 0 {
            return Err(GuidanceError::InvalidConfig(String::from(
                "iterations must be at least 1",
            )));
        }
        if self.blocks.is_empty() {
            return Err(GuidanceError::InvalidConfig(String::from(
                "at least one attention block must be selected",
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_quantile) {
            return Err(GuidanceError::InvalidConfig(format!(
                "mask quantile {} outside [0, 1]",
                self.mask_quantile
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GuidanceError {
    InvalidConfig(String),
    ShapeMismatch(String),
    /// A selected attention block class is absent from the port's maps.
    MissingBlock(BlockClass),
    TokenOutOfRange {
        token: u32,
        tokens: u32,
    },
    /// A gradient update produced NaN or infinity.
    NonFinite(String),
    /// The previous stage's trajectory is too short to combine against.
    MissingTrajectory {
        needed: usize,
        have: usize,
    },
    Geometry(GeometryError),
    Port(PortError),
}

impl core::fmt::Display for GuidanceError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GuidanceError::InvalidConfig(msg) => write!(f, "invalid guidance config: {msg}"),
            GuidanceError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            GuidanceError::MissingBlock(class) => {
                write!(f, "attention maps carry no {class} block")
            }
            GuidanceError::TokenOutOfRange { token, tokens } => {
                write!(f, "token index {token} out of range for {tokens} tokens")
            }
            GuidanceError::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            GuidanceError::MissingTrajectory { needed, have } => write!(
                f,
                "previous stage trajectory has {have} entries, need {needed}"
            ),
            GuidanceError::Geometry(e) => write!(f, "{e}"),
            GuidanceError::Port(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GuidanceError {}

impl From<GeometryError> for GuidanceError {
    fn from(e: GeometryError) -> Self {
        GuidanceError::Geometry(e)
    }
}

impl From<PortError> for GuidanceError {
    fn from(e: PortError) -> Self {
        GuidanceError::Port(e)
    }
}

/// One block's contribution to the confinement energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockEnergy {
    pub class: BlockClass,
    /// Attention mass inside the (rescaled) target box.
    pub inside: f64,
    /// Total attention mass of the token at this block.
    pub total: f64,
    /// `(1 - inside/total)^2`, or 0 for a massless map.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEnergy {
    /// Sum of the selected blocks' energies.
    pub value: f64,
    pub blocks: Vec<BlockEnergy>,
}

/// Confinement energy of token `token` against `bbox`, summed over the
/// selected block classes at their native resolutions.
///
/// The box is given in canvas coordinates and rescaled to each block by the
/// cell-center rule, so a block cell counts as inside exactly when its center
/// falls within the box.
pub fn attention_energy(
    maps: &AttentionMaps,
    classes: &[BlockClass],
    bbox: &BBox,
    canvas: Canvas,
    token: u32,
) -> Result<AttentionEnergy, GuidanceError> {
    if classes.is_empty() {
        return Err(GuidanceError::InvalidConfig(String::from(
            "no attention blocks selected",
        )));
    }
    let mut blocks = Vec::with_capacity(classes.len());
    let mut value = 0.0;
    for &class in classes {
        let mut matched = false;
        for block in maps.select(class) {
            matched = true;
            if token >= block.tokens() {
                return Err(GuidanceError::TokenOutOfRange {
                    token,
                    tokens: block.tokens(),
                });
            }
            let res = Canvas::new(block.width(), block.height());
            let span = scaled_span(bbox, canvas, res);
            let mut inside = 0.0;
            let mut total = 0.0;
            for v in 0..block.height() {
                for u in 0..block.width() {
                    let a = block.get(u, v, token);
                    total += a;
                    if let Some((x0, x1, y0, y1)) = span {
                        if u >= x0 && u <= x1 && v >= y0 && v <= y1 {
                            inside += a;
                        }
                    }
                }
            }
            let energy = if total > 0.0 {
                let ratio = (inside / total).clamp(0.0_f64, 1.0);
                let miss = 1.0 - ratio;
                miss * miss
            } else {
                0.0
            };
            blocks.push(BlockEnergy {
                class,
                inside,
                total,
                value: energy,
            });
            value += energy;
        }
        if !matched {
            return Err(GuidanceError::MissingBlock(class));
        }
    }
    Ok(AttentionEnergy { value, blocks })
}

/// Average of a token's attention across the selected blocks, upsampled to
/// the canvas. This is the map the precise mask is thresholded from.
pub fn mean_attention_map(
    maps: &AttentionMaps,
    classes: &[BlockClass],
    token: u32,
    canvas: Canvas,
) -> Result<Grid, GuidanceError> {
    if classes.is_empty() {
        return Err(GuidanceError::InvalidConfig(String::from(
            "no attention blocks selected",
        )));
    }
    let mut acc = Grid::zeros(canvas.width, canvas.height);
    for &class in classes {
        let mut matched = false;
        for block in maps.select(class) {
            matched = true;
            if token >= block.tokens() {
                return Err(GuidanceError::TokenOutOfRange {
                    token,
                    tokens: block.tokens(),
                });
            }
        }
        if !matched {
            return Err(GuidanceError::MissingBlock(class));
        }
        let up = maps
            .mean_token_map(class, token, canvas)
            .ok_or(GuidanceError::MissingBlock(class))?;
        for (a, &b) in acc.data_mut().iter_mut().zip(up.data()) {
            *a += b;
        }
    }
    let scale = 1.0 / classes.len() as f64;
    for a in acc.data_mut() {
        *a *= scale;
    }
    Ok(acc)
}

/// One guided update of the latent at timestep `t`: gradient descent on the
/// confinement energy, `iterations` times, summing gradients over the
/// selected blocks. Timestep and stage tags are preserved.
pub fn guidance_step(
    denoiser: &dyn DenoiserPort,
    latent: &LatentState,
    t: u32,
    text: &str,
    bbox: &BBox,
    token: u32,
    cfg: &GuidanceConfig,
) -> Result<LatentState, GuidanceError> {
    let mut z = latent.clone();
    for _ in 0..cfg.iterations {
        let mut grad: Vec<f64> = alloc::vec![0.0; z.values().len()];
        for &class in &cfg.blocks {
            let g = denoiser.energy_gradient(&z, t, text, bbox, token, class)?;
            if g.len() != grad.len() {
                return Err(GuidanceError::ShapeMismatch(format!(
                    "gradient has {} entries, latent has {}",
                    g.len(),
                    grad.len()
                )));
            }
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        for (zv, gv) in z.values_mut().iter_mut().zip(&grad) {
            *zv -= cfg.lr * gv;
        }
        if !z.is_finite() {
            return Err(GuidanceError::NonFinite(format!(
                "guidance update at timestep {t} produced a non-finite latent"
            )));
        }
    }
    Ok(z)
}

/// Per-cell merge: where the mask is set, take `new`; elsewhere keep `prev`.
/// Applies across all channels. Metadata (stage, timestep) follows `new`.
pub fn combine_latents(
    new: &LatentState,
    prev: &LatentState,
    mask: &BinaryMask,
) -> Result<LatentState, GuidanceError> {
    if !new.same_shape(prev) {
        return Err(GuidanceError::ShapeMismatch(String::from(
            "latents to combine have different shapes",
        )));
    }
    let canvas = new.canvas();
    if mask.width() != canvas.width || mask.height() != canvas.height {
        return Err(GuidanceError::ShapeMismatch(format!(
            "mask is {}x{}, canvas is {}x{}",
            mask.width(),
            mask.height(),
            canvas.width,
            canvas.height
        )));
    }
    let mut out = new.clone();
    for c in 0..new.channels() {
        for v in 0..canvas.height {
            for u in 0..canvas.width {
                if !mask.get(u, v) {
                    out.set(c, u, v, prev.get(c, u, v));
                }
            }
        }
    }
    Ok(out)
}

/// Everything one stage produces: the full latent trajectory, the extracted
/// precise mask, and the decoded result.
#[derive(Clone, Debug)]
pub struct StageRecord {
    /// 1-based stage number.
    pub stage: u32,
    pub subprompt: String,
    /// Index of the guided token within the subprompt.
    pub token: u32,
    /// The planned region this stage was guided into (a candidate box on the
    /// overlap path).
    pub rough_mask: BBox,
    /// `trajectory[i]` is the latent at countdown timestep `steps - i`, after
    /// that timestep's denoiser step and combination but before any guidance
    /// belonging to the next transition. `trajectory[0]` is the initial draw;
    /// the last entry is the final latent.
    pub trajectory: Vec<LatentState>,
    /// Tight box extracted from the token's final attention.
    pub precise_mask: BBox,
    pub decoded: DecodedImage,
}

impl StageRecord {
    pub fn final_latent(&self) -> &LatentState {
        self.trajectory
            .last()
            .expect("a stage record always has at least the initial latent")
    }
}

/// A failed stage still hands back the trajectory up to the failure point.
#[derive(Clone, Debug)]
pub struct StageFailure {
    pub error: GuidanceError,
    pub trajectory: Vec<LatentState>,
}

impl core::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "stage failed after {} trajectory entries: {}",
            self.trajectory.len(),
            self.error
        )
    }
}

impl core::error::Error for StageFailure {}

/// Inputs of one stage run.
pub struct StageInputs<'a> {
    /// 1-based stage number; also tags the latent draws.
    pub stage: u32,
    pub subprompt: &'a str,
    pub token: u32,
    pub rough_mask: BBox,
    pub seed: u64,
    /// Previous stage's record; required for every stage after the first.
    pub prev: Option<&'a StageRecord>,
}

/// Runs one object's guided denoising loop.
///
/// From `t = steps` down to 1: guidance while `t > guide_until`, one denoiser
/// step, then (for stages with a predecessor) combination against the
/// previous trajectory while `t > combine_until`. The precise mask is then
/// extracted from the final averaged attention map.
pub fn single_object_diffusion(
    denoiser: &dyn DenoiserPort,
    inputs: &StageInputs,
    cfg: &GuidanceConfig,
) -> Result<StageRecord, StageFailure> {
    let fail = |error: GuidanceError, trajectory: Vec<LatentState>| StageFailure {
        error,
        trajectory,
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, Vec::new()));
    }
    let canvas = denoiser.canvas();
    if !canvas.contains(&inputs.rough_mask) {
        return Err(fail(
            GuidanceError::Geometry(GeometryError::InvalidPlan(format!(
                "planned region {} exceeds the {}x{} canvas",
                inputs.rough_mask, canvas.width, canvas.height
            ))),
            Vec::new(),
        ));
    }
    let steps = cfg.steps as usize;
    if let Some(prev) = inputs.prev {
        if prev.trajectory.len() < steps + 1 {
            return Err(fail(
                GuidanceError::MissingTrajectory {
                    needed: steps + 1,
                    have: prev.trajectory.len(),
                },
                Vec::new(),
            ));
        }
    }
    let mask = indicator_mask(&inputs.rough_mask, canvas, canvas);

    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut z = denoiser.init_latent(inputs.seed, inputs.stage);
    z.stage = inputs.stage;
    z.timestep = cfg.steps;
    trajectory.push(z.clone());

    for t in (1..=cfg.steps).rev() {
        if t > cfg.guide_until {
            z = match guidance_step(
                denoiser,
                &z,
                t,
                inputs.subprompt,
                &inputs.rough_mask,
                inputs.token,
                cfg,
            ) {
                Ok(z) => z,
                Err(e) => return Err(fail(e, trajectory)),
            };
        }
        z = match denoiser.step(&z, t, inputs.subprompt) {
            Ok(z) => z,
            Err(e) => return Err(fail(e.into(), trajectory)),
        };
        z.stage = inputs.stage;
        z.timestep = t - 1;
        if let Some(prev) = inputs.prev {
            if t > cfg.combine_until {
                let prev_z = &prev.trajectory[steps - (t as usize - 1)];
                z = match combine_latents(&z, prev_z, &mask) {
                    Ok(z) => z,
                    Err(e) => return Err(fail(e, trajectory)),
                };
                z.stage = inputs.stage;
                z.timestep = t - 1;
            }
        }
        if !z.is_finite() {
            return Err(fail(
                GuidanceError::NonFinite(format!(
                    "latent became non-finite after timestep {t}"
                )),
                trajectory,
            ));
        }
        trajectory.push(z.clone());
    }

    let maps = match denoiser.attention(&z, 0, inputs.subprompt) {
        Ok(m) => m,
        Err(e) => return Err(fail(e.into(), trajectory)),
    };
    let mean = match mean_attention_map(&maps, &cfg.blocks, inputs.token, canvas) {
        Ok(m) => m,
        Err(e) => return Err(fail(e, trajectory)),
    };
    let precise_mask = match bbox_from_attention(&mean, cfg.mask_quantile) {
        Ok(b) => b,
        Err(e) => return Err(fail(e.into(), trajectory)),
    };
    let decoded = match denoiser.decode(&z, inputs.subprompt) {
        Ok(d) => d,
        Err(e) => return Err(fail(e.into(), trajectory)),
    };
    Ok(StageRecord {
        stage: inputs.stage,
        subprompt: String::from(inputs.subprompt),
        token: inputs.token,
        rough_mask: inputs.rough_mask,
        trajectory,
        precise_mask,
        decoded,
    })
}
