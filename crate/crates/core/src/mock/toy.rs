//! A seeded, fully deterministic denoiser with differentiable attention.
//!
//! The toy backend exists so the guidance math can be exercised and verified
//! hermetically. It is linear and tiny but structurally faithful:
//!
//! * the latent is `channels x height x width` of `f64`;
//! * three attention blocks report at full, half, and quarter resolution
//!   (near-input, near-middle, near-output);
//! * per block, each token's attention logit at cell `m` is a seeded linear
//!   projection `s_m = sum_c w_c * pooled_z_c(m)` of the (average-pooled)
//!   latent, and the attention map is the squares-normalization
//!   `A_m = s_m^2 / sum_m s_m^2` (all-zero logits fall back to uniform);
//! * a step contracts the latent toward a small seeded signal field:
//!   `z' = (1 - b_t) z + b_t g` with `b_t = 1/(t+1)`. Uniform rescaling of a
//!   latent leaves squares-normalized attention unchanged, so stepping never
//!   undoes what guidance concentrated;
//! * the energy gradient is the closed form of the confinement energy
//!   `(1 - inside/total)^2` through the squares-normalization, pooling, and
//!   projection, which finite differences confirm.
//!
//! Everything derives from `(backend seed, run seed, stage, token text)` via
//! SplitMix64 streams; equal inputs give bit-equal outputs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{scaled_span, BBox, Canvas};
use crate::latent::{AttentionMaps, BlockAttention, BlockClass, DecodedImage, Grid, LatentState};
use crate::ports::{DenoiserPort, PortError};
use crate::rng::{fnv1a, SplitMix64};

#[derive(Clone, Copy, Debug)]
pub struct ToyConfig {
    pub channels: u32,
    pub width: u32,
    pub height: u32,
    /// Backend personality seed: fixes projection weights and signal field.
    pub seed: u64,
    /// Magnitude of the signal field a step contracts toward.
    pub signal_scale: f64,
    /// Standard deviation of initial latents.
    pub init_scale: f64,
    /// Which block class feeds the decoded image's token planes.
    pub plane_class: BlockClass,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            channels: 4,
            width: 16,
            height: 16,
            seed: 0,
            signal_scale: 0.05,
            init_scale: 1.0,
            plane_class: BlockClass::NearMiddle,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockSpec {
    class: BlockClass,
    width: u32,
    height: u32,
}

pub struct ToyDenoiser {
    cfg: ToyConfig,
    blocks: [BlockSpec; 3],
    signal: Vec<f64>,
}

impl ToyDenoiser {
    pub fn new(cfg: ToyConfig) -> Self {
        assert!(cfg.channels >= 1, "toy denoiser needs at least one channel");
        assert!(
            cfg.width >= 4 && cfg.height >= 4,
            "toy denoiser needs at least a 4x4 latent"
        );
        let blocks = [
            BlockSpec {
                class: BlockClass::NearInput,
                width: cfg.width,
                height: cfg.height,
            },
            BlockSpec {
                class: BlockClass::NearMiddle,
                width: cfg.width / 2,
                height: cfg.height / 2,
            },
            BlockSpec {
                class: BlockClass::NearOutput,
                width: cfg.width / 4,
                height: cfg.height / 4,
            },
        ];
        let mut stream = SplitMix64::new(cfg.seed ^ 0x5157_4E41_4C20_4649);
        let count = (cfg.channels as usize) * (cfg.width as usize) * (cfg.height as usize);
        let signal = (0..count)
            .map(|_| stream.next_centered() * cfg.signal_scale)
            .collect();
        ToyDenoiser {
            cfg,
            blocks,
            signal,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    /// Whitespace tokens of a prompt, lowercased with punctuation trimmed.
    pub fn tokenize(text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_ascii_lowercase()
            })
            .filter(|t| !t.is_empty())
            .collect()
    }

    fn check_shape(&self, latent: &LatentState) -> Result<(), PortError> {
        if latent.channels() != self.cfg.channels || latent.canvas() != self.canvas() {
            return Err(PortError::Contract(alloc::format!(
                "latent shape {}x{}x{} does not match backend {}x{}x{}",
                latent.channels(),
                latent.canvas().height,
                latent.canvas().width,
                self.cfg.channels,
                self.cfg.height,
                self.cfg.width
            )));
        }
        Ok(())
    }

    fn token_weights(&self, word: &str, class: BlockClass) -> Vec<f64> {
        let tag: u64 = match class {
            BlockClass::NearInput => 0x11,
            BlockClass::NearMiddle => 0x22,
            BlockClass::NearOutput => 0x33,
        };
        let key = fnv1a(word.as_bytes()) ^ self.cfg.seed.rotate_left(17) ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut stream = SplitMix64::new(key);
        (0..self.cfg.channels).map(|_| stream.next_centered()).collect()
    }

    /// Coarse cell index each fine cell pools into, plus members per coarse
    /// cell, for one axis pair.
    fn pooling(&self, spec: &BlockSpec) -> (Vec<u32>, Vec<u32>) {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut assign = Vec::with_capacity((w * h) as usize);
        let mut counts = vec![0u32; (spec.width * spec.height) as usize];
        for v in 0..h {
            let cv = (v as u64 * spec.height as u64 / h as u64) as u32;
            for u in 0..w {
                let cu = (u as u64 * spec.width as u64 / w as u64) as u32;
                let m = cv * spec.width + cu;
                assign.push(m);
                counts[m as usize] += 1;
            }
        }
        (assign, counts)
    }

    /// Average-pooled latent for one block: `channels x coarse_cells`.
    fn pooled(&self, latent: &LatentState, spec: &BlockSpec, assign: &[u32], counts: &[u32]) -> Vec<f64> {
        let cells = (self.cfg.width * self.cfg.height) as usize;
        let coarse = (spec.width * spec.height) as usize;
        let mut out = vec![0.0; (self.cfg.channels as usize) * coarse];
        for c in 0..self.cfg.channels as usize {
            let plane = &latent.values()[c * cells..(c + 1) * cells];
            let dst = &mut out[c * coarse..(c + 1) * coarse];
            for (fine, &m) in assign.iter().enumerate() {
                dst[m as usize] += plane[fine];
            }
            for (m, v) in dst.iter_mut().enumerate() {
                *v /= counts[m] as f64;
            }
        }
        out
    }

    /// Projection logits `s_m` for one token at one block.
    fn logits(&self, pooled: &[f64], weights: &[f64], coarse: usize) -> Vec<f64> {
        let mut s = vec![0.0; coarse];
        for (c, &w) in weights.iter().enumerate() {
            let plane = &pooled[c * coarse..(c + 1) * coarse];
            for (m, &z) in plane.iter().enumerate() {
                s[m] += w * z;
            }
        }
        s
    }
}

impl DenoiserPort for ToyDenoiser {
    fn canvas(&self) -> Canvas {
        Canvas::new(self.cfg.width, self.cfg.height)
    }

    fn channels(&self) -> u32 {
        self.cfg.channels
    }

    fn init_latent(&self, seed: u64, stage: u32) -> LatentState {
        let key = seed
            ^ self.cfg.seed.rotate_left(32)
            ^ (stage as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut stream = SplitMix64::new(key);
        let count = (self.cfg.channels as usize) * (self.cfg.width as usize) * (self.cfg.height as usize);
        let data = (0..count).map(|_| stream.next_bell() * self.cfg.init_scale).collect();
        let mut z = LatentState::from_vec(self.cfg.channels, self.canvas(), data);
        z.stage = stage;
        z
    }

    fn step(&self, latent: &LatentState, t: u32, text: &str) -> Result<LatentState, PortError> {
        self.check_shape(latent)?;
        let _ = text; // dynamics are text-independent; attention is not
        if t == 0 {
            return Err(PortError::Contract(String::from(
                "step called below timestep 1",
            )));
        }
        let beta = 1.0 / (t as f64 + 1.0);
        let mut out = latent.clone();
        for (o, &g) in out.values_mut().iter_mut().zip(&self.signal) {
            *o = (1.0 - beta) * *o + beta * g;
        }
        out.timestep = t - 1;
        Ok(out)
    }

    fn attention(
        &self,
        latent: &LatentState,
        _t: u32,
        text: &str,
    ) -> Result<AttentionMaps, PortError> {
        self.check_shape(latent)?;
        let tokens = Self::tokenize(text);
        if tokens.is_empty() {
            return Err(PortError::Contract(String::from(
                "attention over empty prompt text",
            )));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for spec in &self.blocks {
            let (assign, counts) = self.pooling(spec);
            let pooled = self.pooled(latent, spec, &assign, &counts);
            let coarse = (spec.width * spec.height) as usize;
            let mut values = vec![0.0; coarse * tokens.len()];
            for (k, word) in tokens.iter().enumerate() {
                let weights = self.token_weights(word, spec.class);
                let s = self.logits(&pooled, &weights, coarse);
                let total: f64 = s.iter().map(|x| x * x).sum();
                for (m, &sm) in s.iter().enumerate() {
                    values[m * tokens.len() + k] = if total > 0.0 {
                        sm * sm / total
                    } else {
                        1.0 / coarse as f64
                    };
                }
            }
            blocks.push(BlockAttention::new(
                spec.class,
                spec.width,
                spec.height,
                tokens.len() as u32,
                values,
            ));
        }
        Ok(AttentionMaps { blocks })
    }

    fn energy_gradient(
        &self,
        latent: &LatentState,
        _t: u32,
        text: &str,
        bbox: &BBox,
        token: u32,
        class: BlockClass,
    ) -> Result<Vec<f64>, PortError> {
        self.check_shape(latent)?;
        let tokens = Self::tokenize(text);
        let word = tokens.get(token as usize).ok_or_else(|| {
            PortError::Contract(alloc::format!(
                "token index {token} out of range for {} tokens",
                tokens.len()
            ))
        })?;
        if !self.canvas().contains(bbox) {
            return Err(PortError::Contract(alloc::format!(
                "target box {bbox} exceeds the latent canvas"
            )));
        }
        let cells = (self.cfg.width * self.cfg.height) as usize;
        let mut grad = vec![0.0; (self.cfg.channels as usize) * cells];
        for spec in self.blocks.iter().filter(|b| b.class == class) {
            let (assign, counts) = self.pooling(spec);
            let pooled = self.pooled(latent, spec, &assign, &counts);
            let coarse = (spec.width * spec.height) as usize;
            let weights = self.token_weights(word, spec.class);
            let s = self.logits(&pooled, &weights, coarse);
            let total: f64 = s.iter().map(|x| x * x).sum();
            if total <= 0.0 {
                continue; // degenerate block: uniform attention, flat energy
            }
            let span = scaled_span(bbox, self.canvas(), Canvas::new(spec.width, spec.height));
            let mut inside_mask = vec![false; coarse];
            if let Some((x0, x1, y0, y1)) = span {
                for v in y0..=y1 {
                    for u in x0..=x1 {
                        inside_mask[(v * spec.width + u) as usize] = true;
                    }
                }
            }
            let inside: f64 = s
                .iter()
                .enumerate()
                .filter(|(m, _)| inside_mask[*m])
                .map(|(_, x)| x * x)
                .sum();
            let ratio = inside / total;
            // d/ds_m of (1 - R)^2 with R = S_in/S and A = s^2/S:
            //   -4 (1 - R) s_m (ind_m - R) / S
            let mut ds = vec![0.0; coarse];
            for m in 0..coarse {
                let ind = if inside_mask[m] { 1.0 } else { 0.0 };
                ds[m] = -4.0 * (1.0 - ratio) * s[m] * (ind - ratio) / total;
            }
            // Chain through projection weights and average pooling.
            for c in 0..self.cfg.channels as usize {
                let w = weights[c];
                let dst = &mut grad[c * cells..(c + 1) * cells];
                for (fine, &m) in assign.iter().enumerate() {
                    dst[fine] += ds[m as usize] * w / counts[m as usize] as f64;
                }
            }
        }
        Ok(grad)
    }

    fn decode(&self, latent: &LatentState, text: &str) -> Result<DecodedImage, PortError> {
        self.check_shape(latent)?;
        let cells = (self.cfg.width * self.cfg.height) as usize;
        let mut luma = vec![0.0; cells];
        for c in 0..self.cfg.channels as usize {
            let plane = &latent.values()[c * cells..(c + 1) * cells];
            for (l, &z) in luma.iter_mut().zip(plane) {
                *l += z;
            }
        }
        for l in luma.iter_mut() {
            *l /= self.cfg.channels as f64;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &l in &luma {
            lo = lo.min(l);
            hi = hi.max(l);
        }
        let range = hi - lo;
        for l in luma.iter_mut() {
            *l = if range > 0.0 { (*l - lo) / range } else { 0.5 };
        }
        let maps = self.attention(latent, 0, text)?;
        let tokens = Self::tokenize(text);
        let planes = tokens
            .iter()
            .enumerate()
            .map(|(k, word)| {
                let grid = maps
                    .mean_token_map(self.cfg.plane_class, k as u32, self.canvas())
                    .expect("toy denoiser always reports every block class");
                (word.clone(), grid)
            })
            .collect();
        Ok(DecodedImage {
            luma: Grid::from_vec(self.cfg.width, self.cfg.height, luma),
            token_planes: planes,
        })
    }
}
