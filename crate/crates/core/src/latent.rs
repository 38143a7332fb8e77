//! Dense value grids: latents, attention maps, and decoded images.
//!
//! Everything is `f64` and row-major. A latent is a `channels x height x
//! width` volume; attention comes per denoiser block as a `cells x tokens`
//! matrix whose columns are normalized token maps; a decoded image is a
//! single luma plane plus one auxiliary attention plane per prompt token so
//! deterministic scorers can locate objects without a real vision model.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{scaled_span, BBox, Canvas};

/// Row-major 2-D grid of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: u32, height: u32) -> Self {
        Grid {
            width,
            height,
            data: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (width as usize) * (height as usize));
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::new(self.width, self.height)
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: f64) {
        self.data[(v * self.width + u) as usize] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mass inside `bbox`, where the box is given at `canvas` scale and this
    /// grid may be a different resolution (cells count by their centers).
    pub fn mass_inside(&self, bbox: &BBox, canvas: Canvas) -> f64 {
        match scaled_span(bbox, canvas, self.canvas()) {
            None => 0.0,
            Some((x0, x1, y0, y1)) => {
                let mut total = 0.0;
                for v in y0..=y1 {
                    for u in x0..=x1 {
                        total += self.get(u, v);
                    }
                }
                total
            }
        }
    }

    /// Mass-weighted mean cell index `(cx, cy)`, or `None` when the grid has
    /// no positive mass.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut mass = 0.0;
        let mut mx = 0.0;
        let mut my = 0.0;
        for v in 0..self.height {
            for u in 0..self.width {
                let w = self.get(u, v);
                mass += w;
                mx += w * u as f64;
                my += w * v as f64;
            }
        }
        if mass > 0.0 {
            Some((mx / mass, my / mass))
        } else {
            None
        }
    }
}

/// A denoiser latent: `channels` planes of `height x width` cells, tagged
/// with the stage that produced it and its countdown timestep (`T..0`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    channels: u32,
    width: u32,
    height: u32,
    data: Vec<f64>,
    pub stage: u32,
    pub timestep: u32,
}

impl LatentState {
    pub fn zeros(channels: u32, canvas: Canvas) -> Self {
        LatentState {
            channels,
            width: canvas.width,
            height: canvas.height,
            data: vec![0.0; (channels as usize) * canvas.cells() as usize],
            stage: 0,
            timestep: 0,
        }
    }

    pub fn from_vec(channels: u32, canvas: Canvas, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (channels as usize) * canvas.cells() as usize);
        LatentState {
            channels,
            width: canvas.width,
            height: canvas.height,
            data,
            stage: 0,
            timestep: 0,
        }
    }

    /// Fills each cell from `f(channel, u, v)`, visiting channels outermost
    /// and rows before columns within a channel.
    pub fn from_fn(channels: u32, canvas: Canvas, mut f: impl FnMut(u32, u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity((channels as usize) * canvas.cells() as usize);
        for c in 0..channels {
            for v in 0..canvas.height {
                for u in 0..canvas.width {
                    data.push(f(c, u, v));
                }
            }
        }
        LatentState::from_vec(channels, canvas, data)
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::new(self.width, self.height)
    }

    pub fn same_shape(&self, other: &LatentState) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }

    fn idx(&self, c: u32, u: u32, v: u32) -> usize {
        ((c * self.height + v) * self.width + u) as usize
    }

    pub fn get(&self, c: u32, u: u32, v: u32) -> f64 {
        self.data[self.idx(c, u, v)]
    }

    pub fn set(&mut self, c: u32, u: u32, v: u32, value: f64) {
        let i = self.idx(c, u, v);
        self.data[i] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and treating equal
    /// NaN payloads as equal (used by the preservation tests).
    pub fn bits_eq(&self, other: &LatentState) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Which group of denoiser blocks an attention map (or a guidance config)
/// refers to, by depth in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockClass {
    NearInput,
    NearMiddle,
    NearOutput,
}

impl fmt::Display for BlockClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockClass::NearInput => "near-input",
            BlockClass::NearMiddle => "near-middle",
            BlockClass::NearOutput => "near-output",
        })
    }
}

impl core::str::FromStr for BlockClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "near-input" => Ok(BlockClass::NearInput),
            "near-middle" => Ok(BlockClass::NearMiddle),
            "near-output" => Ok(BlockClass::NearOutput),
            other => Err(alloc::format!("unknown block class: {other:?}")),
        }
    }
}

/// Cross-attention observed at one denoiser block: for each of the block's
/// `width x height` cells, one weight per prompt token. Columns (fixed
/// token) are the token maps and sum to 1 unless the block is degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockAttention {
    pub class: BlockClass,
    width: u32,
    height: u32,
    tokens: u32,
    /// Cell-major: `values[m * tokens + k]`.
    values: Vec<f64>,
}

impl BlockAttention {
    pub fn new(class: BlockClass, width: u32, height: u32, tokens: u32, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            (width as usize) * (height as usize) * (tokens as usize)
        );
        BlockAttention {
            class,
            width,
            height,
            tokens,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::new(self.width, self.height)
    }

    pub fn tokens(&self) -> u32 {
        self.tokens
    }

    pub fn get(&self, u: u32, v: u32, token: u32) -> f64 {
        self.values[((v * self.width + u) * self.tokens + token) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One token's map as a standalone grid.
    pub fn token_map(&self, token: u32) -> Grid {
        Grid::from_fn(self.width, self.height, |u, v| self.get(u, v, token))
    }
}

/// All attention blocks reported by a denoiser for one evaluation.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AttentionMaps {
    pub blocks: Vec<BlockAttention>,
}

impl AttentionMaps {
    pub fn select(&self, class: BlockClass) -> impl Iterator<Item = &BlockAttention> {
        self.blocks.iter().filter(move |b| b.class == class)
    }

    /// Mean token map over the selected blocks, upsampled to `target`
    /// resolution with mass preserved (each coarse cell's value is spread
    /// evenly over the fine cells it covers). `None` when the selection is
    /// empty.
    pub fn mean_token_map(&self, class: BlockClass, token: u32, target: Canvas) -> Option<Grid> {
        let mut out = Grid::zeros(target.width, target.height);
        let mut count = 0u32;
        for block in self.select(class) {
            if token >= block.tokens {
                continue;
            }
            let scale = (block.width as f64 / target.width as f64)
                * (block.height as f64 / target.height as f64);
            for v in 0..target.height {
                for u in 0..target.width {
                    // Fine cell center -> covering coarse cell.
                    let cu = ((u as u64 * 2 + 1) * block.width as u64 / (target.width as u64 * 2))
                        .min(block.width as u64 - 1) as u32;
                    let cv = ((v as u64 * 2 + 1) * block.height as u64
                        / (target.height as u64 * 2))
                        .min(block.height as u64 - 1) as u32;
                    let add = block.get(cu, cv, token) * scale;
                    out.set(u, v, out.get(u, v) + add);
                }
            }
            count += 1;
        }
        if count == 0 {
            return None;
        }
        if count > 1 {
            for v in out.data_mut() {
                *v /= count as f64;
            }
        }
        Some(out)
    }
}

/// Deterministic decode of a latent: a luma rendering plus one attention
/// plane per prompt token (token text, map), in token order.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedImage {
    pub luma: Grid,
    pub token_planes: Vec<(String, Grid)>,
}
