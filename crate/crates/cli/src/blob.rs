//! Binary trajectory storage.
//!
//! A trajectory file holds every latent a stage produced, first frame to
//! last, so a replay can compare a re-executed run bit for bit. Layout,
//! all little-endian:
//!
//! ```text
//! magic   4 bytes  "LTRJ"
//! version u16      1
//! stage   u32
//! channels u32
//! width   u32
//! height  u32
//! frames  u32
//! data    frames * channels * height * width f64 values, frame-major,
//!         in LatentState::values order
//! ```
//!
//! Frame `i` is the latent at countdown timestep `frames - 1 - i`; frame 0
//! is the initial draw.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use easel_core::geometry::Canvas;
use easel_core::latent::LatentState;

const MAGIC: [u8; 4] = *b"LTRJ";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 5;

pub fn write_trajectory(path: &Path, stage: u32, frames: &[LatentState]) -> Result<()> {
    let Some(first) = frames.first() else {
        bail!("refusing to write an empty trajectory");
    };
    let channels = first.channels();
    let canvas = first.canvas();
    let per_frame = frames[0].values().len();
    let mut bytes = Vec::with_capacity(HEADER_LEN + frames.len() * per_frame * 8);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&stage.to_le_bytes());
    bytes.extend_from_slice(&channels.to_le_bytes());
    bytes.extend_from_slice(&canvas.width.to_le_bytes());
    bytes.extend_from_slice(&canvas.height.to_le_bytes());
    bytes.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for frame in frames {
        if !frame.same_shape(first) {
            bail!("trajectory frames disagree on shape");
        }
        for &v in frame.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads a trajectory back; stage and per-frame timestep tags are restored
/// from the header (frame `i` gets timestep `frames - 1 - i`).
pub fn read_trajectory(path: &Path) -> Result<(u32, Vec<LatentState>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < HEADER_LEN {
        bail!("{}: too short for a trajectory header", path.display());
    }
    if bytes[0..4] != MAGIC {
        bail!("{}: not a trajectory file (bad magic)", path.display());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        bail!("{}: unsupported trajectory version {version}", path.display());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let stage = word(6);
    let channels = word(10);
    let width = word(14);
    let height = word(18);
    let frames = word(22);
    if channels == 0 || width == 0 || height == 0 || frames == 0 {
        bail!("{}: degenerate trajectory dimensions", path.display());
    }
    let per_frame = channels as usize * width as usize * height as usize;
    let expected = HEADER_LEN + frames as usize * per_frame * 8;
    if bytes.len() != expected {
        bail!(
            "{}: expected {expected} bytes for {frames} frames, found {}",
            path.display(),
            bytes.len()
        );
    }
    let canvas = Canvas::new(width, height);
    let mut out = Vec::with_capacity(frames as usize);
    let mut offset = HEADER_LEN;
    for i in 0..frames {
        let mut values = Vec::with_capacity(per_frame);
        for _ in 0..per_frame {
            values.push(f64::from_le_bytes(
                bytes[offset..offset + 8].try_into().unwrap(),
            ));
            offset += 8;
        }
        let mut latent = LatentState::from_vec(channels, canvas, values);
        latent.stage = stage;
        latent.timestep = frames - 1 - i;
        out.push(latent);
    }
    Ok((stage, out))
}
