//! Grid to PNG and back. Decoded images are luma grids in [0, 1]; they are
//! written as 8-bit grayscale so a run directory can be eyeballed.

use std::io::Cursor;
use std::path::Path;

use anyhow::{Context, Result};
use easel_core::latent::Grid;
use image::{GrayImage, ImageFormat, Luma};

pub fn encode_luma_png(grid: &Grid) -> Result<Vec<u8>> {
    let mut img = GrayImage::new(grid.width(), grid.height());
    for v in 0..grid.height() {
        for u in 0..grid.width() {
            let value = (grid.get(u, v).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(u, v, Luma([value]));
        }
    }
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .context("encoding luma grid as png")?;
    Ok(bytes)
}

pub fn load_luma(path: &Path) -> Result<Grid> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_luma8();
    Ok(Grid::from_fn(img.width(), img.height(), |u, v| {
        img.get_pixel(u, v).0[0] as f64 / 255.0
    }))
}
