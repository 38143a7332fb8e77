//! Planned-region geometry on integer cell grids.
//!
//! The canvas is the backend's latent grid: cell `(0, 0)` is the top-left
//! corner, `x` grows rightward, `y` grows downward, and every box is measured
//! in whole cells. Painting proceeds left-to-right and bottom-to-top, so the
//! first object's region is anchored to the left or bottom edge
//! ([`rough_mask_first`]) and each later region stacks to the right of or
//! above the previous object's box ([`rough_mask_next`]), optionally biting
//! into it by a fractional overlap ([`overlap_candidate`]).
//!
//! Rounding conventions, applied consistently and asserted by the property
//! tests at the bottom of this file:
//!
//! * box origins that come from integer division use floor;
//! * extents scaled by an overlap ratio `r` round half up;
//! * stacking extents use ceiling so adjacent boxes stay flush with the
//!   previous box's edge (`floor((n-1)·e/n) + ceil(e/n) = e` exactly).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::latent::Grid;

/// Integer cell-grid dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub const fn new(width: u32, height: u32) -> Self {
        Canvas { width, height }
    }

    pub fn cells(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn contains(&self, b: &BBox) -> bool {
        b.w >= 1 && b.h >= 1 && b.right() <= self.width && b.bottom() <= self.height
    }
}

/// Axis-aligned box in cell units; `(x, y)` is its top-left cell.
///
/// A box always has positive extent: `w >= 1` and `h >= 1` for every box
/// produced by this module. The covered cells are `x..x+w` by `y..y+h`
/// (half-open).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    /// One past the rightmost covered column.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// One past the bottommost covered row.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains_cell(&self, u: u32, v: u32) -> bool {
        u >= self.x && u < self.right() && v >= self.y && v < self.bottom()
    }

    /// Intersection with another box, or `None` when they share no cell.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x0 < x1 && y0 < y1 {
            Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
        } else {
            None
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

/// Where a planned region sits.
///
/// The first object of a run may only be placed `Left` or `Bottom`; every
/// later object stacks `Right` of or `Top` of (above) the previous one. The
/// planner's reply-projection tables guarantee closure over these subsets;
/// the geometry ops reject the wrong variant for their position in the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionChoice {
    Left,
    Bottom,
    Right,
    Top,
}

impl PositionChoice {
    /// The word used in planning prompts ("in/on the {position} of ...").
    pub fn word(&self) -> &'static str {
        match self {
            PositionChoice::Left => "left",
            PositionChoice::Bottom => "bottom",
            PositionChoice::Right => "right",
            PositionChoice::Top => "top",
        }
    }
}

impl fmt::Display for PositionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl core::str::FromStr for PositionChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(PositionChoice::Left),
            "bottom" => Ok(PositionChoice::Bottom),
            "right" => Ok(PositionChoice::Right),
            "top" => Ok(PositionChoice::Top),
            other => Err(format!("unknown position choice: {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryError {
    /// The planner handed geometry an unusable plan (zero count, a position
    /// variant not allowed at this point in the run, a previous box outside
    /// the canvas, or an empty canvas).
    InvalidPlan(String),
    /// No room is left in the stacking direction, or the strip for the
    /// requested count degenerates to zero cells.
    LayoutExhausted { direction: PositionChoice },
    /// Overlap ratio outside `[0, 1)`.
    InvalidRatio(f64),
    /// No attention cell met the extraction threshold (e.g. an all-zero map).
    EmptyAttention,
    /// Extraction quantile outside `[0, 1]`, or a non-finite/negative map.
    InvalidAttention(String),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::InvalidPlan(why) => write!(f, "invalid plan: {why}"),
            GeometryError::LayoutExhausted { direction } => {
                write!(f, "no layout room remains toward {direction}")
            }
            GeometryError::InvalidRatio(r) => write!(f, "overlap ratio {r} outside [0, 1)"),
            GeometryError::EmptyAttention => f.write_str("no attention cell meets the threshold"),
            GeometryError::InvalidAttention(why) => write!(f, "invalid attention map: {why}"),
        }
    }
}

impl core::error::Error for GeometryError {}

fn require_canvas(canvas: Canvas) -> Result<(), GeometryError> {
    if canvas.width == 0 || canvas.height == 0 {
        return Err(GeometryError::InvalidPlan(String::from("empty canvas")));
    }
    Ok(())
}

fn require_count(num: u32) -> Result<(), GeometryError> {
    if num == 0 {
        return Err(GeometryError::InvalidPlan(String::from(
            "object count must be at least 1",
        )));
    }
    Ok(())
}

/// Round half up for non-negative values.
fn round_half_up(x: f64) -> u32 {
    (x + 0.5) as u32
}

fn ceil_div(a: u32, b: u32) -> u32 {
    a.div_ceil(b)
}

/// Region for the first object of a run.
///
/// With `num` objects expected along the stacking axis, `Left` takes the
/// leftmost `floor(W/num)`-wide column strip and `Bottom` the bottom
/// `ceil(H/num)`-tall row strip, each spanning the full cross axis. The
/// bottom strip's top edge sits at `floor((num-1)·H/num)`, so it is anchored
/// flush with the bottom of the canvas.
pub fn rough_mask_first(
    opt: PositionChoice,
    num: u32,
    canvas: Canvas,
) -> Result<BBox, GeometryError> {
    require_canvas(canvas)?;
    require_count(num)?;
    match opt {
        PositionChoice::Left => {
            let w = canvas.width / num;
            if w == 0 {
                return Err(GeometryError::LayoutExhausted { direction: opt });
            }
            Ok(BBox::new(0, 0, w, canvas.height))
        }
        PositionChoice::Bottom => {
            let h = ceil_div(canvas.height, num);
            Ok(BBox::new(0, canvas.height - h, canvas.width, h))
        }
        other => Err(GeometryError::InvalidPlan(format!(
            "first object must sit left or bottom, got {other}"
        ))),
    }
}

/// Region for object `n > 1`, stacked beside the previous object's box.
///
/// `Right` takes a `floor(rem/num)`-wide strip starting at `prev`'s right
/// edge (`rem` = canvas width remaining to the right); `Top` takes a
/// `ceil(prev.y/num)`-tall strip ending flush at `prev`'s top edge. Both
/// span the full cross axis and never intersect `prev`.
pub fn rough_mask_next(
    opt: PositionChoice,
    num: u32,
    prev: &BBox,
    canvas: Canvas,
) -> Result<BBox, GeometryError> {
    require_canvas(canvas)?;
    require_count(num)?;
    if !canvas.contains(prev) {
        return Err(GeometryError::InvalidPlan(format!(
            "previous box {prev} exceeds the {}x{} canvas",
            canvas.width, canvas.height
        )));
    }
    match opt {
        PositionChoice::Right => {
            let rem = canvas.width - prev.right();
            let w = rem / num;
            if w == 0 {
                return Err(GeometryError::LayoutExhausted { direction: opt });
            }
            Ok(BBox::new(prev.right(), 0, w, canvas.height))
        }
        PositionChoice::Top => {
            if prev.y == 0 {
                return Err(GeometryError::LayoutExhausted { direction: opt });
            }
            let h = ceil_div(prev.y, num);
            Ok(BBox::new(0, prev.y - h, canvas.width, h))
        }
        other => Err(GeometryError::InvalidPlan(format!(
            "later objects must stack right or top, got {other}"
        ))),
    }
}

/// An overlap candidate box plus a flag recording whether rounding pushed it
/// past the canvas edge and it had to be clamped back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CandidateBox {
    pub bbox: BBox,
    pub clamped: bool,
}

/// Region for object `n > 1` that deliberately overlaps the previous object
/// by the fraction `r` of the previous box's extent along the stacking axis.
///
/// `r = 0` reduces exactly to [`rough_mask_next`] (full cross-axis strip,
/// no overlap); for `r > 0` the candidate keeps the previous box's
/// cross-axis extent and bites `round(extent·r)` cells into it:
///
/// * `Right`: origin `(prev.x + round(w̃·(1-r)), prev.y)`, size
///   `(round(w̃·r) + floor(rem/num), h̃)`;
/// * `Top`: origin `(prev.x, prev.y - ceil(prev.y/num))`, size
///   `(w̃, round(h̃·r) + ceil(prev.y/num))`.
pub fn overlap_candidate(
    opt: PositionChoice,
    num: u32,
    prev: &BBox,
    canvas: Canvas,
    r: f64,
) -> Result<CandidateBox, GeometryError> {
    if !(0.0..1.0).contains(&r) || !r.is_finite() {
        return Err(GeometryError::InvalidRatio(r));
    }
    if r == 0.0 {
        return rough_mask_next(opt, num, prev, canvas).map(|bbox| CandidateBox {
            bbox,
            clamped: false,
        });
    }
    require_canvas(canvas)?;
    require_count(num)?;
    if !canvas.contains(prev) {
        return Err(GeometryError::InvalidPlan(format!(
            "previous box {prev} exceeds the {}x{} canvas",
            canvas.width, canvas.height
        )));
    }
    match opt {
        PositionChoice::Right => {
            let rem = canvas.width - prev.right();
            if rem == 0 {
                return Err(GeometryError::LayoutExhausted { direction: opt });
            }
            let x = prev.x + round_half_up(prev.w as f64 * (1.0 - r));
            let w = round_half_up(prev.w as f64 * r) + rem / num;
            if w == 0 {
                return Err(GeometryError::LayoutExhausted { direction: opt });
            }
            let (w, clamped) = if x + w > canvas.width {
                (canvas.width - x, true)
            } else {
                (w, false)
            };
            Ok(CandidateBox {
                bbox: BBox::new(x, prev.y, w, prev.h),
                clamped,
            })
        }
        PositionChoice::Top => {
            if prev.y == 0 {
                return Err(GeometryError::LayoutExhausted { direction: opt });
            }
            let stack = ceil_div(prev.y, num);
            let h = round_half_up(prev.h as f64 * r) + stack;
            let y = prev.y - stack;
            let (h, clamped) = if y + h > canvas.height {
                (canvas.height - y, true)
            } else {
                (h, false)
            };
            Ok(CandidateBox {
                bbox: BBox::new(prev.x, y, prev.w, h),
                clamped,
            })
        }
        other => Err(GeometryError::InvalidPlan(format!(
            "overlap candidates stack right or top, got {other}"
        ))),
    }
}

/// Inclusive index range of cells at `res_extent` resolution whose centers
/// fall inside `[start, start+len)` at `canvas_extent` scale, or `None` when
/// no cell center lands inside. Comparisons are exact integer arithmetic:
/// cell `u`'s center is at `(2u+1)·canvas / (2·res)`.
pub(crate) fn axis_span(
    start: u32,
    len: u32,
    canvas_extent: u32,
    res_extent: u32,
) -> Option<(u32, u32)> {
    let c = canvas_extent as u64;
    let r = res_extent as u64;
    let lo_bound = 2 * start as u64 * r;
    let hi_bound = 2 * (start as u64 + len as u64) * r;
    let mut lo = None;
    let mut hi = None;
    for u in 0..res_extent {
        let center2 = (2 * u as u64 + 1) * c;
        if center2 >= lo_bound && center2 < hi_bound {
            if lo.is_none() {
                lo = Some(u);
            }
            hi = Some(u);
        }
    }
    lo.zip(hi)
}

/// Cell span of `bbox` (given at `canvas` scale) on a grid of `resolution`
/// cells, as inclusive `(x0, x1, y0, y1)` ranges, `None` if no cell center
/// falls inside.
pub(crate) fn scaled_span(
    bbox: &BBox,
    canvas: Canvas,
    resolution: Canvas,
) -> Option<(u32, u32, u32, u32)> {
    let (x0, x1) = axis_span(bbox.x, bbox.w, canvas.width, resolution.width)?;
    let (y0, y1) = axis_span(bbox.y, bbox.h, canvas.height, resolution.height)?;
    Some((x0, x1, y0, y1))
}

/// A 0/1 mask on a cell grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[(v * self.width + u) as usize]
    }

    pub fn ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Builds a mask from row-major bits.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(
            bits.len() as u64,
            width as u64 * height as u64,
            "bit count must match the grid"
        );
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    /// All-ones mask.
    pub fn full(resolution: Canvas) -> Self {
        BinaryMask {
            width: resolution.width,
            height: resolution.height,
            bits: vec![true; resolution.cells() as usize],
        }
    }
}

/// Rasterize `bbox` (at `canvas` scale) onto a grid of `resolution` cells.
///
/// A cell is inside exactly when its center maps into the box, so a
/// same-resolution mask reproduces the box's cells verbatim and a rescaled
/// mask covers the proportionally corresponding region.
pub fn indicator_mask(bbox: &BBox, canvas: Canvas, resolution: Canvas) -> BinaryMask {
    let mut bits = vec![false; resolution.cells() as usize];
    if let Some((x0, x1, y0, y1)) = scaled_span(bbox, canvas, resolution) {
        for v in y0..=y1 {
            for u in x0..=x1 {
                bits[(v * resolution.width + u) as usize] = true;
            }
        }
    }
    BinaryMask {
        width: resolution.width,
        height: resolution.height,
        bits,
    }
}

/// Tightest box covering every sufficiently hot cell of an attention map.
///
/// The threshold interpolates the map's value range: a cell survives when
/// `value >= min + quantile·(max - min)` and `value > 0`. With `quantile = 1`
/// only maximal cells survive; with `quantile = 0` every positive cell does.
/// An all-zero map (nothing to extract) is an error, as is a negative or
/// non-finite map or a quantile outside `[0, 1]`.
pub fn bbox_from_attention(map: &Grid, quantile: f64) -> Result<BBox, GeometryError> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(GeometryError::InvalidAttention(format!(
            "quantile {quantile} outside [0, 1]"
        )));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in map.data() {
        if !v.is_finite() || v < 0.0 {
            return Err(GeometryError::InvalidAttention(String::from(
                "map values must be finite and non-negative",
            )));
        }
        min = min.min(v);
        max = max.max(v);
    }
    if map.data().is_empty() || max <= 0.0 {
        return Err(GeometryError::EmptyAttention);
    }
    let threshold = min + quantile * (max - min);
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for v in 0..map.height() {
        for u in 0..map.width() {
            let val = map.get(u, v);
            if val >= threshold && val > 0.0 {
                bounds = Some(match bounds {
                    None => (u, u, v, v),
                    Some((x0, x1, y0, y1)) => (x0.min(u), x1.max(u), y0.min(v), y1.max(v)),
                });
            }
        }
    }
    match bounds {
        Some((x0, x1, y0, y1)) => Ok(BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)),
        None => Err(GeometryError::EmptyAttention),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C64: Canvas = Canvas::new(64, 64);

    // ── Frozen first-object regions ──────────────────────────────────────

    #[test]
    fn first_left_full_canvas_when_single() {
        assert_eq!(
            rough_mask_first(PositionChoice::Left, 1, C64).unwrap(),
            BBox::new(0, 0, 64, 64)
        );
    }

    #[test]
    fn first_left_half_canvas_when_two() {
        assert_eq!(
            rough_mask_first(PositionChoice::Left, 2, C64).unwrap(),
            BBox::new(0, 0, 32, 64)
        );
    }

    #[test]
    fn first_bottom_half_canvas_when_two() {
        assert_eq!(
            rough_mask_first(PositionChoice::Bottom, 2, C64).unwrap(),
            BBox::new(0, 32, 64, 32)
        );
    }

    #[test]
    fn first_bottom_single_is_full_canvas() {
        assert_eq!(
            rough_mask_first(PositionChoice::Bottom, 1, C64).unwrap(),
            BBox::new(0, 0, 64, 64)
        );
    }

    #[test]
    fn first_rejects_zero_count_and_later_positions() {
        assert!(matches!(
            rough_mask_first(PositionChoice::Left, 0, C64),
            Err(GeometryError::InvalidPlan(_))
        ));
        assert!(matches!(
            rough_mask_first(PositionChoice::Right, 1, C64),
            Err(GeometryError::InvalidPlan(_))
        ));
        assert!(matches!(
            rough_mask_first(PositionChoice::Top, 2, C64),
            Err(GeometryError::InvalidPlan(_))
        ));
    }

    #[test]
    fn first_left_exhausts_when_strip_degenerates() {
        assert!(matches!(
            rough_mask_first(PositionChoice::Left, 6, Canvas::new(4, 4)),
            Err(GeometryError::LayoutExhausted { .. })
        ));
    }

    // ── Frozen stacked regions ───────────────────────────────────────────

    #[test]
    fn next_right_takes_remaining_half() {
        let prev = BBox::new(0, 0, 32, 64);
        assert_eq!(
            rough_mask_next(PositionChoice::Right, 1, &prev, C64).unwrap(),
            BBox::new(32, 0, 32, 64)
        );
    }

    #[test]
    fn next_top_splits_headroom() {
        let prev = BBox::new(0, 32, 64, 32);
        assert_eq!(
            rough_mask_next(PositionChoice::Top, 1, &prev, C64).unwrap(),
            BBox::new(0, 0, 64, 32)
        );
        assert_eq!(
            rough_mask_next(PositionChoice::Top, 2, &prev, C64).unwrap(),
            BBox::new(0, 16, 64, 16)
        );
    }

    #[test]
    fn next_rejects_first_positions_and_exhaustion() {
        let prev = BBox::new(0, 0, 64, 64);
        assert!(matches!(
            rough_mask_next(PositionChoice::Left, 1, &prev, C64),
            Err(GeometryError::InvalidPlan(_))
        ));
        assert!(matches!(
            rough_mask_next(PositionChoice::Right, 1, &prev, C64),
            Err(GeometryError::LayoutExhausted { .. })
        ));
        let flush_top = BBox::new(0, 0, 64, 32);
        assert!(matches!(
            rough_mask_next(PositionChoice::Top, 1, &flush_top, C64),
            Err(GeometryError::LayoutExhausted { .. })
        ));
    }

    #[test]
    fn next_rejects_previous_box_outside_canvas() {
        let prev = BBox::new(40, 0, 32, 64);
        assert!(matches!(
            rough_mask_next(PositionChoice::Right, 1, &prev, C64),
            Err(GeometryError::InvalidPlan(_))
        ));
    }

    // ── Frozen overlap candidates ────────────────────────────────────────

    #[test]
    fn overlap_right_half_ratio() {
        let prev = BBox::new(0, 0, 32, 64);
        let c = overlap_candidate(PositionChoice::Right, 1, &prev, C64, 0.5).unwrap();
        assert_eq!(c.bbox, BBox::new(16, 0, 48, 64));
        assert!(!c.clamped);
    }

    #[test]
    fn overlap_top_three_tenths() {
        let prev = BBox::new(0, 32, 64, 32);
        let c = overlap_candidate(PositionChoice::Top, 1, &prev, C64, 0.3).unwrap();
        assert_eq!(c.bbox, BBox::new(0, 0, 64, 42));
        assert!(!c.clamped);
    }

    #[test]
    fn overlap_zero_ratio_equals_plain_stacking() {
        let prev = BBox::new(0, 0, 32, 64);
        let c = overlap_candidate(PositionChoice::Right, 1, &prev, C64, 0.0).unwrap();
        assert_eq!(
            c.bbox,
            rough_mask_next(PositionChoice::Right, 1, &prev, C64).unwrap()
        );
        assert!(!c.clamped);
    }

    #[test]
    fn overlap_rejects_bad_ratio() {
        let prev = BBox::new(0, 0, 32, 64);
        for r in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                overlap_candidate(PositionChoice::Right, 1, &prev, C64, r),
                Err(GeometryError::InvalidRatio(_))
            ));
        }
    }

    #[test]
    fn overlap_clamps_rounding_spill() {
        // prev nearly spans the width; rounding the overlap part up pushes
        // the right edge one past the canvas, which must clamp and flag.
        let canvas = Canvas::new(10, 8);
        let prev = BBox::new(0, 0, 9, 8);
        let c = overlap_candidate(PositionChoice::Right, 1, &prev, canvas, 0.5).unwrap();
        assert!(c.bbox.right() <= canvas.width);
        assert!(c.clamped);
    }

    // ── Indicator masks ──────────────────────────────────────────────────

    #[test]
    fn indicator_same_resolution_is_exact() {
        let bbox = BBox::new(3, 5, 7, 2);
        let canvas = Canvas::new(16, 16);
        let mask = indicator_mask(&bbox, canvas, canvas);
        assert_eq!(mask.ones(), bbox.area());
        for v in 0..16 {
            for u in 0..16 {
                assert_eq!(mask.get(u, v), bbox.contains_cell(u, v));
            }
        }
    }

    #[test]
    fn indicator_downscaled_left_half() {
        // Left half of a 64x64 canvas on a 16x16 grid: columns 0..=7.
        let mask = indicator_mask(&BBox::new(0, 0, 32, 64), C64, Canvas::new(16, 16));
        assert_eq!(mask.ones(), 8 * 16);
        for v in 0..16 {
            for u in 0..16 {
                assert_eq!(mask.get(u, v), u < 8, "cell ({u}, {v})");
            }
        }
    }

    #[test]
    fn indicator_thin_box_can_vanish_at_coarse_resolution() {
        // A 1-cell sliver between coarse cell centers rasterizes to nothing.
        let mask = indicator_mask(&BBox::new(0, 0, 1, 64), C64, Canvas::new(8, 8));
        assert_eq!(mask.ones(), 0);
    }

    // ── Attention-box extraction ─────────────────────────────────────────

    #[test]
    fn extraction_single_hot_cell() {
        let mut map = Grid::zeros(16, 16);
        map.set(5, 7, 5.0);
        assert_eq!(
            bbox_from_attention(&map, 0.9).unwrap(),
            BBox::new(5, 7, 1, 1)
        );
    }

    #[test]
    fn extraction_uniform_map_gives_full_canvas() {
        let map = Grid::from_fn(16, 16, |_, _| 0.25);
        assert_eq!(
            bbox_from_attention(&map, 0.75).unwrap(),
            BBox::new(0, 0, 16, 16)
        );
    }

    #[test]
    fn extraction_planted_rectangle() {
        let rect = BBox::new(4, 2, 6, 9);
        let map = Grid::from_fn(16, 16, |u, v| if rect.contains_cell(u, v) { 1.0 } else { 0.1 });
        assert_eq!(bbox_from_attention(&map, 0.5).unwrap(), rect);
    }

    #[test]
    fn extraction_spans_two_clusters() {
        let mut map = Grid::zeros(16, 16);
        map.set(1, 1, 1.0);
        map.set(12, 9, 1.0);
        assert_eq!(
            bbox_from_attention(&map, 0.5).unwrap(),
            BBox::new(1, 1, 12, 9)
        );
    }

    #[test]
    fn extraction_rejects_empty_and_invalid_maps() {
        assert!(matches!(
            bbox_from_attention(&Grid::zeros(8, 8), 0.75),
            Err(GeometryError::EmptyAttention)
        ));
        let mut negative = Grid::zeros(4, 4);
        negative.set(0, 0, -1.0);
        assert!(matches!(
            bbox_from_attention(&negative, 0.75),
            Err(GeometryError::InvalidAttention(_))
        ));
        let uniform = Grid::from_fn(4, 4, |_, _| 1.0);
        assert!(matches!(
            bbox_from_attention(&uniform, 1.5),
            Err(GeometryError::InvalidAttention(_))
        ));
    }

    // ── Properties ───────────────────────────────────────────────────────

    fn arb_canvas() -> impl Strategy<Value = Canvas> {
        (8u32..=96, 8u32..=96).prop_map(|(w, h)| Canvas::new(w, h))
    }

    proptest! {
        #[test]
        fn first_region_stays_inside_canvas(canvas in arb_canvas(), num in 1u32..=6,
                                            bottom in proptest::bool::ANY) {
            let opt = if bottom { PositionChoice::Bottom } else { PositionChoice::Left };
            if let Ok(b) = rough_mask_first(opt, num, canvas) {
                prop_assert!(canvas.contains(&b));
                if bottom {
                    prop_assert_eq!(b.bottom(), canvas.height); // flush with the bottom edge
                    prop_assert_eq!((b.x, b.w), (0, canvas.width));
                } else {
                    prop_assert_eq!((b.x, b.y, b.h), (0, 0, canvas.height));
                }
            }
        }

        #[test]
        fn stacked_region_is_disjoint_and_flush(canvas in arb_canvas(), num in 1u32..=6,
                                                first_num in 1u32..=6, top in proptest::bool::ANY) {
            let (first_opt, opt) = if top {
                (PositionChoice::Bottom, PositionChoice::Top)
            } else {
                (PositionChoice::Left, PositionChoice::Right)
            };
            let Ok(prev) = rough_mask_first(first_opt, first_num, canvas) else { return Ok(()) };
            if let Ok(next) = rough_mask_next(opt, num, &prev, canvas) {
                prop_assert!(canvas.contains(&next));
                prop_assert!(next.intersect(&prev).is_none());
                if top {
                    prop_assert_eq!(next.bottom(), prev.y); // flush below-edge against prev's top
                } else {
                    prop_assert_eq!(next.x, prev.right());
                }
            }
        }

        #[test]
        fn repeated_right_stacking_tiles_width_exactly(canvas in arb_canvas(), start in 2u32..=6) {
            // Counts num, num-1, ..., 1: the strips partition the width.
            let mut boxes = alloc::vec::Vec::new();
            let mut prev: Option<BBox> = None;
            let mut ok = true;
            for num in (1..=start).rev() {
                let result = match &prev {
                    None => rough_mask_first(PositionChoice::Left, num, canvas),
                    Some(p) => rough_mask_next(PositionChoice::Right, num, p, canvas),
                };
                match result {
                    Ok(b) => {
                        boxes.push(b);
                        prev = Some(b);
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let total: u32 = boxes.iter().map(|b| b.w).sum();
                prop_assert_eq!(total, canvas.width);
                for pair in boxes.windows(2) {
                    prop_assert_eq!(pair[1].x, pair[0].right());
                }
            }
        }

        #[test]
        fn overlap_candidate_bites_r_of_prev(canvas in arb_canvas(), num in 1u32..=6,
                                             first_num in 2u32..=6, r in 0.0f64..0.95,
                                             top in proptest::bool::ANY) {
            let (first_opt, opt) = if top {
                (PositionChoice::Bottom, PositionChoice::Top)
            } else {
                (PositionChoice::Left, PositionChoice::Right)
            };
            let Ok(prev) = rough_mask_first(first_opt, first_num, canvas) else { return Ok(()) };
            if let Ok(c) = overlap_candidate(opt, num, &prev, canvas, r) {
                prop_assert!(canvas.contains(&c.bbox));
                let along = match c.bbox.intersect(&prev) {
                    Some(i) => if top { i.h } else { i.w },
                    None => 0,
                } as f64;
                let expected = if top { prev.h } else { prev.w } as f64 * r;
                prop_assert!((along - expected).abs() <= 1.0,
                             "overlap {along} vs expected {expected}");
            }
        }

        #[test]
        fn zero_ratio_always_reduces_to_plain_stacking(canvas in arb_canvas(), num in 1u32..=6,
                                                       first_num in 1u32..=6,
                                                       top in proptest::bool::ANY) {
            let (first_opt, opt) = if top {
                (PositionChoice::Bottom, PositionChoice::Top)
            } else {
                (PositionChoice::Left, PositionChoice::Right)
            };
            let Ok(prev) = rough_mask_first(first_opt, first_num, canvas) else { return Ok(()) };
            let plain = rough_mask_next(opt, num, &prev, canvas);
            let candidate = overlap_candidate(opt, num, &prev, canvas, 0.0);
            match (plain, candidate) {
                (Ok(b), Ok(c)) => {
                    prop_assert_eq!(b, c.bbox);
                    prop_assert!(!c.clamped);
                }
                (Err(_), Err(_)) => {}
                (p, c) => prop_assert!(false, "diverged: {p:?} vs {c:?}"),
            }
        }

        #[test]
        fn indicator_matches_center_rule(bx in 0u32..48, by in 0u32..48,
                                         bw in 1u32..=16, bh in 1u32..=16,
                                         rw in 4u32..=32, rh in 4u32..=32) {
            let canvas = Canvas::new(64, 64);
            let bbox = BBox::new(bx, by, bw.min(64 - bx), bh.min(64 - by));
            let res = Canvas::new(rw, rh);
            let mask = indicator_mask(&bbox, canvas, res);
            for v in 0..rh {
                for u in 0..rw {
                    let cx = (u as f64 + 0.5) * 64.0 / rw as f64;
                    let cy = (v as f64 + 0.5) * 64.0 / rh as f64;
                    let inside = cx >= bbox.x as f64 && cx < bbox.right() as f64
                        && cy >= bbox.y as f64 && cy < bbox.bottom() as f64;
                    prop_assert_eq!(mask.get(u, v), inside, "cell ({}, {})", u, v);
                }
            }
        }

        #[test]
        fn aligned_indicator_area_is_exact(cols in 1u32..=8, rows in 1u32..=8,
                                           col0 in 0u32..8, row0 in 0u32..8) {
            // Boxes aligned to a 4x-coarser grid rescale with exact area.
            let canvas = Canvas::new(64, 64);
            let res = Canvas::new(16, 16);
            let cols = cols.min(16 - col0);
            let rows = rows.min(16 - row0);
            let bbox = BBox::new(col0 * 4, row0 * 4, cols * 4, rows * 4);
            let mask = indicator_mask(&bbox, canvas, res);
            prop_assert_eq!(mask.ones(), cols as u64 * rows as u64);
        }

        #[test]
        fn extraction_box_covers_argmax(w in 2u32..=24, h in 2u32..=24,
                                        seed in 0u64..1000, q in 0.0f64..=1.0) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let map = Grid::from_fn(w, h, |_, _| rng.next_f64());
            if let Ok(b) = bbox_from_attention(&map, q) {
                // The maximal cell always survives any threshold.
                let mut best = (0u32, 0u32);
                let mut best_val = f64::NEG_INFINITY;
                for v in 0..h {
                    for u in 0..w {
                        if map.get(u, v) > best_val {
                            best_val = map.get(u, v);
                            best = (u, v);
                        }
                    }
                }
                prop_assert!(b.contains_cell(best.0, best.1));
                prop_assert!(Canvas::new(w, h).contains(&b));
            }
        }
    }
}
