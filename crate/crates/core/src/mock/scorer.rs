//! Deterministic image-text scorer for candidate selection tests.
//!
//! Scores a decoded image by how close the guided token's attention centroid
//! sits to a configured target point: `-(dx^2 + dy^2)` in cell units, so the
//! maximum score 0 means the centroid is exactly on target and one cell of
//! displacement costs exactly 1. The guided token is the head of the leading
//! object in the stage text, mirroring how stages pick their token.

use alloc::format;
use alloc::string::String;

use crate::latent::DecodedImage;
use crate::ports::{PortError, ScorerPort};

#[derive(Clone, Copy, Debug)]
pub struct MockScorer {
    target_x: f64,
    target_y: f64,
}

impl MockScorer {
    /// Target point in cell-index coordinates of the decoded image.
    pub fn new(target_x: f64, target_y: f64) -> Self {
        MockScorer { target_x, target_y }
    }

    /// Target at the exact center of a `width x height` image.
    pub fn centered(width: u32, height: u32) -> Self {
        MockScorer {
            target_x: (width as f64 - 1.0) / 2.0,
            target_y: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Index of the leading object's head token within the stage text: the
    /// last word before the first " and ", or of the whole text.
    fn head_index(text: &str) -> Result<usize, PortError> {
        let lead = match text.find(" and ") {
            Some(pos) => &text[..pos],
            None => text,
        };
        let words = lead.split_whitespace().count();
        if words == 0 {
            return Err(PortError::Contract(String::from(
                "scorer given empty stage text",
            )));
        }
        Ok(words - 1)
    }
}

impl ScorerPort for MockScorer {
    fn score(&self, image: &DecodedImage, text: &str) -> Result<f64, PortError> {
        let k = Self::head_index(text)?;
        let (_, plane) = image.token_planes.get(k).ok_or_else(|| {
            PortError::Contract(format!(
                "decoded image has {} token planes, scorer needs index {k}",
                image.token_planes.len()
            ))
        })?;
        let (cx, cy) = plane.centroid().ok_or_else(|| {
            PortError::Contract(String::from(
                "token plane has no mass to take a centroid of",
            ))
        })?;
        let dx = cx - self.target_x;
        let dy = cy - self.target_y;
        Ok(-(dx * dx + dy * dy))
    }
}
