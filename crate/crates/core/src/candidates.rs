//! Overlap-candidate generation and score-based selection.
//!
//! When the planner predicts that the new object should overlap the previous
//! one, the stage is run once per configured overlap ratio, each run guided
//! into the candidate region that bites that fraction into the previous
//! object's box. A scorer then picks the best composite. A single surviving
//! candidate is returned without consulting the scorer at all, which keeps a
//! ratio-zero configuration behaviorally identical to the plain non-overlap
//! path.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{overlap_candidate, BBox, Canvas, GeometryError, PositionChoice};
use crate::guidance::{StageFailure, StageRecord};
use crate::ports::{PortError, ScorerPort};

#[derive(Clone, Debug)]
pub enum CandidateError {
    /// No ratios were configured, or none survived generation.
    NoCandidates {
        dropped: Vec<DroppedCandidate>,
    },
    /// A scorer returned NaN or infinity.
    BadScore {
        ratio: f64,
    },
    Geometry(GeometryError),
    Port(PortError),
}

impl core::fmt::Display for CandidateError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CandidateError::NoCandidates { dropped } => {
                if dropped.is_empty() {
                    write!(f, "no overlap ratios configured")
                } else {
                    write!(f, "all {} candidate runs failed", dropped.len())
                }
            }
            CandidateError::BadScore { ratio } => {
                write!(f, "scorer returned a non-finite score for ratio {ratio}")
            }
            CandidateError::Geometry(e) => write!(f, "{e}"),
            CandidateError::Port(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CandidateError {}

impl From<GeometryError> for CandidateError {
    fn from(e: GeometryError) -> Self {
        CandidateError::Geometry(e)
    }
}

impl From<PortError> for CandidateError {
    fn from(e: PortError) -> Self {
        CandidateError::Port(e)
    }
}

/// A stage run guided into one candidate region.
#[derive(Clone, Debug)]
pub struct StagedCandidate {
    pub ratio: f64,
    pub bbox: BBox,
    /// The raw geometry spilled over the canvas and was clipped.
    pub clamped: bool,
    pub record: StageRecord,
}

/// A candidate whose run failed; kept for the run report.
#[derive(Clone, Debug)]
pub struct DroppedCandidate {
    pub ratio: f64,
    pub bbox: BBox,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub candidates: Vec<StagedCandidate>,
    pub dropped: Vec<DroppedCandidate>,
}

/// Runs one stage per ratio against boxes biting into `prev` along
/// `direction`. A run failing is recorded and skipped; only a total wipeout
/// is an error.
pub fn generate_candidates<F>(
    ratios: &[f64],
    direction: PositionChoice,
    num: u32,
    prev: &BBox,
    canvas: Canvas,
    mut run: F,
) -> Result<CandidateSet, CandidateError>
where
    F: FnMut(&BBox, f64) -> Result<StageRecord, StageFailure>,
{
    if ratios.is_empty() {
        return Err(CandidateError::NoCandidates {
            dropped: Vec::new(),
        });
    }
    for &r in ratios {
        if !(0.0..1.0).contains(&r) {
            return Err(GeometryError::InvalidRatio(r).into());
        }
    }
    let mut candidates = Vec::new();
    let mut dropped = Vec::new();
    for &r in ratios {
        let cand = overlap_candidate(direction, num, prev, canvas, r)?;
        match run(&cand.bbox, r) {
            Ok(record) => candidates.push(StagedCandidate {
                ratio: r,
                bbox: cand.bbox,
                clamped: cand.clamped,
                record,
            }),
            Err(failure) => dropped.push(DroppedCandidate {
                ratio: r,
                bbox: cand.bbox,
                reason: format!("{}", failure.error),
            }),
        }
    }
    if candidates.is_empty() {
        return Err(CandidateError::NoCandidates { dropped });
    }
    Ok(CandidateSet {
        candidates,
        dropped,
    })
}

/// A candidate with the score it earned during selection, if any.
#[derive(Clone, Debug)]
pub struct ScoredCandidate {
    pub ratio: f64,
    pub bbox: BBox,
    pub clamped: bool,
    /// Absent when selection was trivial (a single candidate skips scoring).
    pub score: Option<f64>,
    pub record: StageRecord,
}

#[derive(Clone, Debug)]
pub struct Selection {
    /// Index of the chosen candidate within `candidates`.
    pub chosen: usize,
    pub candidates: Vec<ScoredCandidate>,
}

impl Selection {
    pub fn chosen_candidate(&self) -> &ScoredCandidate {
        &self.candidates[self.chosen]
    }
}

/// Picks the highest-scoring candidate for `text`, breaking ties toward the
/// smallest ratio. A singleton set wins by default and the scorer is never
/// consulted.
pub fn select_best(
    set: CandidateSet,
    text: &str,
    scorer: &dyn ScorerPort,
) -> Result<Selection, CandidateError> {
    if set.candidates.is_empty() {
        return Err(CandidateError::NoCandidates {
            dropped: set.dropped,
        });
    }
    if set.candidates.len() == 1 {
        let c = set.candidates.into_iter().next().unwrap();
        return Ok(Selection {
            chosen: 0,
            candidates: alloc::vec![ScoredCandidate {
                ratio: c.ratio,
                bbox: c.bbox,
                clamped: c.clamped,
                score: None,
                record: c.record,
            }],
        });
    }
    let mut scored = Vec::with_capacity(set.candidates.len());
    for c in set.candidates {
        let s = scorer.score(&c.record.decoded, text)?;
        if !s.is_finite() {
            return Err(CandidateError::BadScore { ratio: c.ratio });
        }
        scored.push(ScoredCandidate {
            ratio: c.ratio,
            bbox: c.bbox,
            clamped: c.clamped,
            score: Some(s),
            record: c.record,
        });
    }
    let mut chosen = 0;
    for (i, c) in scored.iter().enumerate().skip(1) {
        let best = &scored[chosen];
        let (s, b) = (c.score.unwrap(), best.score.unwrap());
        if s > b || (s == b && c.ratio < best.ratio) {
            chosen = i;
        }
    }
    Ok(Selection {
        chosen,
        candidates: scored,
    })
}
