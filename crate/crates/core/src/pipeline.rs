//! The end-to-end progressive generation pipeline.
//!
//! A run decomposes the prompt into an ordered object list, then generates
//! one object per stage: plan its coarse region, run the guided diffusion
//! loop (branching into per-ratio candidates when the planner predicts
//! overlap), check the decoded result with a vision-language port, and retry
//! under escalated guidance on failure. Stage `n` combines against stage
//! `n-1`'s stored trajectory and plans against its extracted precise mask,
//! so the composite accumulates one object at a time. The final image is the
//! last stage's decode.
//!
//! Everything observable about a run lands in a [`PipelineRun`]: the object
//! list, the full planner transcript, one [`StageReport`] per completed
//! stage, the heavyweight [`StageRecord`]s, and a failure status when a
//! stage could not complete. Failures never panic the orchestrator; partial
//! results are kept so callers can persist what happened.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::candidates::{generate_candidates, select_best, CandidateError};
use crate::feedback::{
    build_stage_questions, run_stage_with_feedback, FeedbackError, FeedbackReport, RetryPolicy,
};
use crate::geometry::{
    rough_mask_first, rough_mask_next, BBox, GeometryError, PositionChoice,
};
use crate::guidance::{
    single_object_diffusion, GuidanceConfig, GuidanceError, StageFailure, StageInputs, StageRecord,
};
use crate::latent::{DecodedImage, LatentState};
use crate::planner::{head_token_index, make_subprompt, Planner, PlannerError, PlannerTranscript};
use crate::ports::{DenoiserPort, ScorerPort, TextCompletionPort, VlmPort};

/// Everything a run needs besides the ports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub prompt: String,
    pub seed: u64,
    pub guidance: GuidanceConfig,
    /// Candidate overlap ratios tried when overlap is predicted.
    pub overlap_ratios: Vec<f64>,
    pub retry: RetryPolicy,
}

impl PipelineConfig {
    pub fn new(prompt: &str) -> Self {
        PipelineConfig {
            prompt: prompt.to_string(),
            seed: 0,
            guidance: GuidanceConfig::default(),
            overlap_ratios: alloc::vec![0.1, 0.3, 0.5],
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.prompt.trim().is_empty() {
            return Err(String::from("prompt is empty"));
        }
        self.guidance.validate().map_err(|e| format!("{e}"))?;
        self.retry.validate()?;
        if self.overlap_ratios.is_empty() {
            return Err(String::from("at least one overlap ratio is required"));
        }
        for &r in &self.overlap_ratios {
            if !(0.0..1.0).contains(&r) {
                return Err(format!("overlap ratio {r} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

/// The model endpoints a run talks to.
pub struct Ports<'a> {
    pub planner: &'a mut dyn TextCompletionPort,
    pub denoiser: &'a dyn DenoiserPort,
    pub checker: &'a mut dyn VlmPort,
    pub scorer: &'a dyn ScorerPort,
}

/// One candidate's row in the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    /// Which feedback attempt this candidate belonged to.
    pub attempt: u32,
    pub ratio: f64,
    pub bbox: BBox,
    pub clamped: bool,
    /// Absent when selection was trivial or the run was dropped.
    pub score: Option<f64>,
    pub chosen: bool,
    /// Failure note when the candidate's run was dropped.
    pub dropped: Option<String>,
}

/// The serializable summary of one completed stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// 1-based stage number.
    pub stage: u32,
    pub object: String,
    pub subprompt: String,
    /// Guided token index within the subprompt.
    pub token: u32,
    pub position: PositionChoice,
    pub count: u32,
    pub overlap_predicted: bool,
    pub overlap_ambiguous: bool,
    /// Region the kept run was guided into.
    pub rough_mask: BBox,
    pub candidates: Vec<CandidateReport>,
    pub chosen_ratio: Option<f64>,
    /// One report per feedback attempt, in order.
    pub attempts: Vec<FeedbackReport>,
    pub chosen_attempt: u32,
    pub passed: bool,
    pub precise_mask: BBox,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineFailure {
    /// Stage that failed, absent for pre-stage failures.
    pub stage: Option<u32>,
    pub message: String,
}

/// Everything a run produced. `stages` and `records` are parallel; on
/// failure they hold the stages completed before the error.
pub struct PipelineRun {
    pub objects: Vec<String>,
    pub transcript: PlannerTranscript,
    pub stages: Vec<StageReport>,
    pub records: Vec<StageRecord>,
    pub failure: Option<PipelineFailure>,
    /// Trajectory of the failed stage attempt, when one exists.
    pub partial_trajectory: Option<Vec<LatentState>>,
}

impl PipelineRun {
    pub fn final_image(&self) -> Option<&DecodedImage> {
        self.records.last().map(|r| &r.decoded)
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Stage-runner errors threaded through the feedback loop.
#[derive(Debug)]
enum AttemptError {
    Stage(StageFailure),
    Candidates(CandidateError),
}

impl core::fmt::Display for AttemptError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AttemptError::Stage(e) => write!(f, "{e}"),
            AttemptError::Candidates(e) => write!(f, "{e}"),
        }
    }
}

/// Runs the guided loop, downgrading an empty-attention precise mask to the
/// planned region instead of failing the stage.
fn stage_with_mask_fallback(
    denoiser: &dyn DenoiserPort,
    inputs: &StageInputs<'_>,
    cfg: &GuidanceConfig,
    attempt: u32,
    notes: &mut Vec<String>,
) -> Result<StageRecord, StageFailure> {
    match single_object_diffusion(denoiser, inputs, cfg) {
        Err(f)
            if matches!(
                f.error,
                GuidanceError::Geometry(GeometryError::EmptyAttention)
            ) && f.trajectory.len() == cfg.steps as usize + 1 =>
        {
            let final_latent = f.trajectory.last().expect("trajectory is complete here");
            let decoded = match denoiser.decode(final_latent, inputs.subprompt) {
                Ok(d) => d,
                Err(e) => {
                    return Err(StageFailure {
                        error: e.into(),
                        trajectory: f.trajectory,
                    })
                }
            };
            notes.push(format!(
                "attempt {attempt}: attention was empty, precise mask fell back to the planned region"
            ));
            Ok(StageRecord {
                stage: inputs.stage,
                subprompt: String::from(inputs.subprompt),
                token: inputs.token,
                rough_mask: inputs.rough_mask,
                trajectory: f.trajectory,
                precise_mask: inputs.rough_mask,
                decoded,
            })
        }
        other => other,
    }
}

/// Executes the full pipeline. Never panics on port or planning trouble:
/// errors land in [`PipelineRun::failure`] with everything completed so far.
pub fn run_pipeline(config: &PipelineConfig, ports: Ports<'_>) -> PipelineRun {
    let Ports {
        planner,
        denoiser,
        checker,
        scorer,
    } = ports;
    let mut planner = Planner::new(planner);
    let mut objects: Vec<String> = Vec::new();
    let mut stages: Vec<StageReport> = Vec::new();
    let mut records: Vec<StageRecord> = Vec::new();
    let mut failure: Option<PipelineFailure> = None;
    let mut partial_trajectory: Option<Vec<LatentState>> = None;

    'run: {
        if let Err(message) = config.validate() {
            failure = Some(PipelineFailure {
                stage: None,
                message,
            });
            break 'run;
        }
        objects = match planner.decompose(&config.prompt) {
            Ok(list) => list,
            Err(e) => {
                failure = Some(PipelineFailure {
                    stage: None,
                    message: format!("decomposition failed: {e}"),
                });
                break 'run;
            }
        };
        let canvas = denoiser.canvas();

        for idx in 0..objects.len() {
            let n = (idx + 1) as u32;
            let object = objects[idx].as_str();
            let placed = &objects[..idx];
            let mut notes: Vec<String> = Vec::new();

            // Plan the coarse region.
            let plan = if idx == 0 {
                planner.plan_first(&config.prompt, object)
            } else {
                match planner.plan_next(&config.prompt, placed, object) {
                    Err(PlannerError::Position { last_reply }) => {
                        notes.push(format!(
                            "position defaulted to right (planner replied {last_reply:?})"
                        ));
                        planner
                            .plan_next_count(&config.prompt, placed, PositionChoice::Right)
                            .map(|count| (PositionChoice::Right, count))
                    }
                    other => other,
                }
            };
            let (position, count) = match plan {
                Ok(pc) => pc,
                Err(e) => {
                    failure = Some(PipelineFailure {
                        stage: Some(n),
                        message: format!("planning failed: {e}"),
                    });
                    break 'run;
                }
            };

            let prev = records.last();
            let prev_precise = prev.map(|r| r.precise_mask);
            let rough = match prev_precise {
                None => rough_mask_first(position, count, canvas),
                Some(ref pb) => rough_mask_next(position, count, pb, canvas),
            };
            let rough = match rough {
                Ok(b) => b,
                Err(e) => {
                    failure = Some(PipelineFailure {
                        stage: Some(n),
                        message: format!("mask planning failed: {e}"),
                    });
                    break 'run;
                }
            };

            let overlap = if idx == 0 {
                None
            } else {
                match planner.judge_overlap(&config.prompt, placed, object) {
                    Ok(j) => Some(j),
                    Err(e) => {
                        failure = Some(PipelineFailure {
                            stage: Some(n),
                            message: format!("overlap judgement failed: {e}"),
                        });
                        break 'run;
                    }
                }
            };
            let overlapping = overlap.as_ref().is_some_and(|j| j.overlapping);

            let subprompt = make_subprompt(&objects, idx + 1)
                .expect("stage index is always within the object list");
            let token = head_token_index(object);
            let prev_object = placed.last().map(String::as_str);
            let questions = build_stage_questions(
                object,
                prev_object,
                if idx > 0 { Some(position) } else { None },
            );

            let mut candidate_reports: Vec<CandidateReport> = Vec::new();
            let outcome = {
                let ratios = &config.overlap_ratios;
                let candidate_reports = &mut candidate_reports;
                let notes = &mut notes;
                let attempt_fn = |cfg: &GuidanceConfig, attempt: u32| {
                    if overlapping {
                        let prev_box = prev_precise.expect("overlap only on later stages");
                        let set = generate_candidates(
                            ratios,
                            position,
                            count,
                            &prev_box,
                            canvas,
                            |bbox, _r| {
                                let inputs = StageInputs {
                                    stage: n,
                                    subprompt: &subprompt,
                                    token,
                                    rough_mask: *bbox,
                                    seed: config.seed,
                                    prev,
                                };
                                stage_with_mask_fallback(denoiser, &inputs, cfg, attempt, notes)
                            },
                        )
                        .map_err(AttemptError::Candidates)?;
                        for d in &set.dropped {
                            candidate_reports.push(CandidateReport {
                                attempt,
                                ratio: d.ratio,
                                bbox: d.bbox,
                                clamped: false,
                                score: None,
                                chosen: false,
                                dropped: Some(d.reason.clone()),
                            });
                        }
                        let mut sel = select_best(set, &subprompt, scorer)
                            .map_err(AttemptError::Candidates)?;
                        for (i, c) in sel.candidates.iter().enumerate() {
                            candidate_reports.push(CandidateReport {
                                attempt,
                                ratio: c.ratio,
                                bbox: c.bbox,
                                clamped: c.clamped,
                                score: c.score,
                                chosen: i == sel.chosen,
                                dropped: None,
                            });
                        }
                        Ok(sel.candidates.swap_remove(sel.chosen).record)
                    } else {
                        let inputs = StageInputs {
                            stage: n,
                            subprompt: &subprompt,
                            token,
                            rough_mask: rough,
                            seed: config.seed,
                            prev,
                        };
                        stage_with_mask_fallback(denoiser, &inputs, cfg, attempt, notes)
                            .map_err(AttemptError::Stage)
                    }
                };
                run_stage_with_feedback(
                    &config.guidance,
                    &config.retry,
                    &questions,
                    checker,
                    attempt_fn,
                )
            };
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    if let FeedbackError::Stage(AttemptError::Stage(f)) = e {
                        failure = Some(PipelineFailure {
                            stage: Some(n),
                            message: format!("stage failed: {}", f.error),
                        });
                        partial_trajectory = Some(f.trajectory);
                    } else {
                        failure = Some(PipelineFailure {
                            stage: Some(n),
                            message: format!("stage failed: {e}"),
                        });
                    }
                    break 'run;
                }
            };

            let chosen_ratio = candidate_reports
                .iter()
                .find(|c| c.attempt == outcome.chosen_attempt && c.chosen)
                .map(|c| c.ratio);
            stages.push(StageReport {
                stage: n,
                object: object.to_string(),
                subprompt: subprompt.clone(),
                token,
                position,
                count,
                overlap_predicted: overlapping,
                overlap_ambiguous: overlap.as_ref().is_some_and(|j| j.ambiguous),
                rough_mask: outcome.record.rough_mask,
                candidates: candidate_reports,
                chosen_ratio,
                attempts: outcome.reports.clone(),
                chosen_attempt: outcome.chosen_attempt,
                passed: outcome.passed,
                precise_mask: outcome.record.precise_mask,
                notes,
            });
            records.push(outcome.record);
        }
    }

    PipelineRun {
        objects,
        transcript: planner.into_transcript(),
        stages,
        records,
        failure,
        partial_trajectory,
    }
}
