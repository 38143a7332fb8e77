//! Per-stage consistency checking and the bounded retry loop.
//!
//! After a stage generates its object, a vision-language checker answers a
//! small questionnaire about the decoded image: is the object there, does
//! each attribute hold, and (after the first stage) does the planned spatial
//! relation hold. Any "no" triggers a re-run of the stage under a stronger
//! guidance configuration, up to a retry budget. If every attempt fails, the
//! attempt with the most "yes" answers is kept, earliest on ties.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::PositionChoice;
use crate::guidance::{GuidanceConfig, StageFailure, StageRecord};
use crate::latent::DecodedImage;
use crate::planner::{attribute_words, head_noun, parse_yes_no};
use crate::ports::{PortError, VlmPort};

/// One question and the checker's judged answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub question: String,
    pub answer: String,
    pub yes: bool,
    /// The answer was not a recognizable yes or no and was counted as no.
    pub ambiguous: bool,
}

/// Everything one inspection attempt produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    /// 0 for the base attempt, 1.. for retries.
    pub attempt: u32,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    /// Human-readable description of the config change this attempt ran
    /// under; absent for the base attempt.
    pub adjustment: Option<String>,
}

impl FeedbackReport {
    pub fn yes_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.yes).count()
    }
}

/// One retry's change to the guidance configuration, relative to the base
/// config (not the previous attempt). Shifts are signed fractions of the
/// step count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigDelta {
    pub lr_mult: f64,
    pub combine_until_shift: f64,
    pub guide_until_shift: f64,
}

/// Retry budget plus the per-attempt adjustment schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub schedule: Vec<ConfigDelta>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy::default_for(2)
    }
}

impl RetryPolicy {
    /// The stock escalation: retry `i` multiplies the rate by `1 + 0.5 i`,
    /// raises the combination threshold by `10 i` percent of the steps, and
    /// from the second retry on also lowers the guidance threshold by
    /// `10 (i - 1)` percent, extending how long guidance runs.
    pub fn default_for(max_retries: u32) -> Self {
        let schedule = (1..=max_retries)
            .map(|i| ConfigDelta {
                lr_mult: 1.0 + 0.5 * i as f64,
                combine_until_shift: 0.10 * i as f64,
                guide_until_shift: if i >= 2 { -0.10 * (i - 1) as f64 } else { 0.0 },
            })
            .collect();
        RetryPolicy {
            max_retries,
            schedule,
        }
    }

    /// Checks that the schedule can cover the budget and every delta is
    /// well-formed. Returns the problem as a message.
    pub fn validate(&self) -> Result<(), String> {
        if (self.schedule.len() as u64) < self.max_retries as u64 {
            return Err(format!(
                "schedule has {} deltas for {} retries",
                self.schedule.len(),
                self.max_retries
            ));
        }
        for (i, d) in self.schedule.iter().enumerate() {
            if !(d.lr_mult.is_finite() && d.lr_mult > 0.0) {
                return Err(format!(
                    "delta {} has non-positive rate multiplier {}",
                    i + 1,
                    d.lr_mult
                ));
            }
            if !d.combine_until_shift.is_finite() || !d.guide_until_shift.is_finite() {
                return Err(format!("delta {} has a non-finite threshold shift", i + 1));
            }
        }
        Ok(())
    }
}

/// `E` is whatever error the stage runner reports; the plain loop uses
/// [`StageFailure`], the orchestrator threads a wider error through.
#[derive(Debug)]
pub enum FeedbackError<E = StageFailure> {
    InvalidPolicy(String),
    /// A stage run failed unrecoverably.
    Stage(E),
    /// The checker port itself failed.
    Checker(PortError),
}

impl<E: core::fmt::Display> core::fmt::Display for FeedbackError<E> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FeedbackError::InvalidPolicy(msg) => write!(f, "invalid retry policy: {msg}"),
            FeedbackError::Stage(e) => write!(f, "{e}"),
            FeedbackError::Checker(e) => write!(f, "checker port: {e}"),
        }
    }
}

impl<E: core::fmt::Debug + core::fmt::Display> core::error::Error for FeedbackError<E> {}

fn shift_steps(frac: f64, steps: u32) -> i64 {
    let x = frac * steps as f64;
    if x >= 0.0 {
        (x + 0.5) as i64
    } else {
        -((-x + 0.5) as i64)
    }
}

/// Applies a delta to the base config, clamping thresholds into `[0, steps]`
/// so the result always validates.
pub fn apply_delta(base: &GuidanceConfig, delta: &ConfigDelta) -> GuidanceConfig {
    let mut cfg = base.clone();
    let lr = base.lr * delta.lr_mult;
    if lr.is_finite() && lr > 0.0 {
        cfg.lr = lr;
    }
    let clamp = |v: i64| v.clamp(0, base.steps as i64) as u32;
    cfg.combine_until = clamp(
        base.combine_until as i64 + shift_steps(delta.combine_until_shift, base.steps),
    );
    cfg.guide_until =
        clamp(base.guide_until as i64 + shift_steps(delta.guide_until_shift, base.steps));
    cfg
}

fn relation_phrase(position: PositionChoice) -> &'static str {
    match position {
        PositionChoice::Right => "on the right side of",
        PositionChoice::Left => "on the left side of",
        PositionChoice::Top => "on top of",
        PositionChoice::Bottom => "below",
    }
}

/// The questionnaire for one stage: presence of the object, one binding
/// question per attribute word, and the planned relation to the previous
/// object when there is one. Every question is answerable yes/no.
pub fn build_stage_questions(
    object: &str,
    prev_object: Option<&str>,
    position: Option<PositionChoice>,
) -> Vec<String> {
    let head = head_noun(object);
    let mut questions = Vec::new();
    questions.push(format!("Is there a {head} in the image?"));
    for attr in attribute_words(object) {
        questions.push(format!("Is the {head} {attr}?"));
    }
    if let (Some(prev), Some(pos)) = (prev_object, position) {
        let prev_head = head_noun(prev);
        questions.push(format!(
            "Is the {head} {} the {prev_head}?",
            relation_phrase(pos)
        ));
    }
    questions
}

/// Asks the checker every question about the decoded image. An answer that
/// does not lead with yes or no counts as no and is flagged ambiguous.
pub fn inspect_stage(
    image: &DecodedImage,
    questions: &[String],
    vlm: &mut dyn VlmPort,
) -> Result<FeedbackReport, PortError> {
    let mut verdicts = Vec::with_capacity(questions.len());
    for q in questions {
        let answer = vlm.ask(image, q)?;
        let parsed = parse_yes_no(&answer);
        verdicts.push(Verdict {
            question: q.clone(),
            answer,
            yes: parsed == Some(true),
            ambiguous: parsed.is_none(),
        });
    }
    let passed = verdicts.iter().all(|v| v.yes);
    Ok(FeedbackReport {
        attempt: 0,
        verdicts,
        passed,
        adjustment: None,
    })
}

fn describe_adjustment(base: &GuidanceConfig, adjusted: &GuidanceConfig) -> String {
    let mut parts: Vec<String> = Vec::new();
    if adjusted.lr != base.lr {
        parts.push(format!("lr {} -> {}", base.lr, adjusted.lr));
    }
    if adjusted.combine_until != base.combine_until {
        parts.push(format!(
            "combine-until {} -> {}",
            base.combine_until, adjusted.combine_until
        ));
    }
    if adjusted.guide_until != base.guide_until {
        parts.push(format!(
            "guide-until {} -> {}",
            base.guide_until, adjusted.guide_until
        ));
    }
    if parts.is_empty() {
        String::from("no effective change")
    } else {
        parts.join(", ")
    }
}

/// The stage kept after the retry loop, with the full attempt history.
#[derive(Clone, Debug)]
pub struct FeedbackOutcome {
    pub record: StageRecord,
    /// Index of the kept attempt.
    pub chosen_attempt: u32,
    /// One report per attempt actually run, in order.
    pub reports: Vec<FeedbackReport>,
    pub passed: bool,
}

/// Runs a stage, inspects it, and retries under the policy's escalating
/// configs until a pass or the budget runs out. `attempt_fn` receives the
/// config for the attempt and the attempt index, and runs the actual stage
/// (direct or candidate-selected).
pub fn run_stage_with_feedback<F, E>(
    base: &GuidanceConfig,
    policy: &RetryPolicy,
    questions: &[String],
    vlm: &mut dyn VlmPort,
    mut attempt_fn: F,
) -> Result<FeedbackOutcome, FeedbackError<E>>
where
    F: FnMut(&GuidanceConfig, u32) -> Result<StageRecord, E>,
{
    policy.validate().map_err(FeedbackError::InvalidPolicy)?;
    let mut records: Vec<StageRecord> = Vec::new();
    let mut reports: Vec<FeedbackReport> = Vec::new();
    for attempt in 0..=policy.max_retries {
        let (cfg, adjustment) = if attempt == 0 {
            (base.clone(), None)
        } else {
            let adjusted = apply_delta(base, &policy.schedule[attempt as usize - 1]);
            let description = describe_adjustment(base, &adjusted);
            (adjusted, Some(description))
        };
        let record = attempt_fn(&cfg, attempt).map_err(FeedbackError::Stage)?;
        let mut report =
            inspect_stage(&record.decoded, questions, vlm).map_err(FeedbackError::Checker)?;
        report.attempt = attempt;
        report.adjustment = adjustment;
        let passed = report.passed;
        records.push(record);
        reports.push(report);
        if passed {
            break;
        }
    }
    // First pass if any, otherwise the most-yes attempt, earliest on ties.
    let chosen = reports
        .iter()
        .position(|r| r.passed)
        .unwrap_or_else(|| {
            let mut best = 0;
            for (i, r) in reports.iter().enumerate().skip(1) {
                if r.yes_count() > reports[best].yes_count() {
                    best = i;
                }
            }
            best
        });
    let record = records.swap_remove(chosen);
    let passed = reports[chosen].passed;
    Ok(FeedbackOutcome {
        record,
        chosen_attempt: chosen as u32,
        reports,
        passed,
    })
}
