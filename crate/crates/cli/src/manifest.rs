//! The run manifest: one JSON document that records everything a run did.
//!
//! Manifests are written with stable key order (struct declaration order)
//! and no timestamps or absolute paths, so two runs with the same settings
//! produce byte-identical files; wall-clock timing lives in a sibling
//! `timing.json` instead. Artifact paths are relative to the run directory.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use easel_core::feedback::RetryPolicy;
use easel_core::guidance::GuidanceConfig;
use easel_core::pipeline::{PipelineFailure, StageReport};
use easel_core::planner::Exchange;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "easel-run/1";
pub const STATUS_COMPLETE: &str = "complete";
pub const STATUS_FAILED: &str = "failed";

/// Everything needed to re-execute the run, including port specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSnapshot {
    pub prompt: String,
    pub seed: u64,
    pub guidance: GuidanceConfig,
    pub overlap_ratios: Vec<f64>,
    pub retry: RetryPolicy,
    pub backend: String,
    pub planner: String,
    pub checker: String,
    pub scorer: String,
    pub save_intermediates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageArtifacts {
    pub image: String,
    pub masks: String,
    pub feedback: String,
    /// Present only for runs recorded with `--save-intermediates`.
    pub trajectory: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub report: StageReport,
    pub artifacts: StageArtifacts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub status: String,
    pub config: ConfigSnapshot,
    pub objects: Vec<String>,
    pub transcript: Vec<Exchange>,
    pub stages: Vec<StageDoc>,
    pub final_image: Option<String>,
    pub failure: Option<PipelineFailure>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        json
    }
}

pub fn load(path: &Path) -> Result<Manifest> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    validate(&manifest).map_err(|why| {
        anyhow::anyhow!("{}: manifest failed validation: {why}", path.display())
    })?;
    Ok(manifest)
}

/// Structural checks beyond what deserialization enforces. A loaded manifest
/// that passes here is safe to replay or report on.
pub fn validate(m: &Manifest) -> Result<(), String> {
    if m.format != FORMAT {
        return Err(format!("unknown format {:?}, expected {FORMAT:?}", m.format));
    }
    match m.status.as_str() {
        STATUS_COMPLETE => {
            if let Some(f) = &m.failure {
                return Err(format!("complete run carries a failure: {}", f.message));
            }
            if m.stages.len() != m.objects.len() {
                return Err(format!(
                    "complete run has {} stages for {} objects",
                    m.stages.len(),
                    m.objects.len()
                ));
            }
            if m.final_image.is_none() {
                return Err(String::from("complete run has no final image"));
            }
        }
        STATUS_FAILED => {
            if m.failure.is_none() {
                return Err(String::from("failed run has no failure record"));
            }
            if m.stages.len() > m.objects.len() {
                return Err(String::from("more stages than planned objects"));
            }
        }
        other => return Err(format!("unknown status {other:?}")),
    }
    m.config.guidance.validate().map_err(|e| e.to_string())?;
    m.config.retry.validate()?;
    if m.config.prompt.trim().is_empty() {
        return Err(String::from("empty prompt"));
    }
    for (i, stage) in m.stages.iter().enumerate() {
        let n = (i + 1) as u32;
        if stage.report.stage != n {
            return Err(format!(
                "stage entry {i} is numbered {} (stages must be 1..N in order)",
                stage.report.stage
            ));
        }
        if stage.report.object != m.objects[i] {
            return Err(format!(
                "stage {n} object {:?} disagrees with the plan {:?}",
                stage.report.object, m.objects[i]
            ));
        }
        if stage.report.attempts.is_empty() {
            return Err(format!("stage {n} records no attempts"));
        }
        if stage.report.chosen_attempt as usize >= stage.report.attempts.len() {
            return Err(format!(
                "stage {n} chose attempt {} of {}",
                stage.report.chosen_attempt,
                stage.report.attempts.len()
            ));
        }
        if m.config.save_intermediates && stage.artifacts.trajectory.is_none() {
            return Err(format!(
                "stage {n} is missing its trajectory despite save_intermediates"
            ));
        }
        for path in [&stage.artifacts.image, &stage.artifacts.masks, &stage.artifacts.feedback]
            .into_iter()
            .chain(stage.artifacts.trajectory.as_ref())
        {
            if Path::new(path).is_absolute() {
                return Err(format!("stage {n} artifact path {path:?} is absolute"));
            }
        }
    }
    Ok(())
}
