//! Writes a run directory: manifest, timing, decoded images, per-stage
//! artifacts, and (optionally) trajectory blobs.
//!
//! ```text
//! <out>/
//!   manifest.json     the full run record; byte-stable across equal runs
//!   timing.json       wall-clock timing, kept out of the manifest
//!   final.png         last stage's decode (complete runs only)
//!   stage_<n>/
//!     image.png       the stage's decoded composite
//!     masks.json      rough mask, precise mask, candidate boxes
//!     feedback.json   checker attempts and the chosen one
//!     trajectory.bin  every latent of the kept attempt (--save-intermediates)
//! ```
//!
//! A failed run still writes the manifest with whatever stages completed,
//! plus the failing stage's partial trajectory when one was recovered.

use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use easel_core::geometry::BBox;
use easel_core::pipeline::{CandidateReport, PipelineRun};
use serde::Serialize;

use crate::blob;
use crate::config::RunSettings;
use crate::imageio;
use crate::manifest::{
    ConfigSnapshot, Manifest, StageArtifacts, StageDoc, FORMAT, STATUS_COMPLETE, STATUS_FAILED,
};

#[derive(Serialize)]
struct MasksDoc<'a> {
    rough_mask: BBox,
    precise_mask: BBox,
    candidates: &'a [CandidateReport],
}

#[derive(Serialize)]
struct FeedbackDoc<'a> {
    attempts: &'a [easel_core::feedback::FeedbackReport],
    chosen_attempt: u32,
    passed: bool,
}

#[derive(Serialize)]
struct TimingDoc {
    total_ms: f64,
}

pub fn snapshot(settings: &RunSettings) -> ConfigSnapshot {
    ConfigSnapshot {
        prompt: settings.prompt.clone(),
        seed: settings.seed,
        guidance: settings.guidance.clone(),
        overlap_ratios: settings.overlap_ratios.clone(),
        retry: settings.retry.clone(),
        backend: settings.backend.clone(),
        planner: settings.planner.clone(),
        checker: settings.checker.clone(),
        scorer: settings.scorer.clone(),
        save_intermediates: settings.save_intermediates,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).expect("document serializes");
    json.push('\n');
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

/// Writes every artifact of `run` under `settings.out` and returns the
/// manifest that was recorded.
pub fn write_run(settings: &RunSettings, run: &PipelineRun, total: Duration) -> Result<Manifest> {
    let dir = &settings.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut stages = Vec::with_capacity(run.stages.len());
    for (report, record) in run.stages.iter().zip(&run.records) {
        let n = report.stage;
        let stage_dir = dir.join(format!("stage_{n}"));
        fs::create_dir_all(&stage_dir)
            .with_context(|| format!("creating {}", stage_dir.display()))?;

        let image_rel = format!("stage_{n}/image.png");
        let png = imageio::encode_luma_png(&record.decoded.luma)?;
        fs::write(dir.join(&image_rel), png)
            .with_context(|| format!("writing stage {n} image"))?;

        let masks_rel = format!("stage_{n}/masks.json");
        write_json(
            &dir.join(&masks_rel),
            &MasksDoc {
                rough_mask: report.rough_mask,
                precise_mask: report.precise_mask,
                candidates: &report.candidates,
            },
        )?;

        let feedback_rel = format!("stage_{n}/feedback.json");
        write_json(
            &dir.join(&feedback_rel),
            &FeedbackDoc {
                attempts: &report.attempts,
                chosen_attempt: report.chosen_attempt,
                passed: report.passed,
            },
        )?;

        let trajectory_rel = if settings.save_intermediates {
            let rel = format!("stage_{n}/trajectory.bin");
            blob::write_trajectory(&dir.join(&rel), n, &record.trajectory)?;
            Some(rel)
        } else {
            None
        };

        stages.push(StageDoc {
            report: report.clone(),
            artifacts: StageArtifacts {
                image: image_rel,
                masks: masks_rel,
                feedback: feedback_rel,
                trajectory: trajectory_rel,
            },
        });
    }

    // A failing stage may still have produced latents worth inspecting.
    if settings.save_intermediates {
        if let (Some(frames), Some(failure)) = (&run.partial_trajectory, &run.failure) {
            if let (Some(stage), false) = (failure.stage, frames.is_empty()) {
                let stage_dir = dir.join(format!("stage_{stage}"));
                fs::create_dir_all(&stage_dir)
                    .with_context(|| format!("creating {}", stage_dir.display()))?;
                blob::write_trajectory(
                    &stage_dir.join("trajectory.partial.bin"),
                    stage,
                    frames,
                )?;
            }
        }
    }

    let final_image = if run.succeeded() {
        let rel = String::from("final.png");
        let decoded = run
            .final_image()
            .expect("a successful run always has a final stage");
        let png = imageio::encode_luma_png(&decoded.luma)?;
        fs::write(dir.join(&rel), png).context("writing final image")?;
        Some(rel)
    } else {
        None
    };

    let manifest = Manifest {
        format: FORMAT.into(),
        status: if run.succeeded() { STATUS_COMPLETE } else { STATUS_FAILED }.into(),
        config: snapshot(settings),
        objects: run.objects.clone(),
        transcript: run.transcript.entries().to_vec(),
        stages,
        final_image,
        failure: run.failure.clone(),
    };
    debug_assert_eq!(crate::manifest::validate(&manifest), Ok(()));
    fs::write(dir.join("manifest.json"), manifest.to_json()).context("writing manifest")?;
    write_json(
        &dir.join("timing.json"),
        &TimingDoc {
            total_ms: total.as_secs_f64() * 1000.0,
        },
    )?;
    Ok(manifest)
}
