//! Re-executes a recorded run and proves the recording is reproducible.
//!
//! The manifest must describe a complete run that saved its trajectories.
//! Ports are rebuilt from the recorded config snapshot; relative fixture
//! paths in the specs resolve against the current working directory, exactly
//! as they did when the run was launched. The rerun is then compared frame
//! by frame against the stored blobs, so any divergence is reported at the
//! first stage and frame (and hence denoising timestep) where the latents
//! stop being bit-identical. Reports, decoded images, the transcript, and
//! the object list are checked afterwards as coarser backstops.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use easel_core::pipeline::{run_pipeline, PipelineConfig, Ports};

use crate::blob;
use crate::imageio;
use crate::manifest::{self, STATUS_COMPLETE};
use crate::specs;

pub fn replay(manifest_path: &Path) -> Result<()> {
    let m = manifest::load(manifest_path)?;
    if m.status != STATUS_COMPLETE {
        bail!(
            "replay needs a complete run; this manifest records status {:?}",
            m.status
        );
    }
    if !m.config.save_intermediates {
        bail!("the recording has no trajectories; rerun with --save-intermediates first");
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut stored = Vec::with_capacity(m.stages.len());
    for doc in &m.stages {
        let rel = doc.artifacts.trajectory.as_deref().ok_or_else(|| {
            anyhow::anyhow!(
                "stage {} has no trajectory artifact; rerun with --save-intermediates first",
                doc.report.stage
            )
        })?;
        let (stage, frames) = blob::read_trajectory(&base.join(rel))?;
        if stage != doc.report.stage {
            bail!(
                "trajectory {rel} is labeled stage {stage} but belongs to stage {}",
                doc.report.stage
            );
        }
        stored.push(frames);
    }

    let cfg = PipelineConfig {
        prompt: m.config.prompt.clone(),
        seed: m.config.seed,
        guidance: m.config.guidance.clone(),
        overlap_ratios: m.config.overlap_ratios.clone(),
        retry: m.config.retry.clone(),
    };
    let mut planner = specs::make_planner(&m.config.planner)?;
    let denoiser = specs::make_denoiser(&m.config.backend)?;
    let mut checker = specs::make_vlm(&m.config.checker, "checker")?;
    let scorer = specs::make_scorer(&m.config.scorer, denoiser.canvas())?;
    let rerun = run_pipeline(
        &cfg,
        Ports {
            planner: planner.as_mut(),
            denoiser: denoiser.as_ref(),
            checker: checker.as_mut(),
            scorer: scorer.as_ref(),
        },
    );

    if let Some(failure) = &rerun.failure {
        bail!(
            "replay: the rerun failed instead of reproducing the recording: {}",
            failure.message
        );
    }
    if rerun.objects != m.objects {
        bail!(
            "replay: decomposition changed (recorded {:?}, rerun {:?})",
            m.objects,
            rerun.objects
        );
    }
    if rerun.transcript.entries() != m.transcript.as_slice() {
        bail!("replay: the planner transcript changed");
    }
    if rerun.records.len() != stored.len() {
        bail!(
            "replay: stage count changed (recorded {}, rerun {})",
            stored.len(),
            rerun.records.len()
        );
    }

    let mut total_frames = 0usize;
    for ((doc, frames), record) in m.stages.iter().zip(&stored).zip(&rerun.records) {
        let n = doc.report.stage;
        if record.trajectory.len() != frames.len() {
            bail!(
                "replay: stage {n}: frame count changed (recorded {}, rerun {})",
                frames.len(),
                record.trajectory.len()
            );
        }
        let steps = frames.len() as u32 - 1;
        for (f, (old, new)) in frames.iter().zip(&record.trajectory).enumerate() {
            if !old.bits_eq(new) {
                bail!(
                    "replay: divergence at stage {n}, frame {f} (timestep {})",
                    steps - f as u32
                );
            }
        }
        total_frames += frames.len();

        // Latents matched bit for bit, so anything below is a recording
        // inconsistency rather than nondeterminism; still worth naming.
        let rerun_report = &rerun.stages[doc.report.stage as usize - 1];
        if *rerun_report != doc.report {
            bail!("replay: stage {n}: the stage report changed");
        }
        let stored_png = fs::read(base.join(&doc.artifacts.image))
            .with_context(|| format!("reading {}", doc.artifacts.image))?;
        if imageio::encode_luma_png(&record.decoded.luma)? != stored_png {
            bail!("replay: stage {n}: the decoded image changed");
        }
    }

    if let Some(rel) = &m.final_image {
        let stored_png =
            fs::read(base.join(rel)).with_context(|| format!("reading {rel}"))?;
        let decoded = rerun
            .final_image()
            .expect("a successful rerun has a final image");
        if imageio::encode_luma_png(&decoded.luma)? != stored_png {
            bail!("replay: the final image changed");
        }
    }

    println!(
        "replay: verified {} stages, {} frames, all identical to the recording",
        stored.len(),
        total_frames
    );
    Ok(())
}
