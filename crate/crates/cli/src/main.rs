use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};
use easel_cli::{config, evalcmd, persist, replay, specs};
use easel_core::pipeline::{run_pipeline, PipelineConfig, Ports};

#[derive(Parser)]
#[command(
    name = "easel",
    version,
    about = "Progressive multi-object image generation: plan the prompt, \
             paint the objects one stage at a time under attention-mask \
             guidance, inspect each stage, and score the results"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Plan, paint, and inspect every object; record the run to a directory
    Run(config::RunArgs),
    /// Re-execute a recorded run and verify it reproduces bit for bit
    Replay {
        /// Path to the recorded manifest.json
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Judge a directory of images against their prompts with yes/no questions
    Eval {
        /// Directory of .png images, paired with prompt lines in filename order
        #[arg(long)]
        images: PathBuf,
        /// Prompts file: `prompt | object; object` per line
        #[arg(long)]
        prompts: PathBuf,
        /// Judge spec: scripted:<path> or cmd:<program>
        #[arg(long)]
        judge: String,
        /// Where the score table is written (also printed to stdout)
        #[arg(long)]
        report: PathBuf,
    },
}

fn run_cmd(args: &config::RunArgs) -> Result<u8> {
    let settings = config::resolve(args)?;
    let mut planner = specs::make_planner(&settings.planner)?;
    let denoiser = specs::make_denoiser(&settings.backend)?;
    let mut checker = specs::make_vlm(&settings.checker, "checker")?;
    let scorer = specs::make_scorer(&settings.scorer, denoiser.canvas())?;

    let cfg = PipelineConfig {
        prompt: settings.prompt.clone(),
        seed: settings.seed,
        guidance: settings.guidance.clone(),
        overlap_ratios: settings.overlap_ratios.clone(),
        retry: settings.retry.clone(),
    };
    let started = Instant::now();
    let run = run_pipeline(
        &cfg,
        Ports {
            planner: planner.as_mut(),
            denoiser: denoiser.as_ref(),
            checker: checker.as_mut(),
            scorer: scorer.as_ref(),
        },
    );
    persist::write_run(&settings, &run, started.elapsed())?;

    if !run.objects.is_empty() {
        println!("planned {} objects: {}", run.objects.len(), run.objects.join("; "));
    }
    for stage in &run.stages {
        let m = stage.precise_mask;
        println!(
            "stage {}: {}  mask ({}, {}, {}, {})  attempts {}  {}",
            stage.stage,
            stage.object,
            m.x,
            m.y,
            m.w,
            m.h,
            stage.attempts.len(),
            if stage.passed { "passed" } else { "kept best attempt" }
        );
    }
    let manifest_path = settings.out.join("manifest.json");
    match &run.failure {
        None => {
            println!("run complete: {}", manifest_path.display());
            Ok(0)
        }
        Some(failure) => {
            match failure.stage {
                Some(stage) => eprintln!("run failed at stage {stage}: {}", failure.message),
                None => eprintln!("run failed: {}", failure.message),
            }
            eprintln!("partial record: {}", manifest_path.display());
            Ok(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Run(args) => run_cmd(args),
        Cmd::Replay { manifest } => replay::replay(manifest).map(|()| 0),
        Cmd::Eval {
            images,
            prompts,
            judge,
            report,
        } => evalcmd::eval_cmd(images, prompts, judge, report).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
