//! Settings for the `run` subcommand, merged from three layers: built-in
//! defaults, then an optional TOML config file, then command line flags.
//! Flags always win. The file uses the flag names verbatim as keys, so
//!
//! ```toml
//! prompt = "a cat to the left of a dog"
//! seed = 7
//! lr = 90.0
//! overlap-ratios = "0.2,0.4"
//! save-intermediates = true
//! ```
//!
//! means exactly what the same flags would.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use easel_core::feedback::RetryPolicy;
use easel_core::guidance::GuidanceConfig;
use easel_core::latent::BlockClass;
use serde::Deserialize;

/// Flags for `run`. Everything is optional here; `resolve` layers these over
/// the config file and the defaults, then checks that the handful of settings
/// with no sensible default actually arrived.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Scene description to decompose and paint
    #[arg(long)]
    pub prompt: Option<String>,
    /// Seed for the deterministic latent draws
    #[arg(long)]
    pub seed: Option<u64>,
    /// Denoising steps per stage
    #[arg(long)]
    pub steps: Option<u32>,
    /// Guide while the countdown timestep is above this
    #[arg(long)]
    pub guide_until: Option<u32>,
    /// Combine latents while the countdown timestep is above this
    #[arg(long)]
    pub combine_until: Option<u32>,
    /// Gradient rate for attention guidance
    #[arg(long)]
    pub lr: Option<f64>,
    /// Gradient updates per guided timestep
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Attention block classes to guide, comma separated
    /// (near-input, near-middle, near-output)
    #[arg(long)]
    pub blocks: Option<String>,
    /// Quantile that thresholds the averaged attention map into a mask
    #[arg(long)]
    pub mask_quantile: Option<f64>,
    /// Region fractions tried when the planner predicts overlap, comma
    /// separated
    #[arg(long)]
    pub overlap_ratios: Option<String>,
    /// Checker-driven retries per stage
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Denoiser spec: toy, toy:key=value,..., or cmd:<program>
    #[arg(long)]
    pub backend: Option<String>,
    /// Planner spec: scripted:<path> or cmd:<program>
    #[arg(long)]
    pub planner: Option<String>,
    /// Checker spec: scripted:<path> or cmd:<program>
    #[arg(long)]
    pub checker: Option<String>,
    /// Scorer spec: mock:center, mock:target=x,y, or cmd:<program>
    #[arg(long)]
    pub scorer: Option<String>,
    /// Directory the run record is written into
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every stage's full latent trajectory
    #[arg(long)]
    pub save_intermediates: bool,
    /// TOML file supplying any of the other flags by name
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    prompt: Option<String>,
    seed: Option<u64>,
    steps: Option<u32>,
    guide_until: Option<u32>,
    combine_until: Option<u32>,
    lr: Option<f64>,
    iterations: Option<u32>,
    blocks: Option<String>,
    mask_quantile: Option<f64>,
    overlap_ratios: Option<String>,
    max_retries: Option<u32>,
    backend: Option<String>,
    planner: Option<String>,
    checker: Option<String>,
    scorer: Option<String>,
    out: Option<PathBuf>,
    save_intermediates: Option<bool>,
}

/// Fully resolved settings for one run.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub prompt: String,
    pub seed: u64,
    pub guidance: GuidanceConfig,
    pub overlap_ratios: Vec<f64>,
    pub retry: RetryPolicy,
    pub backend: String,
    pub planner: String,
    pub checker: String,
    pub scorer: String,
    pub out: PathBuf,
    pub save_intermediates: bool,
}

pub fn parse_blocks(text: &str) -> Result<Vec<BlockClass>> {
    let mut classes = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        classes.push(match part {
            "near-input" | "near_input" => BlockClass::NearInput,
            "near-middle" | "near_middle" => BlockClass::NearMiddle,
            "near-output" | "near_output" => BlockClass::NearOutput,
            other => bail!(
                "unknown block class {other:?}; expected near-input, near-middle, or near-output"
            ),
        });
    }
    if classes.is_empty() {
        bail!("block list is empty");
    }
    Ok(classes)
}

pub fn parse_ratios(text: &str) -> Result<Vec<f64>> {
    let mut ratios = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let r: f64 = part
            .parse()
            .with_context(|| format!("bad overlap ratio {part:?}"))?;
        ratios.push(r);
    }
    Ok(ratios)
}

/// Merges defaults, the optional config file, and the flags into one
/// settings struct. Fails when a required setting (prompt, planner, checker,
/// out) is still missing afterwards, or when a list fails to parse.
pub fn resolve(args: &RunArgs) -> Result<RunSettings> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };

    macro_rules! pick {
        ($field:ident) => {
            args.$field.clone().or(file.$field.clone())
        };
    }

    let mut missing = String::new();
    let mut require = |name: &str| {
        if !missing.is_empty() {
            missing.push_str(", ");
        }
        let _ = write!(missing, "--{name}");
    };

    let defaults = GuidanceConfig::default();
    let guidance = GuidanceConfig {
        steps: pick!(steps).unwrap_or(defaults.steps),
        guide_until: pick!(guide_until).unwrap_or(defaults.guide_until),
        combine_until: pick!(combine_until).unwrap_or(defaults.combine_until),
        lr: pick!(lr).unwrap_or(defaults.lr),
        iterations: pick!(iterations).unwrap_or(defaults.iterations),
        blocks: match pick!(blocks) {
            Some(text) => parse_blocks(&text)?,
            None => defaults.blocks,
        },
        mask_quantile: pick!(mask_quantile).unwrap_or(defaults.mask_quantile),
    };
    let overlap_ratios = match pick!(overlap_ratios) {
        Some(text) => parse_ratios(&text)?,
        None => vec![0.1, 0.3, 0.5],
    };
    let retry = RetryPolicy::default_for(pick!(max_retries).unwrap_or(2));

    let prompt = pick!(prompt).unwrap_or_else(|| {
        require("prompt");
        String::new()
    });
    let planner = pick!(planner).unwrap_or_else(|| {
        require("planner");
        String::new()
    });
    let checker = pick!(checker).unwrap_or_else(|| {
        require("checker");
        String::new()
    });
    let out = pick!(out).unwrap_or_else(|| {
        require("out");
        PathBuf::new()
    });
    if !missing.is_empty() {
        bail!("missing required settings: {missing} (flags or config file keys)");
    }

    Ok(RunSettings {
        prompt,
        seed: pick!(seed).unwrap_or(0),
        guidance,
        overlap_ratios,
        retry,
        backend: pick!(backend).unwrap_or_else(|| "toy".into()),
        planner,
        checker,
        scorer: pick!(scorer).unwrap_or_else(|| "mock:center".into()),
        out,
        save_intermediates: args.save_intermediates || file.save_intermediates.unwrap_or(false),
    })
}
