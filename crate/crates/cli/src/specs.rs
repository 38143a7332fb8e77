//! Port specs: the small grammar behind `--backend`, `--planner`,
//! `--checker`, `--scorer`, and `--judge`.
//!
//! ```text
//! toy                          built-in deterministic denoiser, defaults
//! toy:seed=7,width=16          ... with overrides (seed, width, height,
//!                              channels, signal-scale, init-scale)
//! scripted:<path>              fixture-driven text or VLM port
//! mock:center                  scorer targeting the canvas center
//! mock:target=5,9              scorer targeting a specific cell
//! cmd:<program> [args...]      external process speaking JSON lines
//! ```
//!
//! Remote HTTP endpoints are deliberately not built in; wrap the service in
//! a small program and point `cmd:` at it.

use std::fs;

use anyhow::{anyhow, bail, Context, Result};
use easel_core::geometry::Canvas;
use easel_core::mock::{MockScorer, ScriptedReplies, ToyConfig, ToyDenoiser};
use easel_core::ports::{DenoiserPort, ScorerPort, TextCompletionPort, VlmPort};

use crate::cmdport::{CmdDenoiser, CmdScorer, CmdText, CmdVlm};

fn split_kind(spec: &str) -> (&str, Option<&str>) {
    match spec.split_once(':') {
        Some((kind, rest)) => (kind, Some(rest)),
        None => (spec, None),
    }
}

fn reject_http(kind: &str, role: &str) -> Result<()> {
    if kind.eq_ignore_ascii_case("http") || kind.eq_ignore_ascii_case("https") {
        bail!(
            "{role}: remote endpoints are not built in; wrap the service in a \
             program speaking the documented JSON-lines protocol and use cmd:<program>"
        );
    }
    Ok(())
}

fn cmd_argv(rest: Option<&str>) -> Result<Vec<String>> {
    let argv: Vec<String> = rest
        .unwrap_or_default()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if argv.is_empty() {
        bail!("cmd: spec needs a program, e.g. cmd:python3 my_port.py");
    }
    Ok(argv)
}

fn load_scripted(rest: Option<&str>, role: &str) -> Result<ScriptedReplies> {
    let path = rest.filter(|p| !p.is_empty()).ok_or_else(|| {
        anyhow!("{role}: scripted spec needs a fixture path, e.g. scripted:fixtures/planner.txt")
    })?;
    let text = fs::read_to_string(path).with_context(|| format!("reading fixture {path}"))?;
    ScriptedReplies::parse(&text).map_err(|e| anyhow!("fixture {path}: {e}"))
}

pub fn make_planner(spec: &str) -> Result<Box<dyn TextCompletionPort>> {
    let (kind, rest) = split_kind(spec);
    reject_http(kind, "planner")?;
    match kind {
        "scripted" => Ok(Box::new(load_scripted(rest, "planner")?)),
        "cmd" => Ok(Box::new(CmdText::new(&cmd_argv(rest)?)?)),
        other => bail!("planner: unknown port kind {other:?} (use scripted: or cmd:)"),
    }
}

pub fn make_vlm(spec: &str, role: &str) -> Result<Box<dyn VlmPort>> {
    let (kind, rest) = split_kind(spec);
    reject_http(kind, role)?;
    match kind {
        "scripted" => Ok(Box::new(load_scripted(rest, role)?)),
        "cmd" => Ok(Box::new(CmdVlm::new(&cmd_argv(rest)?)?)),
        other => bail!("{role}: unknown port kind {other:?} (use scripted: or cmd:)"),
    }
}

pub fn make_scorer(spec: &str, canvas: Canvas) -> Result<Box<dyn ScorerPort>> {
    let (kind, rest) = split_kind(spec);
    reject_http(kind, "scorer")?;
    match kind {
        "mock" => match rest.unwrap_or("center") {
            "center" | "" => Ok(Box::new(MockScorer::centered(canvas.width, canvas.height))),
            other => {
                let coords = other.strip_prefix("target=").ok_or_else(|| {
                    anyhow!("scorer: mock options are mock:center or mock:target=x,y, got {other:?}")
                })?;
                let (x, y) = coords
                    .split_once(',')
                    .ok_or_else(|| anyhow!("scorer: target needs x,y, got {coords:?}"))?;
                let x: f64 = x.trim().parse().context("scorer: target x")?;
                let y: f64 = y.trim().parse().context("scorer: target y")?;
                if !(0.0..canvas.width as f64).contains(&x)
                    || !(0.0..canvas.height as f64).contains(&y)
                {
                    bail!(
                        "scorer: target ({x}, {y}) outside the {}x{} canvas",
                        canvas.width,
                        canvas.height
                    );
                }
                Ok(Box::new(MockScorer::new(x, y)))
            }
        },
        "cmd" => Ok(Box::new(CmdScorer::new(&cmd_argv(rest)?)?)),
        other => bail!("scorer: unknown port kind {other:?} (use mock: or cmd:)"),
    }
}

pub fn make_denoiser(spec: &str) -> Result<Box<dyn DenoiserPort>> {
    let (kind, rest) = split_kind(spec);
    reject_http(kind, "backend")?;
    match kind {
        "toy" => Ok(Box::new(ToyDenoiser::new(toy_config(rest)?))),
        "cmd" => Ok(Box::new(CmdDenoiser::new(&cmd_argv(rest)?)?)),
        other => bail!("backend: unknown port kind {other:?} (use toy or cmd:)"),
    }
}

fn toy_config(rest: Option<&str>) -> Result<ToyConfig> {
    let mut cfg = ToyConfig::default();
    let Some(rest) = rest else {
        return Ok(cfg);
    };
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("backend: toy option {pair:?} is not key=value"))?;
        let value = value.trim();
        match key.trim() {
            "seed" => cfg.seed = value.parse().context("backend: toy seed")?,
            "width" => cfg.width = value.parse().context("backend: toy width")?,
            "height" => cfg.height = value.parse().context("backend: toy height")?,
            "channels" => cfg.channels = value.parse().context("backend: toy channels")?,
            "signal-scale" => {
                cfg.signal_scale = value.parse().context("backend: toy signal-scale")?
            }
            "init-scale" => cfg.init_scale = value.parse().context("backend: toy init-scale")?,
            other => bail!(
                "backend: unknown toy option {other:?} (seed, width, height, channels, \
                 signal-scale, init-scale)"
            ),
        }
    }
    if cfg.width < 4 || cfg.height < 4 || cfg.channels == 0 {
        bail!("backend: toy needs width and height of at least 4 and at least one channel");
    }
    Ok(cfg)
}
