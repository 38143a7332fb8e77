//! The `eval` subcommand: judge a directory of images against their prompts
//! and tabulate per-aspect yes-rates.
//!
//! The prompts file pairs with the images by position: line k describes the
//! k-th `.png` in the directory in filename order. Each line is
//!
//! ```text
//! the orange pumpkin is on the right side of the black door | black door; orange pumpkin
//! ```
//!
//! prompt, a pipe, then the object phrases separated by semicolons. Blank
//! lines and lines starting with `#` are skipped. The rendered table goes to
//! both stdout and the report file, byte-identical between equal runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use easel_core::eval::{build_questionnaire, evaluate, AspectCount, AspectScores, Questionnaire};
use easel_core::latent::DecodedImage;

use crate::imageio;
use crate::specs;

#[derive(Clone, Debug, PartialEq)]
pub struct PromptEntry {
    pub prompt: String,
    pub objects: Vec<String>,
}

pub fn parse_prompts(text: &str) -> Result<Vec<PromptEntry>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let Some((prompt, objects)) = line.split_once('|') else {
            bail!("prompts line {lineno}: expected `prompt | object; object`, found no `|`");
        };
        let prompt = prompt.trim();
        if prompt.is_empty() {
            bail!("prompts line {lineno}: empty prompt before the `|`");
        }
        let objects: Vec<String> = objects
            .split(';')
            .map(|o| o.trim().to_string())
            .collect();
        if objects.iter().any(String::is_empty) {
            bail!("prompts line {lineno}: empty object phrase in the list");
        }
        entries.push(PromptEntry {
            prompt: prompt.to_string(),
            objects,
        });
    }
    if entries.is_empty() {
        bail!("the prompts file has no entries");
    }
    Ok(entries)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        bail!("no .png images in {}", dir.display());
    }
    paths.sort();
    Ok(paths)
}

fn cell(count: AspectCount) -> String {
    match count.percentage() {
        Some(p) => format!("{p:.2}"),
        None => "n/a".into(),
    }
}

fn render_table(rows: &[(String, AspectScores)], total: &AspectScores) -> String {
    let header = ["image", "objects", "attributes", "spatial", "overall"];
    let mut table: Vec<[String; 5]> = Vec::with_capacity(rows.len() + 1);
    for (name, scores) in rows {
        table.push([
            name.clone(),
            cell(scores.completeness),
            cell(scores.attribute),
            cell(scores.spatial),
            cell(scores.pooled()),
        ]);
    }
    table.push([
        "TOTAL".into(),
        cell(total.completeness),
        cell(total.attribute),
        cell(total.spatial),
        cell(total.pooled()),
    ]);

    let mut widths = header.map(str::len);
    for row in &table {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<w$}", header[0], w = widths[0]);
    for (h, w) in header.iter().zip(widths).skip(1) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for row in &table {
        let _ = write!(out, "{:<w$}", row[0], w = widths[0]);
        for (c, w) in row.iter().zip(widths).skip(1) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

pub fn eval_cmd(
    images_dir: &Path,
    prompts_path: &Path,
    judge_spec: &str,
    report_path: &Path,
) -> Result<()> {
    let text = fs::read_to_string(prompts_path)
        .with_context(|| format!("reading {}", prompts_path.display()))?;
    let prompts = parse_prompts(&text)?;
    let images = list_images(images_dir)?;
    if images.len() != prompts.len() {
        bail!(
            "{} images in {} but {} prompts in {}; they pair by position",
            images.len(),
            images_dir.display(),
            prompts.len(),
            prompts_path.display()
        );
    }

    let mut decoded: Vec<DecodedImage> = Vec::with_capacity(images.len());
    for path in &images {
        decoded.push(DecodedImage {
            luma: imageio::load_luma(path)?,
            token_planes: Vec::new(),
        });
    }
    let questionnaires: Vec<Questionnaire> = prompts
        .iter()
        .map(|e| build_questionnaire(&e.prompt, &e.objects))
        .collect();
    let entries: Vec<(&DecodedImage, &Questionnaire)> =
        decoded.iter().zip(&questionnaires).collect();

    let mut judge = specs::make_vlm(judge_spec, "judge")?;
    let outcome = evaluate(&entries, judge.as_mut());

    let mut rows = Vec::with_capacity(images.len());
    for (path, judged) in images.iter().zip(&outcome.answers) {
        let mut scores = AspectScores::default();
        for q in judged {
            scores.tally(q.aspect, q.yes);
        }
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((name, scores));
    }

    let table = render_table(&rows, &outcome.scores);
    fs::write(report_path, &table)
        .with_context(|| format!("writing {}", report_path.display()))?;
    print!("{table}");
    Ok(())
}
