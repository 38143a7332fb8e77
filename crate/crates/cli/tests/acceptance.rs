//! The acceptance gate: one integration test per shipping criterion, each
//! printing a `PASS` line with the numbers it verified, so running
//! `cargo test -p easel-cli --test acceptance -- --nocapture` doubles as a
//! release checklist. Every criterion runs against the in-process mock suite
//! except the last, which drives live endpoints and stays ignored unless
//! explicitly requested.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use easel_cli::{blob, manifest, specs};
use easel_core::candidates::{generate_candidates, select_best};
use easel_core::feedback::{build_stage_questions, run_stage_with_feedback, RetryPolicy};
use easel_core::geometry::{
    overlap_candidate, rough_mask_first, rough_mask_next, BBox, BinaryMask, Canvas, GeometryError,
    PositionChoice,
};
use easel_core::guidance::{
    attention_energy, combine_latents, guidance_step, mean_attention_map, GuidanceConfig,
    StageRecord,
};
use easel_core::latent::{
    AttentionMaps, BlockAttention, BlockClass, DecodedImage, Grid, LatentState,
};
use easel_core::mock::{MockScorer, ScriptedReplies, ToyConfig, ToyDenoiser};
use easel_core::pipeline::{run_pipeline, PipelineConfig, PipelineRun, Ports};
use easel_core::ports::{DenoiserPort, PortError, ScorerPort};
use easel_core::rng::SplitMix64;

// ---------------------------------------------------------------------------
// 1. Mask geometry: randomized containment, disjointness, reduction at zero
//    overlap, and overlap exactness to within one cell.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_geometry_properties_hold_over_randomized_cases() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACCE_5501);
    let cases = 10_000u32;

    for case in 0..cases {
        let canvas = Canvas::new(4 + below(&mut rng, 61), 4 + below(&mut rng, 61));
        let num = 1 + below(&mut rng, 6);

        // First-object strip: the planner may only open a run left or bottom.
        let first_opt = if rng.next_u64() & 1 == 0 {
            PositionChoice::Left
        } else {
            PositionChoice::Bottom
        };
        match rough_mask_first(first_opt, num, canvas) {
            Ok(b) => {
                assert!(canvas.contains(&b), "case {case}: first mask {b} escapes");
                assert!(b.area() > 0, "case {case}: first mask {b} is empty");
            }
            Err(GeometryError::LayoutExhausted { .. }) => {
                assert!(
                    first_opt == PositionChoice::Left && canvas.width < num,
                    "case {case}: spurious exhaustion for {first_opt:?} num {num} on {canvas:?}"
                );
            }
            Err(e) => panic!("case {case}: unexpected first-mask error {e:?}"),
        }

        // A previous box anywhere inside the canvas.
        let px = below(&mut rng, canvas.width);
        let py = below(&mut rng, canvas.height);
        let prev = BBox::new(
            px,
            py,
            1 + below(&mut rng, canvas.width - px),
            1 + below(&mut rng, canvas.height - py),
        );

        for next_opt in [PositionChoice::Right, PositionChoice::Top] {
            // Disjoint stacking.
            match rough_mask_next(next_opt, num, &prev, canvas) {
                Ok(b) => {
                    assert!(canvas.contains(&b), "case {case}: next mask {b} escapes");
                    assert!(
                        b.intersect(&prev).is_none(),
                        "case {case}: next mask {b} overlaps prev {prev}"
                    );
                    match next_opt {
                        PositionChoice::Right => assert!(b.x >= prev.right()),
                        PositionChoice::Top => assert!(b.bottom() <= prev.y),
                        _ => unreachable!(),
                    }
                }
                Err(GeometryError::LayoutExhausted { .. }) => match next_opt {
                    PositionChoice::Right => assert_eq!(
                        (canvas.width - prev.right()) / num,
                        0,
                        "case {case}: room remained right of {prev} on {canvas:?}"
                    ),
                    PositionChoice::Top => assert_eq!(
                        prev.y, 0,
                        "case {case}: room remained above {prev} on {canvas:?}"
                    ),
                    _ => unreachable!(),
                },
                Err(e) => panic!("case {case}: unexpected next-mask error {e:?}"),
            }

            // Zero overlap must collapse to the disjoint layout, errors and all.
            match (
                rough_mask_next(next_opt, num, &prev, canvas),
                overlap_candidate(next_opt, num, &prev, canvas, 0.0),
            ) {
                (Ok(b), Ok(c)) => {
                    assert_eq!(c.bbox, b, "case {case}: r = 0 disagrees with plain stacking");
                    assert!(!c.clamped);
                }
                (Err(_), Err(_)) => {}
                (a, b) => panic!("case {case}: r = 0 split outcome {a:?} vs {b:?}"),
            }

            // Proper overlap: the candidate must bite into the previous box by
            // the requested fraction of its extent, to rounding.
            let r = 0.05 + 0.9 * rng.next_f64();
            match overlap_candidate(next_opt, num, &prev, canvas, r) {
                Ok(c) => {
                    assert!(canvas.contains(&c.bbox), "case {case}: candidate escapes");
                    assert!(c.bbox.area() > 0);
                    let intrusion = match next_opt {
                        PositionChoice::Right => {
                            c.bbox.intersect(&prev).map_or(0, |i| i.w) as f64
                        }
                        PositionChoice::Top => c.bbox.intersect(&prev).map_or(0, |i| i.h) as f64,
                        _ => unreachable!(),
                    };
                    if c.clamped {
                        match next_opt {
                            PositionChoice::Right => assert_eq!(c.bbox.right(), canvas.width),
                            PositionChoice::Top => assert_eq!(c.bbox.bottom(), canvas.height),
                            _ => unreachable!(),
                        }
                    } else {
                        let extent = match next_opt {
                            PositionChoice::Right => prev.w as f64,
                            PositionChoice::Top => prev.h as f64,
                            _ => unreachable!(),
                        };
                        assert!(
                            (intrusion - extent * r).abs() <= 1.0,
                            "case {case}: {next_opt:?} wanted intrusion {:.2}, got {intrusion} \
                             (prev {prev}, candidate {}, r {r:.3})",
                            extent * r,
                            c.bbox
                        );
                    }
                }
                Err(GeometryError::LayoutExhausted { .. }) => {}
                Err(e) => panic!("case {case}: unexpected candidate error {e:?}"),
            }
        }
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "geometry suite took {elapsed:?}, budget is 10 s"
    );
    println!(
        "acceptance criterion 01: PASS -- {cases} randomized layout cases held \
         containment, disjointness, zero-overlap reduction, and overlap exactness \
         within one cell in {:.2} s",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 2. Confinement energy against an independent brute-force oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_confinement_energy_matches_bruteforce_oracle() {
    let mut rng = SplitMix64::new(0xACCE_5502);
    let trials = 1_000u32;
    let mut worst = 0.0f64;

    for trial in 0..trials {
        let canvas = Canvas::new(4 + below(&mut rng, 29), 4 + below(&mut rng, 29));
        let tokens = 1 + below(&mut rng, 5);
        let n_blocks = 1 + below(&mut rng, 3) as usize;

        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let class = match below(&mut rng, 3) {
                0 => BlockClass::NearInput,
                1 => BlockClass::NearMiddle,
                _ => BlockClass::NearOutput,
            };
            let (w, h) = (1 + below(&mut rng, 12), 1 + below(&mut rng, 12));
            let massless = rng.next_f64() < 0.05;
            let values: Vec<f64> = (0..(w as usize * h as usize * tokens as usize))
                .map(|_| if massless { 0.0 } else { rng.next_f64() })
                .collect();
            blocks.push(BlockAttention::new(class, w, h, tokens, values));
        }

        let mut classes: Vec<BlockClass> = Vec::new();
        for b in &blocks {
            if !classes.contains(&b.class) {
                classes.push(b.class);
            }
        }

        let bx = below(&mut rng, canvas.width);
        let by = below(&mut rng, canvas.height);
        let bbox = BBox::new(
            bx,
            by,
            1 + below(&mut rng, canvas.width - bx),
            1 + below(&mut rng, canvas.height - by),
        );
        let token = below(&mut rng, tokens);

        let maps = AttentionMaps {
            blocks: blocks.clone(),
        };
        let lib = attention_energy(&maps, &classes, &bbox, canvas, token)
            .expect("energy over generated maps")
            .value;
        let mine = bruteforce_energy(&blocks, &classes, &bbox, canvas, token);

        let diff = (mine - lib).abs();
        let rel = diff / lib.abs().max(1e-10);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-10,
            "trial {trial}: oracle {mine} vs library {lib} (rel {rel:e})"
        );
    }

    println!(
        "acceptance criterion 02: PASS -- confinement energy matched the \
         brute-force oracle on {trials} random attention map sets \
         (worst relative error {worst:.2e})"
    );
}

/// Independent re-derivation of the confinement energy: walk every cell of
/// every selected block, classify it by where its center lands at canvas
/// scale, and square the missed-mass fraction per block. A block cell `u` of
/// a width-`res` block sits at canvas abscissa `(2u + 1) * canvas / (2 *
/// res)`, and counts as inside a half-open box `[start, start + len)`.
fn bruteforce_energy(
    blocks: &[BlockAttention],
    classes: &[BlockClass],
    bbox: &BBox,
    canvas: Canvas,
    token: u32,
) -> f64 {
    let center = |cell: u32, res: u32, extent: u32| -> f64 {
        ((2 * cell as u64 + 1) * extent as u64) as f64 / (2 * res as u64) as f64
    };
    let mut sum = 0.0;
    for &class in classes {
        for b in blocks.iter().filter(|b| b.class == class) {
            let mut inside = 0.0;
            let mut total = 0.0;
            for v in 0..b.height() {
                for u in 0..b.width() {
                    let a = b.get(u, v, token);
                    total += a;
                    let cx = center(u, b.width(), canvas.width);
                    let cy = center(v, b.height(), canvas.height);
                    let in_x = cx >= bbox.x as f64 && cx < bbox.right() as f64;
                    let in_y = cy >= bbox.y as f64 && cy < bbox.bottom() as f64;
                    if in_x && in_y {
                        inside += a;
                    }
                }
            }
            if total > 0.0 {
                let miss = 1.0 - (inside / total).clamp(0.0, 1.0);
                sum += miss * miss;
            }
        }
    }
    sum
}

// ---------------------------------------------------------------------------
// 3. Analytic gradient of the toy backend against central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_toy_gradient_matches_finite_differences() {
    let toy = ToyDenoiser::new(ToyConfig {
        channels: 2,
        width: 8,
        height: 8,
        seed: 5,
        ..ToyConfig::default()
    });
    let canvas = toy.canvas();
    let bbox = BBox::new(0, 0, 4, 8);
    let text = "red fox";
    let token = 1;

    let energy_of = |z: &LatentState| -> f64 {
        let maps = toy.attention(z, 5, text).expect("toy attention");
        attention_energy(&maps, &[BlockClass::NearMiddle], &bbox, canvas, token)
            .expect("energy")
            .value
    };

    let eps = 1e-5;
    let latents = 100u64;
    let mut worst = 0.0f64;

    for k in 0..latents {
        let z = toy.init_latent(k, 1);
        let grad = toy
            .energy_gradient(&z, 5, text, &bbox, token, BlockClass::NearMiddle)
            .expect("toy gradient");

        let mut diff_sq = 0.0;
        let mut fd_sq = 0.0;
        for (i, g) in grad.iter().enumerate() {
            let mut plus = z.clone();
            plus.values_mut()[i] += eps;
            let mut minus = z.clone();
            minus.values_mut()[i] -= eps;
            let fd = (energy_of(&plus) - energy_of(&minus)) / (2.0 * eps);
            let d = g - fd;
            diff_sq += d * d;
            fd_sq += fd * fd;
        }
        let rel = diff_sq.sqrt() / fd_sq.sqrt().max(1e-12);
        worst = worst.max(rel);
        assert!(rel <= 1e-4, "latent {k}: gradient off by {rel:e}");
    }

    println!(
        "acceptance criterion 03: PASS -- analytic gradients matched central \
         finite differences on {latents} random latents \
         (worst relative error {worst:.2e})"
    );
}

// ---------------------------------------------------------------------------
// 4. Guidance efficacy: mass concentration within the step budget and
//    per-step energy descent at the shipped learning rate.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_guidance_concentrates_mass_and_descends_energy() {
    let toy = ToyDenoiser::new(ToyConfig::default());
    let canvas = toy.canvas();
    let bbox = BBox::new(0, 0, canvas.width / 2, canvas.height);
    let cfg = GuidanceConfig::default();
    let text = "red fox";
    let token = 1;

    let mass_inside = |z: &LatentState| -> f64 {
        let maps = toy.attention(z, 5, text).expect("toy attention");
        let energy = attention_energy(&maps, &[BlockClass::NearMiddle], &bbox, canvas, token)
            .expect("energy");
        let block = &energy.blocks[0];
        if block.total > 0.0 {
            block.inside / block.total
        } else {
            0.0
        }
    };

    // A constant latent attends uniformly, so the half-canvas box starts with
    // half the mass. The step budget must push it past 60%.
    let mut z = LatentState::from_fn(toy.channels(), canvas, |_, _, _| 0.25);
    let start = mass_inside(&z);
    assert!(
        start < 0.60,
        "uniform start already concentrated: {start:.3}"
    );
    let mut mass = start;
    let mut steps_used = 0;
    for step in 1..=8 {
        z = guidance_step(&toy, &z, 5, text, &bbox, token, &cfg).expect("guided step");
        mass = mass_inside(&z);
        steps_used = step;
        if mass >= 0.60 {
            break;
        }
    }
    assert!(
        mass >= 0.60,
        "after {steps_used} guided steps only {:.1}% of token mass is inside",
        mass * 100.0
    );

    // Energy must not increase across a single guided step for nearly every
    // starting latent.
    let trials = 200u64;
    let energy_of = |z: &LatentState| -> f64 {
        let maps = toy.attention(z, 5, text).expect("toy attention");
        attention_energy(&maps, &[BlockClass::NearMiddle], &bbox, canvas, token)
            .expect("energy")
            .value
    };
    let mut non_increasing = 0u64;
    for k in 0..trials {
        let z0 = toy.init_latent(1_000 + k, 1);
        let before = energy_of(&z0);
        let z1 = guidance_step(&toy, &z0, 5, text, &bbox, token, &cfg).expect("guided step");
        if energy_of(&z1) <= before + 1e-12 {
            non_increasing += 1;
        }
    }
    assert!(
        non_increasing * 100 >= trials * 95,
        "energy descended in only {non_increasing}/{trials} trials"
    );

    println!(
        "acceptance criterion 04: PASS -- {steps_used} guided step(s) captured \
         {:.1}% of token mass in a half-canvas box (from {:.1}%), and energy \
         was non-increasing in {non_increasing}/{trials} single-step trials",
        mass * 100.0,
        start * 100.0
    );
}

// ---------------------------------------------------------------------------
// 5. Latent combination preserves both sources bit for bit.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_combination_preserves_cells_bitwise() {
    let canvas = Canvas::new(8, 8);
    let channels = 2u32;
    let mut rng = SplitMix64::new(0xACCE_5505);
    let random_masks = 100usize;

    for trial in 0..random_masks + 2 {
        let mut prev = LatentState::from_fn(channels, canvas, |_, _, _| rng.next_bell());
        let mut new = LatentState::from_fn(channels, canvas, |_, _, _| rng.next_bell());
        prev.stage = 2;
        prev.timestep = 3;
        new.stage = 3;
        new.timestep = 3;

        // Values an arithmetic blend would corrupt: a negative zero (any
        // `m*a + (1-m)*b` mix turns it positive) and a subnormal.
        new.set(0, 0, 0, -0.0);
        prev.set(0, 0, 0, 0.0);
        new.set(1, 5, 6, f64::MIN_POSITIVE);
        prev.set(1, 5, 6, f64::MIN_POSITIVE / 4.0);

        let mask = if trial == random_masks {
            BinaryMask::full(canvas)
        } else if trial == random_masks + 1 {
            BinaryMask::from_bits(canvas.width, canvas.height, vec![false; 64])
        } else {
            BinaryMask::from_bits(
                canvas.width,
                canvas.height,
                (0..64).map(|_| rng.next_u64() & 1 == 1).collect(),
            )
        };

        let out = combine_latents(&new, &prev, &mask).expect("combine");
        assert_eq!(out.stage, new.stage, "metadata must follow the new latent");
        assert_eq!(out.timestep, new.timestep);
        for c in 0..channels {
            for v in 0..canvas.height {
                for u in 0..canvas.width {
                    let want = if mask.get(u, v) {
                        new.get(c, u, v)
                    } else {
                        prev.get(c, u, v)
                    };
                    assert_eq!(
                        out.get(c, u, v).to_bits(),
                        want.to_bits(),
                        "trial {trial}: cell ({u}, {v}) channel {c} not bit-identical"
                    );
                }
            }
        }
    }

    println!(
        "acceptance criterion 05: PASS -- combination kept every cell \
         bit-identical to its source across {random_masks} random masks plus \
         the all-ones and all-zeros masks"
    );
}

// ---------------------------------------------------------------------------
// 6. Scripted two-object run end to end: hand-traced masks and final
//    attention centroids inside their planned regions.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_two_object_demo_masks_and_centroids() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out = tmp.path().join("run");
    demo_run(&out);

    let m = manifest::load(&out.join("manifest.json")).expect("manifest loads");
    assert_eq!(m.status, "complete");
    assert_eq!(m.objects, ["black door", "orange pumpkin"]);
    assert_eq!(m.stages.len(), 2);

    // Hand-traced layout: two objects opening leftward split the canvas in
    // half, and the second stage stacks right of the first stage's precise
    // mask, taking everything that remains.
    let toy = specs::make_denoiser("toy").expect("toy backend");
    let canvas = toy.canvas();
    let s1 = &m.stages[0].report;
    let s2 = &m.stages[1].report;
    assert_eq!(
        s1.rough_mask,
        BBox::new(0, 0, canvas.width / 2, canvas.height)
    );
    assert!(canvas.contains(&s1.precise_mask));
    assert_eq!(
        s2.rough_mask,
        BBox::new(
            s1.precise_mask.right(),
            0,
            canvas.width - s1.precise_mask.right(),
            canvas.height
        )
    );

    // Each stage's final latent must attend to its token inside the planned
    // region: the centroid of the mean attention map, taken exactly as the
    // precise-mask extraction takes it, lands inside the rough mask.
    for stage in &m.stages {
        let rep = &stage.report;
        let path = stage
            .artifacts
            .trajectory
            .as_ref()
            .expect("demo records trajectories");
        let (label, frames) = blob::read_trajectory(&out.join(path)).expect("trajectory blob");
        assert_eq!(label, rep.stage);
        let last = frames.last().expect("non-empty trajectory");
        let maps = toy.attention(last, 0, &rep.subprompt).expect("attention");
        let mean = mean_attention_map(&maps, &m.config.guidance.blocks, rep.token, canvas)
            .expect("mean map");
        let (cx, cy) = mean.centroid().expect("attention has mass");
        let rm = rep.rough_mask;
        assert!(
            cx >= rm.x as f64
                && cx < rm.right() as f64
                && cy >= rm.y as f64
                && cy < rm.bottom() as f64,
            "stage {}: centroid ({cx:.2}, {cy:.2}) outside rough mask {rm}",
            rep.stage
        );
    }

    println!(
        "acceptance criterion 06: PASS -- scripted two-object run produced the \
         hand-traced rough masks {} and {}, with final attention centroids \
         inside both",
        s1.rough_mask, s2.rough_mask
    );
}

// ---------------------------------------------------------------------------
// 7. Feedback loop: escalation schedule, fallback choice, retry budget.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_feedback_retries_escalate_and_respect_the_budget() {
    let base = GuidanceConfig::default();
    let questions = build_stage_questions("orange pumpkin", None, None);
    assert_eq!(questions.len(), 2);

    // Fail then pass: exactly two attempts, the second under the documented
    // escalation (learning rate half again higher, combination extended one
    // step).
    let policy = RetryPolicy::default_for(2);
    let mut vlm =
        ScriptedReplies::parse("reply: No\n---\nreply: Yes\n---\nreply: Yes\n---\nreply: Yes\n")
            .expect("script");
    let mut seen: Vec<(u32, GuidanceConfig)> = Vec::new();
    let outcome = run_stage_with_feedback(&base, &policy, &questions, &mut vlm, |cfg, attempt| {
        seen.push((attempt, cfg.clone()));
        Ok::<_, PortError>(tiny_record(attempt + 1))
    })
    .expect("feedback run");
    assert_eq!(outcome.reports.len(), 2);
    assert!(outcome.passed);
    assert_eq!(outcome.chosen_attempt, 1);
    assert_eq!(outcome.record.stage, 2, "kept record must be attempt 1's");
    assert_eq!(seen[0].1, base);
    assert_eq!(seen[1].1.lr, 90.0);
    assert_eq!(seen[1].1.combine_until, 1);
    assert_eq!(seen[1].1.guide_until, base.guide_until);
    assert!(outcome.reports[0].adjustment.is_none());
    assert_eq!(
        outcome.reports[1].adjustment.as_deref(),
        Some("lr 60 -> 90, combine-until 0 -> 1")
    );

    // All attempts fail: the loop keeps the attempt with the most yes
    // verdicts, preferring the earliest on a tie.
    let mut vlm = ScriptedReplies::parse(
        "reply: No\n---\nreply: No\n---\nreply: Yes\n---\nreply: No\n---\nreply: No\n---\nreply: No\n",
    )
    .expect("script");
    let outcome = run_stage_with_feedback(&base, &policy, &questions, &mut vlm, |_, attempt| {
        Ok::<_, PortError>(tiny_record(attempt + 1))
    })
    .expect("feedback run");
    assert_eq!(outcome.reports.len(), 3);
    assert!(!outcome.passed);
    assert_eq!(outcome.chosen_attempt, 1, "one yes beats zero");
    assert_eq!(outcome.record.stage, 2);

    // The attempt count never exceeds the retry budget plus the base attempt.
    for budget in 0..=3u32 {
        let policy = RetryPolicy::default_for(budget);
        let mut vlm =
            ScriptedReplies::parse("on-exhausted: repeat-last\nreply: No\n").expect("script");
        let mut calls = 0u32;
        let outcome =
            run_stage_with_feedback(&base, &policy, &questions, &mut vlm, |_, attempt| {
                calls += 1;
                Ok::<_, PortError>(tiny_record(attempt + 1))
            })
            .expect("feedback run");
        assert_eq!(outcome.reports.len() as u32, budget + 1);
        assert_eq!(calls, budget + 1);
        assert!(!outcome.passed);
        assert_eq!(outcome.chosen_attempt, 0, "all-zero tie keeps the base");
    }

    println!(
        "acceptance criterion 07: PASS -- fail-then-pass stopped after 2 \
         attempts with the documented escalation, all-fail kept the best \
         verdict count, and budgets 0..=3 ran exactly budget + 1 attempts"
    );
}

// ---------------------------------------------------------------------------
// 8. Candidate selection: hand-computed argmax, smallest-ratio tie-break,
//    and path identity when only a zero ratio is configured.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_candidate_selection_argmax_tiebreak_and_zero_ratio_path() {
    let canvas = Canvas::new(16, 16);
    let prev = BBox::new(0, 0, 8, 16);
    let ratios = [0.1, 0.3, 0.5];

    // Hand-computed boxes for biting rightward into an 8-wide previous box
    // with 8 columns of slack: centers land at x = 11, 11, 10.
    let set = generate_candidates(&ratios, PositionChoice::Right, 1, &prev, canvas, |bbox, _| {
        Ok(point_mass_record(bbox, canvas))
    })
    .expect("candidates");
    assert!(set.dropped.is_empty());
    let boxes: Vec<BBox> = set.candidates.iter().map(|c| c.bbox).collect();
    assert_eq!(
        boxes,
        [
            BBox::new(7, 0, 9, 16),
            BBox::new(6, 0, 10, 16),
            BBox::new(4, 0, 12, 16)
        ]
    );

    // A scorer centered at (10, 8) prefers the widest candidate.
    let selection = select_best(set, "blue ball", &MockScorer::new(10.0, 8.0)).expect("selection");
    let scores: Vec<f64> = selection
        .candidates
        .iter()
        .map(|c| c.score.expect("every candidate scored"))
        .collect();
    assert_eq!(scores, [-1.0, -1.0, 0.0]);
    assert_eq!(selection.chosen, 2);
    assert_eq!(selection.chosen_candidate().ratio, 0.5);

    // A tie at (11, 8) resolves toward the smallest ratio.
    let set = generate_candidates(&ratios, PositionChoice::Right, 1, &prev, canvas, |bbox, _| {
        Ok(point_mass_record(bbox, canvas))
    })
    .expect("candidates");
    let selection = select_best(set, "blue ball", &MockScorer::new(11.0, 8.0)).expect("selection");
    let scores: Vec<f64> = selection
        .candidates
        .iter()
        .map(|c| c.score.expect("every candidate scored"))
        .collect();
    assert_eq!(scores, [0.0, 0.0, -1.0]);
    assert_eq!(selection.chosen, 0);
    assert_eq!(selection.chosen_candidate().ratio, 0.1);

    // A single candidate skips scoring entirely.
    let set = generate_candidates(&[0.25], PositionChoice::Right, 1, &prev, canvas, |bbox, _| {
        Ok(point_mass_record(bbox, canvas))
    })
    .expect("candidates");
    let selection = select_best(set, "blue ball", &NeverScorer).expect("selection");
    assert_eq!(selection.chosen, 0);
    assert!(selection.candidates[0].score.is_none());

    // With only r = 0 configured, the overlap branch must reproduce the
    // non-overlap branch exactly, down to the latent bits, without ever
    // consulting the scorer.
    let with_overlap = demo_pipeline_run("Yes");
    let without_overlap = demo_pipeline_run("No");
    assert!(with_overlap.failure.is_none(), "overlap run failed");
    assert!(without_overlap.failure.is_none(), "plain run failed");
    assert!(with_overlap.stages[1].overlap_predicted);
    assert!(!without_overlap.stages[1].overlap_predicted);
    assert_eq!(with_overlap.stages[1].chosen_ratio, Some(0.0));
    assert_eq!(without_overlap.stages[1].chosen_ratio, None);
    assert_eq!(
        with_overlap.stages[1].rough_mask,
        without_overlap.stages[1].rough_mask
    );
    let a = &with_overlap.records[1];
    let b = &without_overlap.records[1];
    assert_eq!(a.precise_mask, b.precise_mask);
    assert_eq!(a.decoded, b.decoded);
    assert_eq!(a.trajectory.len(), b.trajectory.len());
    for (frame, (fa, fb)) in a.trajectory.iter().zip(&b.trajectory).enumerate() {
        assert!(
            latents_bit_identical(fa, fb),
            "zero-ratio paths diverge at stage 2, frame {frame}"
        );
    }

    println!(
        "acceptance criterion 08: PASS -- scorer picked the hand-computed \
         argmax, ties resolved to the smallest ratio, and the zero-ratio \
         overlap path was bit-identical to plain stacking across {} frames",
        a.trajectory.len()
    );
}

// ---------------------------------------------------------------------------
// 9. Determinism and replay: byte-identical artifacts across runs, and
//    precise divergence localization under tampering.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_runs_are_byte_identical_and_replay_localizes_tampering() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    demo_run(&run_a);
    demo_run(&run_b);

    // Identical settings must reproduce every artifact byte for byte. Wall
    // time is recorded in its own file, deliberately outside the manifest.
    let artifacts = [
        "manifest.json",
        "final.png",
        "stage_1/image.png",
        "stage_1/masks.json",
        "stage_1/feedback.json",
        "stage_1/trajectory.bin",
        "stage_2/image.png",
        "stage_2/masks.json",
        "stage_2/feedback.json",
        "stage_2/trajectory.bin",
    ];
    for name in artifacts {
        let a = fs::read(run_a.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        let b = fs::read(run_b.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // An untouched recording replays clean.
    let (ok, log) = replay(&run_a.join("manifest.json"));
    assert!(ok, "clean replay failed: {log}");
    assert!(log.contains("all identical to the recording"), "{log}");

    // A different seed diverges at the very first frame of stage 1.
    let seed_edit = tmp.path().join("seed-edit");
    copy_dir(&run_a, &seed_edit);
    edit_manifest(&seed_edit, "\"seed\": 11", "\"seed\": 12");
    let (ok, log) = replay(&seed_edit.join("manifest.json"));
    assert!(!ok, "seed edit went unnoticed");
    assert!(
        log.contains("divergence at stage 1, frame 0 (timestep 8)"),
        "seed edit localized wrong: {log}"
    );

    // A different learning rate first bites after the first guided step.
    let lr_edit = tmp.path().join("lr-edit");
    copy_dir(&run_a, &lr_edit);
    edit_manifest(&lr_edit, "\"lr\": 60.0", "\"lr\": 61.0");
    let (ok, log) = replay(&lr_edit.join("manifest.json"));
    assert!(!ok, "learning-rate edit went unnoticed");
    assert!(
        log.contains("divergence at stage 1, frame 1 (timestep 7)"),
        "learning-rate edit localized wrong: {log}"
    );

    // A flipped byte inside a recorded trajectory pins the right stage.
    let blob_edit = tmp.path().join("blob-edit");
    copy_dir(&run_a, &blob_edit);
    let blob_path = blob_edit.join("stage_2/trajectory.bin");
    let mut bytes = fs::read(&blob_path).expect("blob");
    let n = bytes.len();
    bytes[n - 7] ^= 0x20;
    fs::write(&blob_path, bytes).expect("write tampered blob");
    let (ok, log) = replay(&blob_edit.join("manifest.json"));
    assert!(!ok, "tampered blob went unnoticed");
    assert!(
        log.contains("divergence at stage 2"),
        "blob tamper localized wrong: {log}"
    );

    println!(
        "acceptance criterion 09: PASS -- two identical runs matched on all \
         {} artifacts byte for byte; replay verified the clean recording and \
         localized seed, learning-rate, and trajectory tampering to the \
         expected stage and frame",
        artifacts.len()
    );
}

// ---------------------------------------------------------------------------
// 10. Eval harness: scripted judge reproduces hand-computed percentages.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_eval_percentages_match_hand_computed_values() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out = tmp.path().join("run");
    demo_run(&out);

    // The demo judge answers yes to both presence checks and the first
    // attribute, no to the second attribute and the spatial check: 100% of
    // objects, 50% of attributes, 0% spatial, 3 of 5 overall.
    let report = tmp.path().join("report.txt");
    let output = easel(&[
        "eval",
        "--images",
        out.to_str().unwrap(),
        "--prompts",
        "fixtures/demo_prompts.txt",
        "--judge",
        "scripted:fixtures/demo_judge.txt",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    let total = stdout
        .lines()
        .find(|l| l.starts_with("TOTAL"))
        .expect("summary row");
    let fields: Vec<&str> = total.split_whitespace().collect();
    assert_eq!(fields, ["TOTAL", "100.00", "50.00", "0.00", "60.00"]);

    // An aspect with no questions reports n/a rather than a fake number.
    let images = tmp.path().join("images");
    fs::create_dir(&images).expect("images dir");
    fs::copy(out.join("final.png"), images.join("chair.png")).expect("copy image");
    let prompts = tmp.path().join("prompts.txt");
    fs::write(&prompts, "a quiet chair | chair\n").expect("prompts");
    let judge = tmp.path().join("judge.txt");
    fs::write(&judge, "on-exhausted: repeat-last\nreply: Yes\n").expect("judge");
    let report2 = tmp.path().join("report2.txt");
    let output = easel(&[
        "eval",
        "--images",
        images.to_str().unwrap(),
        "--prompts",
        prompts.to_str().unwrap(),
        "--judge",
        &format!("scripted:{}", judge.display()),
        "--report",
        report2.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "single-object eval failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    let row = stdout
        .lines()
        .find(|l| l.starts_with("chair.png"))
        .expect("image row");
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields, ["chair.png", "100.00", "n/a", "n/a", "100.00"]);

    println!(
        "acceptance criterion 10: PASS -- scripted judging reproduced the \
         hand-computed 100/50/0/60 split, and questionless aspects reported \
         n/a instead of a number"
    );
}

// ---------------------------------------------------------------------------
// 11. Optional live smoke run against real endpoints.
// ---------------------------------------------------------------------------

/// Needs live endpoints. Point the four EASEL_SMOKE_* variables at port specs
/// (see `easel run --help`) and run with `--ignored`:
///
///   EASEL_SMOKE_BACKEND='cmd:...' EASEL_SMOKE_PLANNER='cmd:...' \
///   EASEL_SMOKE_CHECKER='cmd:...' \
///   cargo test -p easel-cli --test acceptance -- --ignored
///
/// Only completion, stage count, and manifest validity are asserted; image
/// quality is explicitly out of scope.
#[test]
#[ignore = "needs live endpoints; set EASEL_SMOKE_BACKEND/PLANNER/CHECKER and run with --ignored"]
fn criterion_11_live_smoke_run_completes_with_two_stages() {
    let backend = std::env::var("EASEL_SMOKE_BACKEND")
        .expect("EASEL_SMOKE_BACKEND must hold a denoiser port spec");
    let planner = std::env::var("EASEL_SMOKE_PLANNER")
        .expect("EASEL_SMOKE_PLANNER must hold a text port spec");
    let checker = std::env::var("EASEL_SMOKE_CHECKER")
        .expect("EASEL_SMOKE_CHECKER must hold a judge port spec");
    let scorer = std::env::var("EASEL_SMOKE_SCORER").unwrap_or_else(|_| "mock:center".into());

    let tmp = tempfile::tempdir().expect("tempdir");
    let out = tmp.path().join("run");
    let output = easel(&[
        "run",
        "--prompt",
        "the orange pumpkin is on the right side of the black door",
        "--seed",
        "11",
        "--backend",
        &backend,
        "--planner",
        &planner,
        "--checker",
        &checker,
        "--scorer",
        &scorer,
        "--out",
        out.to_str().unwrap(),
        "--save-intermediates",
    ]);
    assert!(
        output.status.success(),
        "live run failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let m = manifest::load(&out.join("manifest.json")).expect("manifest validates");
    assert_eq!(m.status, "complete");
    assert_eq!(m.stages.len(), 2, "expected one stage per object");

    println!(
        "acceptance criterion 11: PASS -- live smoke run completed with 2 \
         stages and a valid manifest at {}",
        out.join("manifest.json").display()
    );
}

// ---------------------------------------------------------------------------
// Shared plumbing.
// ---------------------------------------------------------------------------

fn below(rng: &mut SplitMix64, n: u32) -> u32 {
    (rng.next_u64() % n as u64) as u32
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("workspace root")
        .to_path_buf()
}

/// Runs the CLI from the workspace root so the demo fixture paths resolve.
fn easel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_easel"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .expect("spawn easel")
}

fn demo_run(out: &Path) {
    let output = easel(&[
        "run",
        "--config",
        "fixtures/demo.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "demo run failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn replay(manifest_path: &Path) -> (bool, String) {
    let output = easel(&["replay", "--manifest", manifest_path.to_str().unwrap()]);
    let mut log = String::from_utf8_lossy(&output.stdout).into_owned();
    log.push_str(&String::from_utf8_lossy(&output.stderr));
    (output.status.success(), log)
}

fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).expect("create copy target");
    for entry in fs::read_dir(src).expect("read source dir") {
        let entry = entry.expect("dir entry");
        let to = dst.join(entry.file_name());
        if entry.file_type().expect("file type").is_dir() {
            copy_dir(&entry.path(), &to);
        } else {
            fs::copy(entry.path(), &to).expect("copy file");
        }
    }
}

fn edit_manifest(run_dir: &Path, from: &str, to: &str) {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).expect("manifest text");
    assert!(text.contains(from), "manifest lacks {from:?}");
    fs::write(&path, text.replace(from, to)).expect("write edited manifest");
}

fn latents_bit_identical(a: &LatentState, b: &LatentState) -> bool {
    a.channels() == b.channels()
        && a.canvas() == b.canvas()
        && a.values().len() == b.values().len()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Minimal stage record for feedback-loop tests; the stage field encodes
/// which attempt produced it.
fn tiny_record(stage: u32) -> StageRecord {
    let canvas = Canvas::new(4, 4);
    let z = LatentState::from_fn(1, canvas, |_, u, v| (u + v) as f64);
    StageRecord {
        stage,
        subprompt: "orange pumpkin".into(),
        token: 1,
        rough_mask: BBox::new(0, 0, 2, 4),
        trajectory: vec![z.clone(), z],
        precise_mask: BBox::new(0, 0, 2, 2),
        decoded: DecodedImage {
            luma: Grid::zeros(4, 4),
            token_planes: vec![],
        },
    }
}

/// Stage record whose head-noun plane is a single unit spike at the center
/// of `bbox`, so a center-targeting scorer ranks candidates by geometry.
fn point_mass_record(bbox: &BBox, canvas: Canvas) -> StageRecord {
    let cx = bbox.x + bbox.w / 2;
    let cy = 8;
    let mass = Grid::from_fn(canvas.width, canvas.height, |u, v| {
        if u == cx && v == cy {
            1.0
        } else {
            0.0
        }
    });
    StageRecord {
        stage: 2,
        subprompt: "blue ball".into(),
        token: 1,
        rough_mask: *bbox,
        trajectory: vec![],
        precise_mask: *bbox,
        decoded: DecodedImage {
            luma: Grid::zeros(canvas.width, canvas.height),
            token_planes: vec![
                ("blue".into(), Grid::zeros(canvas.width, canvas.height)),
                ("ball".into(), mass),
            ],
        },
    }
}

/// Scorer that must never be reached; selection paths with nothing to rank
/// are required to skip scoring.
struct NeverScorer;

impl ScorerPort for NeverScorer {
    fn score(&self, _image: &DecodedImage, _text: &str) -> Result<f64, PortError> {
        panic!("selection consulted the scorer on a path that must skip it");
    }
}

/// Library-level two-object run on the toy backend with only a zero overlap
/// ratio configured; `overlap_reply` steers the planner's overlap question.
fn demo_pipeline_run(overlap_reply: &str) -> PipelineRun {
    let script = format!(
        "match: list the objects\nreply: 1. black door\\n2. orange pumpkin\n---\n\
         match: where to put\nreply: left\n---\n\
         match: horizontal direction\nreply: 2\n---\n\
         match: what is the position\nreply: right\n---\n\
         match: how many objects are there\nreply: 1\n---\n\
         match: any overlapping\nreply: {overlap_reply}\n"
    );
    let mut planner = ScriptedReplies::parse(&script).expect("planner script");
    let mut checker =
        ScriptedReplies::parse("on-exhausted: repeat-last\nreply: Yes\n").expect("checker script");
    let toy = ToyDenoiser::new(ToyConfig::default());
    let mut config = PipelineConfig::new("the orange pumpkin is on the right side of the black door");
    config.seed = 9;
    config.overlap_ratios = vec![0.0];
    run_pipeline(
        &config,
        Ports {
            planner: &mut planner,
            denoiser: &toy,
            checker: &mut checker,
            scorer: &NeverScorer,
        },
    )
}
