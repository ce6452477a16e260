//! End-to-end acceptance suite. Every criterion runs in one test so the heavy
//! ones do not compete for cores, and each prints a single PASS/FAIL line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use sharedworld::eval::{oracle_eval, paired_eval, position_probe, probe_targets, ProbeSummary};
use sharedworld::model::Denoiser;
use sharedworld::train::Trainer;
use sharedworld::verify::{self, Check};
use sharedworld::world::generate_clips;
use sharedworld::Config;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn from_checks(checks: &[Check]) -> (bool, String) {
    let ok = checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| format!("{}={}", c.name, if c.passed { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, detail)
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = verify::gradcheck(1e-4).map_err(e)?;
    let elapsed = start.elapsed();
    let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
    let covers = ["raymap.0.fc1", "raymap.0.fc2", "cross.0.attn.qkv", "cross.0.proj"]
        .iter()
        .all(|n| names.iter().any(|m| m.starts_with(n)));
    let ok = report.passed() && covers && elapsed < Duration::from_secs(300);
    Ok((
        ok,
        format!(
            "{} tensors, max rel err {:.2e} (< 1e-4), {:.1}s",
            report.params.len(),
            report.max_rel_error(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn shape_contract() -> Outcome {
    let c = verify::paper_scale_shapes().map_err(e)?;
    Ok((c.passed, c.detail))
}

fn zero_init() -> Outcome {
    let cfg = Config::desk();
    let checks = [
        verify::zero_init_transparency::<f32>(&cfg).map_err(e)?,
        verify::zero_init_transparency::<f64>(&Config::gradcheck()).map_err(e)?,
        verify::agent_isolation_at_init::<f32>(&cfg).map_err(e)?,
    ];
    Ok(from_checks(&checks))
}

fn raymap_suite() -> Outcome {
    let n = verify::RAYMAP_SEEDS;
    let checks = [
        verify::raymap_unit_depth(n).map_err(e)?,
        verify::raymap_zero_centroid(n).map_err(e)?,
        verify::raymap_rigid_equivariance(n).map_err(e)?,
    ];
    let (ok, detail) = from_checks(&checks);
    Ok((ok && n >= 20, format!("{n} seeds: {detail}")))
}

/// Pinned overfit setup: learning rate and the fixed evaluation draws.
const OVERFIT_LR: f64 = 2e-3;
const OVERFIT_STEPS: u64 = 500;
const OVERFIT_EVAL_DRAWS: u64 = 16;
/// Fixed-draw loss before and after the pinned run, for drift detection.
const OVERFIT_PINNED: (f64, f64) = (1.0504, 0.0924);

fn overfit() -> Outcome {
    let start = Instant::now();
    let mut cfg = Config::desk();
    cfg.train.lr = OVERFIT_LR;
    cfg.train.steps = OVERFIT_STEPS;
    let clip = generate_clips(11, 1, cfg.data.view_h, cfg.data.view_w, cfg.ablate.four_views, |_| {})
        .map_err(e)?
        .remove(0);
    let mut t = Trainer::<f32>::new(&cfg).map_err(e)?;
    let data = vec![t.prepare(&clip).map_err(e)?];
    let held = |t: &Trainer<f32>| -> Result<f64, String> {
        let mut total = 0.0;
        for k in 0..OVERFIT_EVAL_DRAWS {
            let draws = t.draws(1_000_000 + k);
            total += t.loss_and_grads(&[&data[0]], &draws).map_err(e)?.0;
        }
        Ok(total / OVERFIT_EVAL_DRAWS as f64)
    };
    let before = held(&t)?;
    let losses = t.fit(&data, |_, _| {}).map_err(e)?;
    let after = held(&t)?;
    let ratio = after / before;
    let elapsed = start.elapsed();
    let drift = |pinned: f64, got: f64| ((got - pinned) / pinned).abs() < 1e-2;
    let pinned_ok = drift(OVERFIT_PINNED.0, before) && drift(OVERFIT_PINNED.1, after);
    let ok = ratio < 0.1 && elapsed < Duration::from_secs(1800) && pinned_ok;
    Ok((
        ok,
        format!(
            "fixed-draw loss {before:.4} -> {after:.4} (ratio {ratio:.3} < 0.1), step losses {:.3} -> {:.3}, {:.0}s",
            losses[0],
            losses[losses.len() - 1],
            elapsed.as_secs_f64()
        ),
    ))
}

/// Pinned toy-training budget.
const TOY_TRAIN_PAIRS: usize = 200;
const TOY_HELD_OUT_PAIRS: usize = 8;
const TOY_STEPS: u64 = 600;
const TOY_LR: f64 = 1e-3;
const TOY_TRAIN_SEED: u64 = 1;
const TOY_HELD_OUT_SEED: u64 = 2;

fn toy_training() -> Outcome {
    let mut cfg = Config::desk();
    cfg.train.lr = TOY_LR;
    cfg.train.steps = TOY_STEPS;
    let d = &cfg.data;
    let four = cfg.ablate.four_views;
    let train = generate_clips(TOY_TRAIN_SEED, TOY_TRAIN_PAIRS, d.view_h, d.view_w, four, |_| {}).map_err(e)?;
    let held = generate_clips(TOY_HELD_OUT_SEED, TOY_HELD_OUT_PAIRS, d.view_h, d.view_w, four, |_| {}).map_err(e)?;
    let unseen = held
        .iter()
        .all(|h| train.iter().all(|t| t.spec.scene_seed != h.spec.scene_seed));

    let mut t = Trainer::<f32>::new(&cfg).map_err(e)?;
    let data = train.iter().map(|c| t.prepare(c)).collect::<Result<Vec<_>, _>>().map_err(e)?;
    let untrained = t.state.params.clone();
    t.fit(&data, |_, _| {}).map_err(e)?;

    let base = paired_eval(&cfg, &untrained, &held, 0, |_| {}).map_err(e)?;
    let trained = paired_eval(&cfg, &t.state.params, &held, 0, |_| {}).map_err(e)?;
    let f0 = trained.frame0_psnr_mean();
    let gain = trained.psnr_mean() - base.psnr_mean();
    let ok = unseen && f0 > 30.0 && gain >= 3.0;
    Ok((
        ok,
        format!(
            "frame-0 PSNR {f0:.2} dB (> 30), paired PSNR {:.2} vs untrained {:.2} dB (gain {gain:.2} >= 3), SSIM {:.3} vs {:.3}",
            trained.psnr_mean(),
            base.psnr_mean(),
            trained.ssim_mean(),
            base.ssim_mean()
        ),
    ))
}

fn probe_validity() -> Outcome {
    let cfg = Config::desk();
    let d = &cfg.data;
    let clips = generate_clips(3, 12, d.view_h, d.view_w, cfg.ablate.four_views, |_| {}).map_err(e)?;
    let mut frames = Vec::new();
    for clip in &clips {
        for agent in 0..2 {
            let targets = probe_targets(clip, agent, clip.frames(), cfg.eval.probe_range).map_err(e)?;
            frames.extend(position_probe(
                &clip.videos[agent],
                clip.four_views,
                &targets,
                cfg.eval.red_ratio,
                cfg.eval.red_min,
            ));
        }
    }
    let s = ProbeSummary::of(&frames);
    let ok = s.frames >= 50 && s.mean_px < 2.0 && s.miss_rate() < 0.05;
    Ok((
        ok,
        format!(
            "{} frames, mean error {:.3} px (< 2), miss rate {:.3} (< 0.05)",
            s.frames,
            s.mean_px,
            s.miss_rate()
        ),
    ))
}

fn ablation_wiring() -> Outcome {
    let cfg = Config::desk();
    let checks = [
        verify::cross_agent_off_independent::<f32>(&cfg).map_err(e)?,
        verify::raw_values_spatially_constant::<f64>(&cfg).map_err(e)?,
        verify::four_views_off_front_only(&cfg).map_err(e)?,
    ];
    let (mut ok, mut detail) = from_checks(&checks);

    // Front-only data flows through training and evaluation without view quadrants.
    let mut front = cfg.clone();
    front.ablate.four_views = false;
    front.train.steps = 1;
    let clips = generate_clips(5, 1, front.data.view_h, front.data.view_w, false, |_| {}).map_err(e)?;
    let mut t = Trainer::<f32>::new(&front).map_err(e)?;
    let data = vec![t.prepare(&clips[0]).map_err(e)?];
    t.fit(&data, |_, _| {}).map_err(e)?;
    let report = oracle_eval(&front, &clips).map_err(e)?;
    let front_only = report.clips.iter().all(|c| c.views.is_empty()) && !clips[0].four_views;
    ok &= front_only;
    detail.push_str(&format!(", front-only train/eval={}", if front_only { "ok" } else { "FAIL" }));

    // The three arms build structurally different parameter sets.
    let names = |c: &Config| -> Result<Vec<String>, String> {
        let m = Denoiser::new(c).map_err(e)?;
        Ok(m.init_params::<f32>(0).map_err(e)?.names().cloned().collect())
    };
    let mut off = cfg.clone();
    off.ablate.cross_agent = false;
    let mut raw = cfg.clone();
    raw.ablate.raymap_mode = sharedworld::config::RaymapMode::RawValues;
    let full = names(&cfg)?;
    let distinct = !names(&off)?.iter().any(|n| n.starts_with("cross."))
        && names(&raw)?.iter().any(|n| n.starts_with("rawcam."))
        && !names(&raw)?.iter().any(|n| n.starts_with("raymap."))
        && full.iter().any(|n| n.starts_with("cross."));
    ok &= distinct;
    detail.push_str(&format!(", parameter sets distinct={}", if distinct { "ok" } else { "FAIL" }));
    Ok((ok, detail))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sharedworld")
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(e)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Every file under `root`, relative path and contents, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let root = dir.path();
    let conf = root.join("run.conf");
    std::fs::write(&conf, "train.steps=3\ntrain.lr=0.001\neval.sample_steps=4\n").map_err(e)?;
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let conf = conf.to_string_lossy().into_owned();
    let mut same = Vec::new();
    for r in ["a", "b"] {
        run(&["gen-data", "--config", &conf, "--out", &p(&format!("{r}/data")), "--pairs", "2", "--seed", "7"])?;
        run(&["train", "--config", &conf, "--data", &p(&format!("{r}/data")), "--out", &p(&format!("{r}/ckpt"))])?;
        run(&[
            "sample",
            "--ckpt",
            &p(&format!("{r}/ckpt")),
            "--clip",
            &p(&format!("{r}/data/clip_00000")),
            "--out",
            &p(&format!("{r}/sample")),
            "--seed",
            "3",
            "--steps",
            "4",
        ])?;
        run(&["eval", "--ckpt", &p(&format!("{r}/ckpt")), "--data", &p(&format!("{r}/data")), "--report", &p(&format!("{r}/report.txt"))])?;
        same.push(tree(&root.join(r)));
    }
    let files = same[0].len();
    let kinds = ["data/clip_00001/manifest.txt", "ckpt", "sample/agent2.svt", "report.txt"];
    let complete = kinds.iter().all(|k| same[0].iter().any(|(p, _)| p == Path::new(k)));
    let ok = complete && same[0] == same[1];
    Ok((ok, format!("{files} output files byte-identical across two full runs")))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("shape contract", shape_contract),
        ("zero-init transparency", zero_init),
        ("raymap invariant suite", raymap_suite),
        ("overfit check", overfit),
        ("toy training check", toy_training),
        ("position-probe validity", probe_validity),
        ("ablation wiring", ablation_wiring),
        ("determinism", determinism),
    ];
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = f().unwrap_or_else(|err| (false, format!("error: {err}")));
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
