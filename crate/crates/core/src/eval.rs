//! Paired reconstruction metrics, the other-agent position probe, and reports.

use std::fmt::Write as _;

use swtensor::{par, Element, ParamSet};

use crate::camera::{CameraFrame, CameraTrack};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{ddim_sample, Denoiser, PreparedPair, SampleRequest, Schedule, Vae};
use crate::world::{generate_scene, simulate_pair, ClipPair, Image, Video, View};

/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 99.0;
/// Closest distance at which the other agent is probed, meters.
pub const PROBE_MIN_RANGE: f64 = 4.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Dimension(format!(
            "frames differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// `10·log10(255² / MSE)`, capped for identical frames.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    let mse = sse / a.data.len() as f64;
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = k.iter().enumerate().map(|(i, kv)| kv * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = k.iter().enumerate().map(|(i, kv)| kv * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!("SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let plane = |img: &Image| -> Vec<f64> { img.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect() };
        let (x, y) = (plane(a), plane(b));
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let mxx = filter_valid(&prod(&x, &x), h, w, &k);
        let myy = filter_valid(&prod(&y, &y), h, w, &k);
        let mxy = filter_valid(&prod(&x, &y), h, w, &k);
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Quadrant of a four-view grid frame holding `view`.
pub fn view_region(img: &Image, view: View) -> Image {
    let q = View::ALL.iter().position(|&v| v == view).expect("listed");
    let (qh, qw) = (img.height / 2, img.width / 2);
    img.crop((q / 2) * qh, (q % 2) * qw, qh, qw)
}

/// Front-view image of a grid frame.
pub fn front_view(img: &Image, four_views: bool) -> Image {
    if four_views {
        view_region(img, View::Front)
    } else {
        img.clone()
    }
}

/// Centroid of red-dominant pixels in continuous pixel coordinates.
pub fn red_centroid(img: &Image, ratio: f64, min_r: u8) -> Option<(f64, f64)> {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
    for y in 0..img.height {
        for x in 0..img.width {
            let [r, g, b] = img.pixel(y, x);
            if r > min_r && r as f64 > ratio * g.max(b) as f64 {
                su += x as f64 + 0.5;
                sv += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (su / n as f64, sv / n as f64))
}

/// One probed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeFrame {
    pub frame: usize,
    /// Projection of the other agent's body center in front-view pixels.
    pub expected: (f64, f64),
    pub detected: Option<(f64, f64)>,
}

impl ProbeFrame {
    pub fn error(&self) -> Option<f64> {
        self.detected
            .map(|(u, v)| ((u - self.expected.0).powi(2) + (v - self.expected.1).powi(2)).sqrt())
    }
}

/// Probe-eligible frames: the other agent's center projects inside the own front
/// view, lies within range, and has an unobstructed line of sight.
pub fn probe_targets(
    clip: &ClipPair,
    agent: usize,
    frames: usize,
    max_range: f64,
) -> Result<Vec<(usize, (f64, f64))>> {
    let scene = generate_scene(clip.spec.scene_seed, clip.spec.weather);
    let agents = simulate_pair(clip.spec.pattern, &scene, clip.spec.traj_seed)?;
    let other = &agents[1 - agent];
    let track: &CameraTrack = &clip.tracks[agent];
    let scale = if clip.four_views { 0.5 } else { 1.0 };
    let mut out = Vec::new();
    for (k, src) in clip.source_frames().into_iter().take(frames).enumerate() {
        let cam: &CameraFrame = &track.frames()[k];
        let center = other.body_center(src);
        let eye = cam.pose.translation;
        let dist = (center - eye).norm();
        if !(PROBE_MIN_RANGE..=max_range).contains(&dist) {
            continue;
        }
        let Some((u, v, _)) = cam.project(center) else { continue };
        if !cam.sees(center) || !crate::world::line_of_sight(&scene, eye, center) {
            continue;
        }
        out.push((k, (u * scale, v * scale)));
    }
    Ok(out)
}

/// Runs the red-centroid detector on the front view of `video` at every target.
pub fn position_probe(video: &Video, four_views: bool, targets: &[(usize, (f64, f64))], ratio: f64, min_r: u8) -> Vec<ProbeFrame> {
    targets
        .iter()
        .map(|&(k, expected)| ProbeFrame {
            frame: k,
            expected,
            detected: red_centroid(&front_view(&video.frame(k), four_views), ratio, min_r),
        })
        .collect()
}

/// Mean pixel error over detections and the miss fraction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeSummary {
    pub frames: usize,
    pub misses: usize,
    pub mean_px: f64,
}

impl ProbeSummary {
    pub fn of(frames: &[ProbeFrame]) -> Self {
        let errs: Vec<f64> = frames.iter().filter_map(ProbeFrame::error).collect();
        ProbeSummary {
            frames: frames.len(),
            misses: frames.len() - errs.len(),
            mean_px: if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 },
        }
    }

    pub fn miss_rate(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.misses as f64 / self.frames as f64
        }
    }
}

/// Metrics of one clip pair, averaged over both agents.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMetrics {
    pub id: usize,
    /// Frames after the conditioning frame.
    pub psnr: f64,
    pub ssim: f64,
    /// Generated frame 0 against the conditioning frame.
    pub frame0_psnr: f64,
    /// `(view name, psnr)` per four-view quadrant.
    pub views: Vec<(&'static str, f64)>,
    pub probe: Vec<ProbeFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub clips: Vec<ClipMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn psnr_mean(&self) -> f64 {
        mean(self.clips.iter().map(|c| c.psnr))
    }

    pub fn ssim_mean(&self) -> f64 {
        mean(self.clips.iter().map(|c| c.ssim))
    }

    pub fn frame0_psnr_mean(&self) -> f64 {
        mean(self.clips.iter().map(|c| c.frame0_psnr))
    }

    pub fn probe(&self) -> ProbeSummary {
        let all: Vec<ProbeFrame> = self.clips.iter().flat_map(|c| c.probe.iter().copied()).collect();
        ProbeSummary::of(&all)
    }

    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = self.probe();
        let _ = writeln!(s, "clips={}", self.clips.len());
        let _ = writeln!(s, "psnr.mean={:.6}", self.psnr_mean());
        let _ = writeln!(s, "ssim.mean={:.6}", self.ssim_mean());
        let _ = writeln!(s, "frame0.psnr.mean={:.6}", self.frame0_psnr_mean());
        if let Some(first) = self.clips.first() {
            for (i, (name, _)) in first.views.iter().enumerate() {
                let m = mean(self.clips.iter().map(|c| c.views[i].1));
                let _ = writeln!(s, "view.{name}.psnr={m:.6}");
            }
        }
        let _ = writeln!(s, "probe.frames={}", p.frames);
        let _ = writeln!(s, "probe.mean_px={:.6}", p.mean_px);
        let _ = writeln!(s, "probe.miss_rate={:.6}", p.miss_rate());
        for c in &self.clips {
            let _ = writeln!(s, "clip_{:05}.psnr={:.6}", c.id, c.psnr);
            let _ = writeln!(s, "clip_{:05}.ssim={:.6}", c.id, c.ssim);
        }
        s
    }
}

/// Compares generated videos against ground truth; frame 0 is scored separately.
pub fn score_clip(
    cfg: &Config,
    id: usize,
    clip: &ClipPair,
    generated: &[Video; 2],
) -> Result<ClipMetrics> {
    let gt = clip.truncated(cfg.data.frames)?;
    let (mut ps, mut ss, mut f0) = (Vec::new(), Vec::new(), Vec::new());
    let mut views: Vec<(&'static str, Vec<f64>)> = if clip.four_views {
        View::ALL.iter().map(|v| (v.name(), Vec::new())).collect()
    } else {
        Vec::new()
    };
    let mut probe = Vec::new();
    for (i, (g, t)) in generated.iter().zip(&gt.videos).enumerate() {
        if g.shape() != t.shape() {
            return Err(Error::Dimension(format!("generated {:?} vs ground truth {:?}", g.shape(), t.shape())));
        }
        f0.push(psnr(&g.frame(0), &t.frame(0))?);
        for k in 1..g.frames {
            let (a, b) = (g.frame(k), t.frame(k));
            ps.push(psnr(&a, &b)?);
            ss.push(ssim(&a, &b)?);
            for (j, (_, acc)) in views.iter_mut().enumerate() {
                acc.push(psnr(&view_region(&a, View::ALL[j]), &view_region(&b, View::ALL[j]))?);
            }
        }
        let targets = probe_targets(clip, i, cfg.data.frames, cfg.eval.probe_range)?;
        probe.extend(position_probe(g, clip.four_views, &targets, cfg.eval.red_ratio, cfg.eval.red_min));
    }
    Ok(ClipMetrics {
        id,
        psnr: mean(ps.into_iter()),
        ssim: mean(ss.into_iter()),
        frame0_psnr: mean(f0.into_iter()),
        views: views.into_iter().map(|(n, v)| (n, mean(v.into_iter()))).collect(),
        probe,
    })
}

/// Samples both agents of one clip conditioned on frame 0 and the camera tracks.
pub fn generate_clip<T: Element>(
    cfg: &Config,
    model: &Denoiser,
    params: &ParamSet<T>,
    clip: &ClipPair,
    seed: u64,
    steps: usize,
) -> Result<[Video; 2]> {
    let vae = Vae::new(cfg)?;
    let schedule = Schedule::new(cfg.model.schedule, cfg.model.diffusion_steps)?;
    let prepared = PreparedPair::<T>::new(cfg, &vae, clip)?;
    let cameras = prepared.cameras(cfg, None)?;
    let req = SampleRequest {
        cond: prepared.latents.clone(),
        cameras,
        steps,
        seed,
        clip_x0: vae.is_invertible(),
    };
    let [a, b] = ddim_sample(model, params, &schedule, &req)?;
    Ok([vae.decode(&a)?, vae.decode(&b)?])
}

/// Generates and scores every clip; clip `i` samples with seed `seed + i`.
pub fn paired_eval<T: Element>(
    cfg: &Config,
    params: &ParamSet<T>,
    clips: &[ClipPair],
    seed: u64,
    progress: impl Fn(usize) + Sync,
) -> Result<EvalReport> {
    let model = Denoiser::new(cfg)?;
    model.check_params(params)?;
    let clips = par::try_map_range(clips.len(), |i| -> Result<ClipMetrics> {
        let videos = generate_clip(cfg, &model, params, &clips[i], seed.wrapping_add(i as u64), cfg.eval.sample_steps)?;
        let m = score_clip(cfg, i, &clips[i], &videos)?;
        progress(i);
        Ok(m)
    })?;
    Ok(EvalReport { clips })
}

/// Ground truth scored against itself, a sanity check of the metric plumbing.
pub fn oracle_eval(cfg: &Config, clips: &[ClipPair]) -> Result<EvalReport> {
    let clips = clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let gt = c.truncated(cfg.data.frames)?;
            score_clip(cfg, i, c, &gt.videos)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { clips })
}
