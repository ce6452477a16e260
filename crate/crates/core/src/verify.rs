//! Property suite behind the `invariants` and `gradcheck` commands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swtensor::{finite_diff_check, Element, GradReport, Graph, ParamSet, Tensor};

use crate::camera::{
    build_raymap_frames, mean_normalize, pixel_ray_directions, raw_camera_values, CameraFrame,
    CameraIntrinsics, CameraPose, CameraTrack,
};
use crate::config::{Config, RaymapMode, VaeMode};
use crate::error::Result;
use crate::geom::{Mat3, Vec3};
use crate::model::{pair_loss, AgentInput, Denoiser, Schedule, Vae};
use crate::train::{decode_checkpoint, encode_checkpoint, TrainState, Trainer};
use crate::world::{front_track, generate_pair_clips, generate_scene, render_view, sequence_specs, simulate_pair};

/// Seeds per randomized raymap property.
pub const RAYMAP_SEEDS: u64 = 24;
/// Tolerance of the rigid-motion equivariance check.
pub const EQUIVARIANCE_TOL: f64 = 1e-6;

/// Outcome of one property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

fn max_abs_diff<T: Element>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).abs())
        .fold(0.0, f64::max)
}

fn bitwise_eq<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_f64().unwrap().to_bits() == y.to_f64().unwrap().to_bits())
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    Vec3([0; 3].map(|_| rng.sample::<f64, _>(StandardNormal))).normalized()
}

/// Random rigid camera trajectory with `frames` poses.
pub fn random_track(rng: &mut impl Rng, frames: usize, height: usize, width: usize) -> CameraTrack {
    let k = CameraIntrinsics::wide(height, width);
    let frames = (0..frames)
        .map(|_| CameraFrame {
            intrinsics: k,
            pose: CameraPose {
                rotation: Mat3::axis_angle(unit_vector(rng), rng.gen_range(-3.0..3.0)),
                translation: Vec3([0; 3].map(|_| rng.gen_range(-50.0..50.0))),
            },
        })
        .collect();
    CameraTrack::new(frames).expect("valid frames")
}

/// Every parameter drawn from `N(0, std²)`, waking zero-initialized branches.
pub fn randomize_params<T: Element>(ps: &ParamSet<T>, seed: u64, std: f64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ps.clone();
    for (name, t) in ps.iter() {
        out.set(name, Tensor::randn(t.shape(), std, &mut rng)).expect("same shape");
    }
    out
}

/// Random inputs for both agents under `cfg`'s camera mode.
pub fn random_inputs<T: Element>(cfg: &Config, seed: u64) -> Result<[AgentInput<T>; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = cfg.latent_shape().dims();
    let tracks = [0, 1].map(|_| random_track(&mut rng, cfg.data.frames, cfg.data.view_h, cfg.data.view_w));
    let cams = crate::model::camera_inputs::<T>(cfg, [&tracks[0], &tracks[1]], None)?;
    let [c0, c1] = cams;
    let mut mk = |camera: Option<Tensor<T>>| AgentInput {
        x_t: Tensor::randn(&dims, 1.0, &mut rng),
        cond: Tensor::randn(&dims, 1.0, &mut rng),
        camera,
    };
    Ok([mk(c0), mk(c1)])
}

pub fn schedule_variance_preserving(cfg: &Config) -> Result<Check> {
    let s = Schedule::new(cfg.model.schedule, cfg.model.diffusion_steps)?;
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for t in 1..=s.steps() {
        worst = worst.max((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs());
        if t > 1 && s.alpha_bar(t) >= s.alpha_bar(t - 1) {
            monotone = false;
        }
    }
    Ok(Check::new(
        "schedule.variance_preserving",
        worst < 1e-12 && monotone,
        format!("max |a^2+s^2-1| = {worst:.2e}, strictly decreasing = {monotone}"),
    ))
}

pub fn raymap_unit_depth(seeds: u64) -> Result<Check> {
    let mut ok = true;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.gen_range(2..20), rng.gen_range(2..20));
        let k = CameraIntrinsics::new(rng.gen_range(5.0..50.0), rng.gen_range(5.0..50.0), w as f64 / 2.0, h as f64 / 2.0, w, h)?;
        let d = pixel_ray_directions(&k, h, w);
        ok &= d.data().chunks_exact(3).all(|r| r[2] == 1.0);
    }
    Ok(Check::new("raymap.unit_depth_rays", ok, format!("{seeds} random intrinsics")))
}

pub fn raymap_zero_centroid(seeds: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..12);
        let tracks = [random_track(&mut rng, n, 4, 6), random_track(&mut rng, n, 4, 6)];
        let norm = mean_normalize(&tracks, None)?;
        let mut c = Vec3::ZERO;
        for t in &norm {
            for f in t.frames() {
                c = c + f.pose.translation;
            }
        }
        worst = worst.max(c.scale(1.0 / (2 * n) as f64).norm());
    }
    Ok(Check::new("raymap.zero_centroid", worst < 1e-9, format!("max centroid norm {worst:.2e} over {seeds} seeds")))
}

pub fn raymap_rigid_equivariance(seeds: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = 1 + 2 * rng.gen_range(1..4);
        let tracks = [random_track(&mut rng, n, 4, 6), random_track(&mut rng, n, 4, 6)];
        let rg = Mat3::axis_angle(unit_vector(&mut rng), rng.gen_range(-3.0..3.0));
        let d = Vec3([0; 3].map(|_| rng.gen_range(-100.0..100.0)));
        let moved = [tracks[0].transformed(rg, d), tracks[1].transformed(rg, d)];
        let base = mean_normalize(&tracks, None)?;
        let after = mean_normalize(&moved, None)?;
        for i in 0..2 {
            let r0 = build_raymap_frames(&base[i])?;
            let r1 = build_raymap_frames(&after[i])?;
            for (a, b) in r0.data().chunks_exact(3).zip(r1.data().chunks_exact(3)) {
                let want = rg * Vec3([a[0], a[1], a[2]]);
                worst = worst.max((want - Vec3([b[0], b[1], b[2]])).norm());
            }
        }
    }
    Ok(Check::new(
        "raymap.rigid_equivariance",
        worst < EQUIVARIANCE_TOL,
        format!("max deviation {worst:.2e} over {seeds} seeds"),
    ))
}

/// Latent and packed-raymap extents at full resolution, computed by the shape logic
/// the codec and packer use.
pub fn paper_scale_shapes() -> Result<Check> {
    let cfg = Config::paper_scale();
    let vae = Vae::new(&cfg)?;
    let lat = vae.latent_dims(cfg.data.frames, cfg.data.view_h, cfg.data.view_w)?;
    let ray = crate::camera::packed_raymap_dims(
        [cfg.data.frames, cfg.data.view_h, cfg.data.view_w, 6],
        cfg.model.spatial_factor,
        cfg.model.temporal_factor,
    )?;
    let ok = lat == [13, 60, 90] && ray == [13, 60, 90, 24];
    Ok(Check::new("shape.paper_scale", ok, format!("latent {lat:?}, raymap {ray:?}")))
}

pub fn vae_round_trip(cfg: &Config) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (f, h, w) = (cfg.data.frames, cfg.data.view_h, cfg.data.view_w);
    let data: Vec<u8> = (0..f * h * w * 3).map(|_| rng.gen()).collect();
    let v = crate::world::Video::new(f, h, w, data)?;
    let vae = Vae::new(cfg)?;
    let (passed, detail) = match cfg.model.vae_mode {
        VaeMode::Invertible => {
            let z: Tensor<f32> = vae.encode(&v)?;
            (vae.decode(&z)? == v, "decode(encode(x)) == x bitwise".to_string())
        }
        VaeMode::Projection => {
            let lat = cfg.latent_shape();
            let z = Tensor::<f64>::randn(&lat.dims(), 1.0, &mut rng);
            let (vals, [ff, hh, ww]) = vae.decode_values(&z)?;
            let z2 = vae.encode_values(&vals, ff, hh, ww)?;
            let per = lat.height * lat.width * lat.channels;
            let err = max_abs_diff(&z.data()[per..], &z2.data()[per..]);
            (err < 1e-5, format!("encode(decode(z)) error {err:.2e} on frames after the first"))
        }
    };
    Ok(Check::new("vae.round_trip", passed, detail))
}

fn at_init<T: Element>(cfg: &Config) -> Result<(Denoiser, ParamSet<T>)> {
    let mut c = cfg.clone();
    c.ablate.cross_agent = true;
    if c.ablate.raymap_mode == RaymapMode::Off {
        c.ablate.raymap_mode = RaymapMode::Raymap;
    }
    let model = Denoiser::new(&c)?;
    let ps = model.init_params::<T>(c.train.seed)?;
    Ok((model, ps))
}

pub fn zero_init_transparency<T: Element>(cfg: &Config) -> Result<Check> {
    let (model, ps) = at_init::<T>(cfg)?;
    let mut c = cfg.clone();
    c.ablate = model.ablate;
    let inputs = random_inputs::<T>(&c, 5)?;
    let two = model.predict(&ps, &inputs, 500.min(cfg.model.diffusion_steps))?;
    let mut ok = true;
    for i in 0..2 {
        let mut g = Graph::untraced();
        let v = model.forward_single(&mut g, &ps, &inputs[i], 500.min(cfg.model.diffusion_steps))?;
        ok &= bitwise_eq(g.value(v), &two[i]);
    }
    Ok(Check::new("model.zero_init_transparency", ok, "two-agent outputs equal the base model bitwise"))
}

pub fn agent_isolation_at_init<T: Element>(cfg: &Config) -> Result<Check> {
    let (model, ps) = at_init::<T>(cfg)?;
    let mut c = cfg.clone();
    c.ablate = model.ablate;
    let t = 300.min(cfg.model.diffusion_steps);
    let inputs = random_inputs::<T>(&c, 6)?;
    let base = model.predict(&ps, &inputs, t)?;
    let mut moved = inputs.clone();
    moved[1].x_t = moved[1].x_t.map(|v| v + T::c(0.5));
    moved[1].cond = moved[1].cond.map(|v| v * T::c(-1.0));
    let after = model.predict(&ps, &moved, t)?;
    let ok = bitwise_eq(&base[0], &after[0]) && !bitwise_eq(&base[1], &after[1]);
    Ok(Check::new("model.agent_isolation_at_init", ok, "perturbing agent 2 leaves agent 1 bitwise unchanged"))
}

pub fn rope_agent_offset<T: Element>(cfg: &Config) -> Result<Check> {
    let mut c = cfg.clone();
    c.ablate.cross_agent = true;
    let mut model = Denoiser::new(&c)?;
    let ps = randomize_params(&model.init_params::<T>(0)?, 21, 0.2);
    let n = model.latent.tokens();
    let dim = model.model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let feats = [Tensor::<T>::randn(&[n, dim], 1.0, &mut rng), Tensor::<T>::randn(&[n, dim], 1.0, &mut rng)];
    let run = |model: &Denoiser| -> Result<([Tensor<T>; 2], Tensor<T>)> {
        let mut g = Graph::untraced();
        let temb = model.time_embedding(&mut g, &ps, 100.min(model.model.diffusion_steps))?;
        let f0 = g.constant(feats[0].clone())?;
        let f1 = g.constant(feats[1].clone())?;
        let cross = model.cross_block(&mut g, &ps, 0, [f0, f1], temb, &model.cross_rope())?;
        let dit = model.dit_block(&mut g, &ps, 0, f0, temb, &model.within_rope())?;
        Ok(([g.value(cross[0]).clone(), g.value(cross[1]).clone()], g.value(dit).clone()))
    };
    let (cross_a, dit_a) = run(&model)?;
    model.swap_cross_frames = true;
    let (cross_b, dit_b) = run(&model)?;
    let diff = max_abs_diff(cross_a[0].data(), cross_b[0].data()).max(max_abs_diff(cross_a[1].data(), cross_b[1].data()));
    let ok = diff > 1e-6 && bitwise_eq(&dit_a, &dit_b);
    Ok(Check::new(
        "model.rope_agent_offset",
        ok,
        format!("swapped frame ranges change cross attention by {diff:.2e}; DiT blocks unchanged"),
    ))
}

pub fn cross_agent_off_independent<T: Element>(cfg: &Config) -> Result<Check> {
    let mut c = cfg.clone();
    c.ablate.cross_agent = false;
    let model = Denoiser::new(&c)?;
    let t = 300.min(cfg.model.diffusion_steps);
    let mut ok = true;
    for seed in 0..3 {
        let ps = randomize_params(&model.init_params::<T>(seed)?, 40 + seed, 0.1);
        let inputs = random_inputs::<T>(&c, 50 + seed)?;
        let base = model.predict(&ps, &inputs, t)?;
        let mut moved = inputs.clone();
        moved[1].x_t = moved[1].x_t.map(|v| v * T::c(-0.7) + T::c(0.2));
        if let Some(cam) = &moved[1].camera {
            moved[1].camera = Some(cam.map(|v| v + T::c(1.0)));
        }
        let after = model.predict(&ps, &moved, t)?;
        ok &= bitwise_eq(&base[0], &after[0]) && !bitwise_eq(&base[1], &after[1]);
    }
    Ok(Check::new("ablation.cross_agent_off_independent", ok, "trained-like weights, 3 seeds"))
}

pub fn raw_values_spatially_constant<T: Element>(cfg: &Config) -> Result<Check> {
    let mut c = cfg.clone();
    c.ablate.raymap_mode = RaymapMode::RawValues;
    let model = Denoiser::new(&c)?;
    let ps = randomize_params(&model.init_params::<T>(0)?, 61, 0.3);
    let inputs = random_inputs::<T>(&c, 62)?;
    let mut g = Graph::untraced();
    let e = model
        .camera_embedding(&mut g, &ps, 0, &inputs[0])?
        .expect("raw conditioning enabled");
    let v = g.value(e);
    let lat = model.latent;
    let (hw, dim) = (lat.height * lat.width, model.model.dim);
    let mut constant = true;
    let mut varies = false;
    for f in 0..lat.frames {
        let first = &v.data()[f * hw * dim..(f * hw + 1) * dim];
        for p in 1..hw {
            constant &= &v.data()[(f * hw + p) * dim..(f * hw + p + 1) * dim] == first;
        }
        if f > 0 {
            varies |= &v.data()[..dim] != first;
        }
    }
    let raw = raw_camera_values(&random_track(&mut ChaCha8Rng::seed_from_u64(3), cfg.data.frames, 4, 6), cfg.model.temporal_factor)?;
    let width_ok = raw.shape() == [lat.frames, 16 * cfg.model.temporal_factor];
    Ok(Check::new(
        "ablation.raw_values_constant",
        constant && varies && width_ok,
        "raw camera embedding constant over each latent frame, distinct across frames",
    ))
}

pub fn four_views_off_front_only(cfg: &Config) -> Result<Check> {
    let spec = sequence_specs(9, 0);
    let (h, w) = (cfg.data.view_h, cfg.data.view_w);
    let clips = generate_pair_clips(spec, h, w, false)?;
    let clip = &clips[0];
    let scene = generate_scene(spec.scene_seed, spec.weather);
    let agents = simulate_pair(spec.pattern, &scene, spec.traj_seed)?;
    let mut ok = !clip.four_views;
    for k in [0usize, 3] {
        let src = clip.source_frames()[k];
        let track = front_track(&agents[0], h, w)?;
        let other = crate::world::AgentBody {
            center: agents[1].body_center(src),
            yaw: agents[1].yaws[src],
            extents: agents[1].extents,
            color: agents[1].color,
        };
        let img = render_view(&scene, &[other], &track.frames()[src], h, w)?;
        ok &= clip.videos[0].frame(k) == img;
    }
    Ok(Check::new("ablation.four_views_off_front_only", ok, "front-only clips equal the front camera at grid resolution"))
}

pub fn gradient_flow<T: Element>(cfg: &Config) -> Result<Check> {
    let mut c = cfg.clone();
    c.ablate = Config::desk().ablate;
    let mut trainer = Trainer::<T>::new(&c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let dims = c.latent_shape().dims();
    let tracks = [0, 1].map(|_| random_track(&mut rng, c.data.frames, c.data.view_h, c.data.view_w));
    let pair = crate::model::PreparedPair {
        latents: [Tensor::randn(&dims, 0.5, &mut rng), Tensor::randn(&dims, 0.5, &mut rng)],
        tracks,
    };
    trainer.step(std::slice::from_ref(&pair))?;
    let draws = trainer.draws(trainer.state.step());
    let (_, grads) = trainer.loss_and_grads(&[&pair], &draws)?;
    let dead: Vec<String> = grads
        .iter()
        .filter(|(_, g)| g.data().iter().all(|v| *v == T::zero()))
        .map(|(n, _)| n.clone())
        .collect();
    Ok(Check::new(
        "train.gradient_flow",
        dead.is_empty(),
        if dead.is_empty() {
            format!("{} tensors with nonzero gradient", grads.len())
        } else {
            format!("zero gradient: {}", dead.join(", "))
        },
    ))
}

pub fn checkpoint_round_trip<T: Element>(cfg: &Config) -> Result<Check> {
    let model = Denoiser::new(cfg)?;
    let state = TrainState {
        params: randomize_params(&model.init_params::<T>(0)?, 81, 0.1),
        running_loss: 0.25,
    };
    let bytes = encode_checkpoint(cfg, &state);
    let back: TrainState<T> = decode_checkpoint(&bytes, std::path::Path::new("memory"), cfg)?;
    let inputs = random_inputs::<T>(cfg, 82)?;
    let a = model.predict(&state.params, &inputs, 10)?;
    let b = model.predict(&back.params, &inputs, 10)?;
    let mut altered = cfg.clone();
    altered.model.dim *= 2;
    altered.model.heads *= 2;
    let refused = matches!(
        decode_checkpoint::<T>(&bytes, std::path::Path::new("memory"), &altered),
        Err(crate::Error::ConfigMismatch(ref k)) if k.iter().any(|k| k == "model.dim")
    );
    let ok = back == state && bitwise_eq(&a[0], &b[0]) && bitwise_eq(&a[1], &b[1]) && refused;
    Ok(Check::new("checkpoint.round_trip", ok, "bitwise forward after reload; altered model.dim refused"))
}

/// Runs every property; `cfg` supplies the model and data shapes.
pub fn run_all(cfg: &Config, mut progress: impl FnMut(&Check)) -> Result<Vec<Check>> {
    let small = Config::gradcheck();
    let mut out = Vec::new();
    let mut push = |c: Check| {
        progress(&c);
        out.push(c);
    };
    push(schedule_variance_preserving(cfg)?);
    push(raymap_unit_depth(RAYMAP_SEEDS)?);
    push(raymap_zero_centroid(RAYMAP_SEEDS)?);
    push(raymap_rigid_equivariance(RAYMAP_SEEDS)?);
    push(paper_scale_shapes()?);
    push(vae_round_trip(cfg)?);
    push(zero_init_transparency::<f32>(cfg)?);
    push(agent_isolation_at_init::<f32>(cfg)?);
    push(rope_agent_offset::<f64>(cfg)?);
    push(cross_agent_off_independent::<f32>(cfg)?);
    push(raw_values_spatially_constant::<f64>(cfg)?);
    push(four_views_off_front_only(cfg)?);
    push(gradient_flow::<f64>(&small)?);
    push(checkpoint_round_trip::<f64>(&small)?);
    Ok(out)
}

/// Finite-difference check of the full two-agent loss on the tiny config.
pub fn gradcheck(tol: f64) -> Result<GradReport> {
    let cfg = Config::gradcheck();
    let model = Denoiser::new(&cfg)?;
    let ps = randomize_params(&model.init_params::<f64>(0)?, 91, 0.3);
    let inputs = random_inputs::<f64>(&cfg, 92)?;
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let dims = cfg.latent_shape().dims();
    let eps = [Tensor::<f64>::randn(&dims, 1.0, &mut rng), Tensor::<f64>::randn(&dims, 1.0, &mut rng)];
    let t = 37;
    let report = finite_diff_check(
        |g, p| {
            let pred = model.forward(g, p, &inputs, t).map_err(to_tensor_error)?;
            pair_loss(g, pred, [&eps[0], &eps[1]]).map_err(to_tensor_error)
        },
        &ps,
        1e-6,
        tol,
    )?;
    Ok(report)
}

fn to_tensor_error(e: crate::Error) -> swtensor::TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => swtensor::TensorError::invalid("model", other.to_string()),
    }
}
