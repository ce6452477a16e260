use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sharedworld::config::{ScheduleKind, VaeMode};
use sharedworld::eval::generate_clip;
use sharedworld::model::{ddim_sample, pair_loss, AgentInput, Denoiser, SampleRequest, Schedule, Vae};
use sharedworld::verify::{random_inputs, randomize_params};
use sharedworld::world::{generate_pair_clips, sequence_specs};
use sharedworld::Config;
use swtensor::{Graph, ParamSet, Tensor};

#[test]
fn q_sample_moments_match_monte_carlo() {
    let s = Schedule::new(ScheduleKind::Linear, 1000).unwrap();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (t, x) in [(1, 0.7), (300, -0.4), (1000, 0.9)] {
        let x0 = Tensor::<f64>::full(&[n], x);
        let eps = Tensor::<f64>::randn(&[n], 1.0, &mut rng);
        let xt = s.q_sample(&x0, t, &eps).unwrap();
        let mean = xt.data().iter().sum::<f64>() / n as f64;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (a, sg) = (s.alpha(t), s.sigma(t));
        let se_mean = sg / (n as f64).sqrt();
        let se_var = sg * sg * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - a * x).abs() < 3.0 * se_mean + 1e-12, "t={t}: mean {mean} vs {}", a * x);
        assert!((var - sg * sg).abs() < 3.0 * se_var + 1e-12, "t={t}: var {var} vs {}", sg * sg);
    }
}

#[test]
fn q_sample_rejects_shape_mismatch() {
    let s = Schedule::new(ScheduleKind::Cosine, 100).unwrap();
    let x0 = Tensor::<f32>::zeros(&[2, 3]);
    assert!(s.q_sample(&x0, 5, &Tensor::zeros(&[3, 2])).is_err());
    assert!(s.q_sample(&x0, 0, &Tensor::zeros(&[2, 3])).is_err());
    assert!(s.q_sample(&x0, 101, &Tensor::zeros(&[2, 3])).is_err());
}

fn loss_of(pred: [&Tensor<f64>; 2], eps: [&Tensor<f64>; 2]) -> f64 {
    let mut g = Graph::<f64>::new();
    let p = [g.constant(pred[0].clone()).unwrap(), g.constant(pred[1].clone()).unwrap()];
    let l = pair_loss(&mut g, p, eps).unwrap();
    g.value(l).item()
}

#[test]
fn loss_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = [3, 2, 4, 5];
    let t: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::randn(&shape, 1.3, &mut rng)).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, e) in [(&t[0], &t[2]), (&t[1], &t[3])] {
        for (a, b) in p.data().iter().zip(e.data()) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    let reference = sum / count as f64;
    let got = loss_of([&t[0], &t[1]], [&t[2], &t[3]]);
    assert!((got - reference).abs() < 1e-12, "{got} vs {reference}");

    assert_eq!(loss_of([&t[2], &t[3]], [&t[2], &t[3]]), 0.0);
    let plus = |x: &Tensor<f64>| x.map(|v| v + 1.0);
    let one = loss_of([&plus(&t[2]), &plus(&t[3])], [&t[2], &t[3]]);
    assert!((one - 1.0).abs() < 1e-12);
}

fn small() -> Config {
    let mut cfg = Config::gradcheck();
    cfg.data.view_h = 8;
    cfg.data.view_w = 8;
    cfg.model.latent_channels = 24;
    cfg.model.vae_mode = VaeMode::Invertible;
    cfg.validate().unwrap();
    cfg
}

fn request(cfg: &Config, steps: usize, seed: u64) -> SampleRequest<f64> {
    let [a, b] = random_inputs::<f64>(cfg, 5).unwrap();
    SampleRequest {
        cond: [a.cond, b.cond],
        cameras: [a.camera, b.camera],
        steps,
        seed,
        clip_x0: true,
    }
}

fn trained_params(cfg: &Config) -> ParamSet<f64> {
    let model = Denoiser::new(cfg).unwrap();
    randomize_params(&model.init_params::<f64>(0).unwrap(), 3, 0.2)
}

#[test]
fn sampler_is_seeded_and_iterates() {
    let cfg = small();
    let model = Denoiser::new(&cfg).unwrap();
    let ps = trained_params(&cfg);
    let sched = Schedule::new(cfg.model.schedule, cfg.model.diffusion_steps).unwrap();
    let a = ddim_sample(&model, &ps, &sched, &request(&cfg, 20, 4)).unwrap();
    let b = ddim_sample(&model, &ps, &sched, &request(&cfg, 20, 4)).unwrap();
    assert_eq!(a, b);
    let other_seed = ddim_sample(&model, &ps, &sched, &request(&cfg, 20, 5)).unwrap();
    assert_ne!(a, other_seed);
    let one = ddim_sample(&model, &ps, &sched, &request(&cfg, 1, 4)).unwrap();
    let fifty = ddim_sample(&model, &ps, &sched, &request(&cfg, 50, 4)).unwrap();
    assert_ne!(one, fifty);
    assert!(ddim_sample(&model, &ps, &sched, &request(&cfg, 101, 4)).is_err());
}

#[test]
fn sampler_keeps_the_conditioning_frame() {
    let cfg = small();
    let model = Denoiser::new(&cfg).unwrap();
    let ps = trained_params(&cfg);
    let sched = Schedule::new(cfg.model.schedule, cfg.model.diffusion_steps).unwrap();
    let req = request(&cfg, 10, 2);
    let out = ddim_sample(&model, &ps, &sched, &req).unwrap();
    let l = cfg.latent_shape();
    let per = l.height * l.width * l.channels;
    for i in 0..2 {
        assert_eq!(&out[i].data()[..per], &req.cond[i].data()[..per]);
        assert_ne!(&out[i].data()[per..], &req.cond[i].data()[per..]);
    }
}

#[test]
fn decoded_frame_zero_equals_the_conditioning_image() {
    let cfg = small();
    let clip = generate_pair_clips(sequence_specs(9, 0), cfg.data.view_h, cfg.data.view_w, true)
        .unwrap()
        .remove(0);
    let model = Denoiser::new(&cfg).unwrap();
    let ps = trained_params(&cfg);
    let videos = generate_clip(&cfg, &model, &ps, &clip, 1, 8).unwrap();
    for i in 0..2 {
        assert_eq!(videos[i].frame(0), clip.videos[i].frame(0));
        assert_eq!(videos[i].frames, cfg.data.frames);
    }
}

/// Layer norm without affine terms, as the model applies it.
fn layernorm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
}

/// `x·W + b` with `W` stored `[in, out]`.
fn affine(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let out = b.numel();
    (0..out)
        .map(|o| b.data()[o] + x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * out + o]).sum::<f64>())
        .collect()
}

fn rotate(v: &[f64], cos: &[f64], sin: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for i in 0..v.len() / 2 {
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = a * cos[i] - b * sin[i];
        out[2 * i + 1] = a * sin[i] + b * cos[i];
    }
    out
}

#[test]
fn cross_block_matches_scalar_attention_on_single_tokens() {
    let cfg = Config::gradcheck();
    let mut model = Denoiser::new(&cfg).unwrap();
    model.latent.frames = 1;
    model.latent.height = 1;
    model.latent.width = 1;
    let c = cfg.model.dim;
    let (heads, hd) = (cfg.model.heads, cfg.model.head_dim);
    let mut ps = randomize_params(&model.init_params::<f64>(0).unwrap(), 17, 0.5);
    ps.set("cross.0.mod.weight", Tensor::zeros(&[c, 2 * c])).unwrap();
    ps.set("cross.0.mod.bias", Tensor::zeros(&[2 * c])).unwrap();
    ps.set("cross.0.proj.weight", Tensor::from_fn(&[c, c], |i| if i / c == i % c { 1.0 } else { 0.0 }))
        .unwrap();
    ps.set("cross.0.proj.bias", Tensor::zeros(&[c])).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = [Tensor::<f64>::randn(&[1, c], 1.0, &mut rng), Tensor::<f64>::randn(&[1, c], 1.0, &mut rng)];
    let mut g = Graph::<f64>::new();
    let feats = [g.constant(x[0].clone()).unwrap(), g.constant(x[1].clone()).unwrap()];
    let temb = g.constant(Tensor::randn(&[c], 1.0, &mut rng)).unwrap();
    let rope = model.cross_rope::<f64>();
    let out = model.cross_block(&mut g, &ps, 0, feats, temb, &rope).unwrap();

    let get = |n: &str| ps.get(n).unwrap().clone();
    let (wqkv, bqkv) = (get("cross.0.attn.qkv.weight"), get("cross.0.attn.qkv.bias"));
    let (wo, bo) = (get("cross.0.attn.out.weight"), get("cross.0.attn.out.bias"));
    let half = hd / 2;
    let qkv: Vec<Vec<f64>> = x.iter().map(|xi| affine(&layernorm(xi.data()), &wqkv, &bqkv)).collect();
    for i in 0..2 {
        let mut merged = vec![0.0; c];
        for h in 0..heads {
            let part = |tok: usize, which: usize| {
                let v = &qkv[tok][which * c + h * hd..which * c + (h + 1) * hd];
                if which == 2 {
                    v.to_vec()
                } else {
                    let cs = &rope.0.data()[tok * half..(tok + 1) * half];
                    let sn = &rope.1.data()[tok * half..(tok + 1) * half];
                    rotate(v, cs, sn)
                }
            };
            let q = part(i, 0);
            let scores: Vec<f64> = (0..2)
                .map(|j| q.iter().zip(part(j, 1)).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let m = scores[0].max(scores[1]);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z = e[0] + e[1];
            for j in 0..2 {
                for (d, v) in part(j, 2).iter().enumerate() {
                    merged[h * hd + d] += e[j] / z * v;
                }
            }
        }
        let attn = affine(&merged, &wo, &bo);
        let want: Vec<f64> = x[i].data().iter().zip(&attn).map(|(a, b)| a + b).collect();
        let got = g.value(out[i]).data();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "agent {i}: {a} vs {b}");
        }
    }
}

#[test]
fn cross_block_is_transparent_at_init() {
    let cfg = Config::gradcheck();
    let model = Denoiser::new(&cfg).unwrap();
    let ps = model.init_params::<f64>(4).unwrap();
    let l = cfg.latent_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = [
        Tensor::<f64>::randn(&[l.tokens(), cfg.model.dim], 1.0, &mut rng),
        Tensor::<f64>::randn(&[l.tokens(), cfg.model.dim], 1.0, &mut rng),
    ];
    let mut g = Graph::<f64>::new();
    let feats = [g.constant(x[0].clone()).unwrap(), g.constant(x[1].clone()).unwrap()];
    let temb = g.constant(Tensor::randn(&[cfg.model.dim], 1.0, &mut rng)).unwrap();
    let out = model.cross_block(&mut g, &ps, 0, feats, temb, &model.cross_rope()).unwrap();
    assert_eq!(g.value(out[0]), &x[0]);
    assert_eq!(g.value(out[1]), &x[1]);
}

#[test]
fn forward_shapes_and_camera_transparency() {
    let cfg = Config::gradcheck();
    let model = Denoiser::new(&cfg).unwrap();
    let ps = model.init_params::<f64>(0).unwrap();
    let inputs = random_inputs::<f64>(&cfg, 3).unwrap();
    let out = model.predict(&ps, &inputs, 10).unwrap();
    for o in &out {
        assert_eq!(o.shape(), cfg.latent_shape().dims());
    }
    let other: [AgentInput<f64>; 2] = inputs.clone().map(|mut a| {
        a.camera = a.camera.map(|c| c.map(|v| 3.0 - v));
        a
    });
    assert_eq!(model.predict(&ps, &other, 10).unwrap(), out, "camera branch is zero at init");
    let bare: [AgentInput<f64>; 2] = inputs.clone().map(|mut a| {
        a.camera = None;
        a
    });
    assert!(model.predict(&ps, &bare, 10).is_err());
}

#[test]
fn projection_vae_is_a_right_inverse() {
    let vae = Vae::with(4, 2, 40, VaeMode::Projection).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = Tensor::<f64>::randn(&[3, 2, 3, 40], 1.0, &mut rng);
    let (vals, [f, h, w]) = vae.decode_values(&z).unwrap();
    let back = vae.encode_values(&vals, f, h, w).unwrap();
    let per = 2 * 3 * 40;
    for (a, b) in back.data()[per..].iter().zip(&z.data()[per..]) {
        assert!((a - b).abs() < 1e-5);
    }
}
