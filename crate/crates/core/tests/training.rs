use sharedworld::config::RaymapMode;
use sharedworld::model::{AgentInput, Denoiser, PreparedPair};
use sharedworld::train::{
    checkpoint_echo, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Trainer,
};
use sharedworld::verify::random_inputs;
use sharedworld::world::{generate_pair_clips, sequence_specs, ClipPair};
use sharedworld::{Config, Error, ErrorKind};
use swtensor::Tensor;

fn clip(cfg: &Config, i: u64) -> ClipPair {
    generate_pair_clips(sequence_specs(21, i), cfg.data.view_h, cfg.data.view_w, cfg.ablate.four_views)
        .unwrap()
        .remove(0)
}

fn small(lr: f64) -> Config {
    let mut cfg = Config::gradcheck();
    cfg.data.view_h = 8;
    cfg.data.view_w = 8;
    cfg.train.lr = lr;
    cfg.validate().unwrap();
    cfg
}

fn prepared(t: &Trainer<f64>, clips: &[ClipPair]) -> Vec<PreparedPair<f64>> {
    clips.iter().map(|c| t.prepare(c).unwrap()).collect()
}

#[test]
fn initial_loss_is_near_the_noise_variance() {
    let cfg = Config::desk();
    let c = clip(&cfg, 0);
    let mut t = Trainer::<f32>::new(&cfg).unwrap();
    let data = vec![t.prepare(&c).unwrap()];
    let loss = t.step(&data).unwrap();
    assert!((loss - 1.0).abs() < 0.2, "step-0 loss {loss}");
}

#[test]
fn identical_seeds_give_identical_loss_sequences() {
    let mut cfg = small(1e-3);
    cfg.train.steps = 6;
    let clips = [clip(&cfg, 0), clip(&cfg, 1)];
    let run = || {
        let mut t = Trainer::<f64>::new(&cfg).unwrap();
        let data = prepared(&t, &clips);
        t.fit(&data, |_, _| {}).unwrap()
    };
    let a = run();
    assert_eq!(a.len(), 6);
    assert_eq!(a, run());
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_run() {
    let mut cfg = small(1e-3);
    cfg.train.steps = 6;
    let clips = [clip(&cfg, 0), clip(&cfg, 1), clip(&cfg, 2)];
    let mut full = Trainer::<f64>::new(&cfg).unwrap();
    let data = prepared(&full, &clips);
    let whole = full.fit(&data, |_, _| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let mut half_cfg = cfg.clone();
    half_cfg.train.steps = 3;
    let mut first = Trainer::<f64>::new(&half_cfg).unwrap();
    let mut losses = first.fit(&data, |_, _| {}).unwrap();
    save_checkpoint(&path, &half_cfg, &first.state).unwrap();

    let state = load_checkpoint::<f64>(&path, &cfg).unwrap();
    assert_eq!(state.step(), 3);
    let mut second = Trainer::with_state(&cfg, state).unwrap();
    losses.extend(second.fit(&data, |_, _| {}).unwrap());
    assert_eq!(losses, whole);
    assert_eq!(second.state, full.state);
}

#[test]
fn checkpoint_refuses_a_changed_model_width() {
    let cfg = small(1e-3);
    let t = Trainer::<f64>::new(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&path, &cfg, &t.state).unwrap();
    assert!(checkpoint_echo(&path).unwrap().contains("model.dim=16"));
    let mut other = cfg.clone();
    other.model.dim = 24;
    other.model.head_dim = 12;
    match load_checkpoint::<f64>(&path, &other) {
        Err(e @ Error::ConfigMismatch(_)) => {
            assert!(e.to_string().contains("model.dim"), "{e}");
            assert_eq!(e.kind(), ErrorKind::Usage);
        }
        other => panic!("expected a config mismatch, got {other:?}"),
    }
    let bytes = encode_checkpoint(&cfg, &t.state);
    assert_eq!(&bytes[..6], b"SVCKPT");
    let back = decode_checkpoint::<f64>(&bytes, &path, &cfg).unwrap();
    assert_eq!(back.params, t.state.params);
    assert_eq!(back.running_loss.to_bits(), t.state.running_loss.to_bits());
}

fn perturbed(inputs: &[AgentInput<f64>; 2], agent: usize) -> [AgentInput<f64>; 2] {
    let mut out = inputs.clone();
    out[agent].x_t = out[agent].x_t.map(|v| v + 0.5);
    out
}

fn trained(cfg: &Config, steps: u64) -> (Denoiser, Trainer<f64>) {
    let mut cfg = cfg.clone();
    cfg.train.steps = steps;
    let clips = [clip(&cfg, 0), clip(&cfg, 1)];
    let mut t = Trainer::<f64>::new(&cfg).unwrap();
    let data = prepared(&t, &clips);
    t.fit(&data, |_, _| {}).unwrap();
    (Denoiser::new(&cfg).unwrap(), t)
}

#[test]
fn agents_couple_only_after_training() {
    let cfg = small(1e-2);
    let inputs = random_inputs::<f64>(&cfg, 8).unwrap();
    let model = Denoiser::new(&cfg).unwrap();
    let init = model.init_params::<f64>(cfg.train.seed).unwrap();
    let base = model.predict(&init, &inputs, 400).unwrap();
    assert_eq!(model.predict(&init, &perturbed(&inputs, 1), 400).unwrap()[0], base[0]);

    let (model, t) = trained(&cfg, 4);
    let base = model.predict(&t.state.params, &inputs, 400).unwrap();
    let moved = model.predict(&t.state.params, &perturbed(&inputs, 1), 400).unwrap();
    assert_ne!(moved[0], base[0]);
}

#[test]
fn disabled_cross_agent_stays_independent_after_training() {
    let mut cfg = small(1e-2);
    cfg.ablate.cross_agent = false;
    let (model, t) = trained(&cfg, 4);
    let inputs = random_inputs::<f64>(&cfg, 9).unwrap();
    let base = model.predict(&t.state.params, &inputs, 400).unwrap();
    let moved = model.predict(&t.state.params, &perturbed(&inputs, 1), 400).unwrap();
    assert_eq!(moved[0], base[0]);
    assert_ne!(moved[1], base[1]);
}

#[test]
fn camera_encoders_wake_up_after_one_step() {
    for mode in [RaymapMode::Raymap, RaymapMode::RawValues] {
        let mut cfg = small(1e-3);
        cfg.ablate.raymap_mode = mode;
        let inputs = random_inputs::<f64>(&cfg, 10).unwrap();
        let model = Denoiser::new(&cfg).unwrap();
        let embed = |ps| {
            let mut g = swtensor::Graph::<f64>::new();
            let v = model.camera_embedding(&mut g, ps, 0, &inputs[0]).unwrap().unwrap();
            g.value(v).clone()
        };
        let init = model.init_params::<f64>(cfg.train.seed).unwrap();
        assert!(embed(&init).data().iter().all(|&v| v == 0.0), "{mode:?} is zero at init");
        let (_, t) = trained(&cfg, 1);
        assert!(embed(&t.state.params).data().iter().any(|&v| v != 0.0), "{mode:?} after one step");
    }
}

#[test]
fn every_parameter_has_gradient_after_one_step() {
    let cfg = small(1e-3);
    let mut t = Trainer::<f64>::new(&cfg).unwrap();
    let data = prepared(&t, &[clip(&cfg, 0)]);
    t.step(&data).unwrap();
    let draws = t.draws(1);
    let (_, grads) = t.loss_and_grads(&[&data[0]], &draws).unwrap();
    for (name, _) in t.state.params.iter() {
        let g = grads.get(name).unwrap();
        assert!(g.data().iter().any(|&v| v != 0.0), "{name} has a zero gradient");
    }
}

#[test]
fn non_finite_loss_names_the_step() {
    let cfg = small(1e-3);
    let mut t = Trainer::<f64>::new(&cfg).unwrap();
    let data = prepared(&t, &[clip(&cfg, 0)]);
    t.step(&data).unwrap();
    let shape = t.state.params.get("head.bias").unwrap().shape().to_vec();
    t.state.params.set("head.bias", Tensor::full(&shape, f64::NAN)).unwrap();
    match t.step(&data) {
        Err(e @ Error::NonFiniteLoss { step: 1 }) => assert_eq!(e.kind(), ErrorKind::Numeric),
        other => panic!("expected a numeric failure at step 1, got {other:?}"),
    }
}
