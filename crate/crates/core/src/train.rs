//! Deterministic training loop and checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swtensor::{Adam, Element, Gradients, Graph, ParamSet, Tensor};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::model::{pair_loss, AgentInput, Denoiser, PreparedPair, Schedule, Vae};
use crate::svt::{decode_body, encode_body, Reader, SvtTensor};

pub const CKPT_MAGIC: &[u8; 6] = b"SVCKPT";
pub const CKPT_VERSION: u32 = 1;
/// Half-width of the shared translation jitter, meters.
pub const JITTER: f64 = 2.0;
/// Smoothing of the running loss.
const RUNNING_DECAY: f64 = 0.9;

/// Everything needed to resume: parameters, Adam moments, step, running loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: ParamSet<T>,
    pub running_loss: f64,
}

impl<T: Element> TrainState<T> {
    pub fn step(&self) -> u64 {
        self.params.step()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset index of the `pos`-th sample of the endless epoch sequence.
pub fn sample_index(seed: u64, n: usize, pos: u64) -> usize {
    let epoch = pos / n as u64;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5E_ED0F_E90C, epoch)));
    order[(pos % n as u64) as usize]
}

/// Per-sample random draws of one training step.
#[derive(Debug, Clone)]
pub struct Draw<T> {
    pub t: usize,
    pub jitter: Vec3,
    pub eps: [Tensor<T>; 2],
}

pub struct Trainer<T> {
    pub cfg: Config,
    pub model: Denoiser,
    pub schedule: Schedule,
    pub vae: Vae,
    pub opt: Adam,
    pub state: TrainState<T>,
}

impl<T: Element> Trainer<T> {
    pub fn new(cfg: &Config) -> Result<Self> {
        let model = Denoiser::new(cfg)?;
        let params = model.init_params(cfg.train.seed)?;
        Self::with_state(
            cfg,
            TrainState {
                params,
                running_loss: f64::NAN,
            },
        )
    }

    pub fn with_state(cfg: &Config, state: TrainState<T>) -> Result<Self> {
        let model = Denoiser::new(cfg)?;
        model.check_params(&state.params)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            schedule: Schedule::new(cfg.model.schedule, cfg.model.diffusion_steps)?,
            vae: Vae::new(cfg)?,
            opt: Adam::new(cfg.train.lr),
            model,
            state,
        })
    }

    pub fn prepare(&self, clip: &crate::world::ClipPair) -> Result<PreparedPair<T>> {
        PreparedPair::new(&self.cfg, &self.vae, clip)
    }

    /// Timestep, jitter and noise for each sample of step `step`.
    pub fn draws(&self, step: u64) -> Vec<Draw<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.train.seed, step));
        let dims = self.model.latent.dims();
        (0..self.cfg.train.batch)
            .map(|_| {
                let t = rng.gen_range(1..=self.schedule.steps());
                let jitter = Vec3([0; 3].map(|_| rng.gen_range(-JITTER..=JITTER)));
                let mut noise = || Tensor::from_fn(&dims, |_| T::c(rng.sample::<f64, _>(StandardNormal)));
                let eps = [noise(), noise()];
                Draw { t, jitter, eps }
            })
            .collect()
    }

    /// Batch-mean loss and its gradients for explicit samples and draws.
    pub fn loss_and_grads(&self, batch: &[&PreparedPair<T>], draws: &[Draw<T>]) -> Result<(f64, Gradients<T>)> {
        let numeric = |e: Error| match e.kind() {
            crate::ErrorKind::Numeric => Error::NonFiniteLoss {
                step: self.state.step(),
            },
            _ => e,
        };
        self.try_loss_and_grads(batch, draws).map_err(numeric)
    }

    fn try_loss_and_grads(&self, batch: &[&PreparedPair<T>], draws: &[Draw<T>]) -> Result<(f64, Gradients<T>)> {
        let mut g = Graph::new();
        let mut total = None;
        for (pair, d) in batch.iter().zip(draws) {
            let cams = pair.cameras(&self.cfg, Some(d.jitter))?;
            let inputs = [0, 1].map(|i| -> Result<AgentInput<T>> {
                Ok(AgentInput {
                    x_t: self.schedule.q_sample(&pair.latents[i], d.t, &d.eps[i])?,
                    cond: pair.latents[i].clone(),
                    camera: cams[i].clone(),
                })
            });
            let [a, b] = inputs;
            let pred = self.model.forward(&mut g, &self.state.params, &[a?, b?], d.t)?;
            let l = pair_loss(&mut g, pred, [&d.eps[0], &d.eps[1]])?;
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let total = total.ok_or_else(|| Error::config("empty batch"))?;
        let loss = g.scale(total, T::c(1.0 / batch.len() as f64))?;
        let value = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.state.step(),
            });
        }
        Ok((value, g.backward(loss, &self.state.params)?))
    }

    /// One Adam step on the batch selected for the current step.
    pub fn step(&mut self, data: &[PreparedPair<T>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let step = self.state.step();
        let b = self.cfg.train.batch as u64;
        let batch: Vec<&PreparedPair<T>> = (0..b)
            .map(|j| &data[sample_index(self.cfg.train.seed, data.len(), step * b + j)])
            .collect();
        let draws = self.draws(step);
        let (loss, grads) = self.loss_and_grads(&batch, &draws)?;
        self.state.params.adam_step(&grads, &self.opt)?;
        self.state.running_loss = if self.state.running_loss.is_finite() {
            RUNNING_DECAY * self.state.running_loss + (1.0 - RUNNING_DECAY) * loss
        } else {
            loss
        };
        Ok(loss)
    }

    /// Steps until `cfg.train.steps` have been taken in total; returns the losses.
    pub fn fit(&mut self, data: &[PreparedPair<T>], mut progress: impl FnMut(u64, f64)) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        while self.state.step() < self.cfg.train.steps {
            let step = self.state.step();
            let loss = self.step(data)?;
            progress(step, loss);
            losses.push(loss);
        }
        Ok(losses)
    }
}

/// Checks that a clip matches the configured grid, view mode and clip length.
pub fn check_clip(cfg: &Config, clip: &crate::world::ClipPair) -> Result<()> {
    let v = &clip.videos[0];
    if (v.height, v.width) != (cfg.data.view_h, cfg.data.view_w) {
        return Err(Error::Dimension(format!(
            "clip frames are {}x{}, config expects {}x{}",
            v.height, v.width, cfg.data.view_h, cfg.data.view_w
        )));
    }
    if clip.four_views != cfg.ablate.four_views {
        return Err(Error::Dimension(format!(
            "clip four_views={} but config ablate.four_views={}",
            clip.four_views, cfg.ablate.four_views
        )));
    }
    if v.frames < cfg.data.frames {
        return Err(Error::Dimension(format!("clip has {} frames, config needs {}", v.frames, cfg.data.frames)));
    }
    Ok(())
}

/// Writes parameters, moments, step and running loss with a config echo.
pub fn save_checkpoint<T: Element>(path: &Path, cfg: &Config, state: &TrainState<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cfg, state)).map_err(|e| Error::io(path, e))
}

pub fn encode_checkpoint<T: Element>(cfg: &Config, state: &TrainState<T>) -> Vec<u8> {
    let mut entries: Vec<(String, SvtTensor)> = Vec::new();
    for (name, t) in state.params.iter() {
        entries.push((name.clone(), SvtTensor::from_tensor(t)));
        let (m, v) = state.params.moments(name).expect("listed");
        let wrap = |d: &[T]| SvtTensor::from_tensor(&Tensor::new(t.shape(), d.to_vec()).expect("sized"));
        entries.push((format!("adam.m.{name}"), wrap(m)));
        entries.push((format!("adam.v.{name}"), wrap(v)));
    }
    entries.push(("state.step".into(), SvtTensor::from_tensor(&Tensor::scalar(state.step() as f64))));
    entries.push((
        "state.running_loss".into(),
        SvtTensor::from_tensor(&Tensor::scalar(state.running_loss)),
    ));
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_body(&mut out, &t.shape, &t.data);
    }
    let echo = cfg.to_text();
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    out
}

/// Reads a checkpoint and refuses it unless its config echo matches `cfg`.
pub fn load_checkpoint<T: Element>(path: &Path, cfg: &Config) -> Result<TrainState<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, cfg)
}

/// Config echo stored in a checkpoint.
pub fn checkpoint_echo(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, echo) = split_checkpoint(&bytes, path)?;
    Ok(echo)
}

fn split_checkpoint(bytes: &[u8], path: &Path) -> Result<(Vec<(String, SvtTensor)>, String)> {
    let mut r = Reader::new(bytes, path);
    if r.take(CKPT_MAGIC.len())? != CKPT_MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            version,
        });
    }
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        entries.push((name, decode_body(&mut r)?));
    }
    let len = r.u32()? as usize;
    let echo = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Format("config echo is not UTF-8".into()))?
        .to_string();
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    Ok((entries, echo))
}

pub fn decode_checkpoint<T: Element>(bytes: &[u8], path: &Path, cfg: &Config) -> Result<TrainState<T>> {
    let (entries, echo) = split_checkpoint(bytes, path)?;
    let diff = cfg.echo_diff(&echo)?;
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff));
    }
    let mut params = ParamSet::new();
    let mut moments = Vec::new();
    let (mut step, mut running) = (None, None);
    for (name, t) in entries {
        let scalar = || -> Result<f64> { Ok(t.to_tensor::<f64>()?.item()) };
        if name == "state.step" {
            step = Some(scalar()? as u64);
        } else if name == "state.running_loss" {
            running = Some(scalar()?);
        } else if let Some(rest) = name.strip_prefix("adam.") {
            moments.push((rest.to_string(), t.to_tensor::<T>()?));
        } else {
            params.insert(name, t.to_tensor::<T>()?)?;
        }
    }
    let pairs: Vec<(String, Tensor<T>)> = moments;
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let find = |kind: &str| {
            pairs
                .iter()
                .find(|(n, _)| n == &format!("{kind}.{name}"))
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| Error::Format(format!("missing adam.{kind}.{name}")))
        };
        params.set_moments(&name, find("m")?, find("v")?)?;
    }
    params.set_step(step.ok_or_else(|| Error::Format("missing state.step".into()))?);
    Ok(TrainState {
        params,
        running_loss: running.ok_or_else(|| Error::Format("missing state.running_loss".into()))?,
    })
}
