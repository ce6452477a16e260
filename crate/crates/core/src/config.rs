//! Hyperparameters and ablation switches, read from `key=value` files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use swtensor::DType;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaeMode {
    /// Pure patchify; lossless.
    Invertible,
    /// Patchify followed by a seeded row-orthonormal projection.
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaymapMode {
    Raymap,
    RawValues,
    Off,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $v:expr),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($v),)+
                    _ => Err(format!(concat!("unknown ", $what, " `{}`"), s)),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(VaeMode, "vae mode", "invertible" => VaeMode::Invertible, "projection" => VaeMode::Projection);
keyword_enum!(ScheduleKind, "schedule", "linear" => ScheduleKind::Linear, "cosine" => ScheduleKind::Cosine);
keyword_enum!(RaymapMode, "raymap mode", "raymap" => RaymapMode::Raymap, "raw_values" => RaymapMode::RawValues, "off" => RaymapMode::Off);

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub spatial_factor: usize,
    pub temporal_factor: usize,
    pub latent_channels: usize,
    pub vae_mode: VaeMode,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Video frames seen by the model, `1 + s_t·k`.
    pub frames: usize,
    pub view_h: usize,
    pub view_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub dtype: DType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub four_views: bool,
    pub raymap_mode: RaymapMode,
    pub cross_agent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub sample_steps: usize,
    pub red_ratio: f64,
    pub red_min: u8,
    /// Probe only frames where the other agent is at most this far away, meters.
    pub probe_range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablate: Ablation,
    pub eval: EvalConfig,
}

/// Latent grid extents `[f, h, w, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LatentShape {
    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn numel(&self) -> usize {
        self.tokens() * self.channels
    }
}

/// Keys echoed into checkpoints but allowed to differ on load.
const RESUMABLE_KEYS: &[&str] = &["train.steps"];

impl Default for Config {
    fn default() -> Self {
        Config::desk()
    }
}

impl Config {
    /// Desk-scale defaults: latent grid `[3, 8, 12]` from 5 frames of 32×48.
    pub fn desk() -> Self {
        Config {
            model: ModelConfig {
                blocks: 4,
                dim: 128,
                heads: 4,
                head_dim: 32,
                spatial_factor: 4,
                temporal_factor: 2,
                latent_channels: 96,
                vae_mode: VaeMode::Invertible,
                diffusion_steps: 1000,
                schedule: ScheduleKind::Linear,
            },
            data: DataConfig {
                frames: 5,
                view_h: 32,
                view_w: 48,
            },
            train: TrainConfig {
                lr: 2e-5,
                batch: 1,
                steps: 1000,
                seed: 0,
                dtype: DType::F32,
            },
            ablate: Ablation {
                four_views: true,
                raymap_mode: RaymapMode::Raymap,
                cross_agent: true,
            },
            eval: EvalConfig {
                sample_steps: 50,
                red_ratio: 1.5,
                red_min: 80,
                probe_range: 30.0,
            },
        }
    }

    /// Tiny float64 model used for finite-difference gradient checks.
    pub fn gradcheck() -> Self {
        let mut c = Config::desk();
        c.model = ModelConfig {
            blocks: 2,
            dim: 16,
            heads: 2,
            head_dim: 8,
            spatial_factor: 2,
            temporal_factor: 2,
            latent_channels: 24,
            vae_mode: VaeMode::Invertible,
            diffusion_steps: 100,
            schedule: ScheduleKind::Linear,
        };
        c.data = DataConfig {
            frames: 3,
            view_h: 4,
            view_w: 4,
        };
        c.train.dtype = DType::F64;
        c
    }

    /// Full-resolution factors: 49 frames of 480×720, 8× spatial, 4× temporal.
    pub fn paper_scale() -> Self {
        let mut c = Config::desk();
        c.model.spatial_factor = 8;
        c.model.temporal_factor = 4;
        c.model.latent_channels = 3 * 64 * 4;
        c.model.dim = 768;
        c.model.heads = 12;
        c.model.head_dim = 64;
        c.data = DataConfig {
            frames: 49,
            view_h: 480,
            view_w: 720,
        };
        c
    }

    pub fn latent_shape(&self) -> LatentShape {
        let m = &self.model;
        LatentShape {
            frames: 1 + (self.data.frames - 1) / m.temporal_factor,
            height: self.data.view_h / m.spatial_factor,
            width: self.data.view_w / m.spatial_factor,
            channels: m.latent_channels,
        }
    }

    /// Channels of one patchified cell before any projection.
    pub fn patch_channels(&self) -> usize {
        let m = &self.model;
        3 * m.spatial_factor * m.spatial_factor * m.temporal_factor
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let bad = |key: &str, msg: String| -> Result<()> {
            Err(Error::BadValue {
                key: key.to_string(),
                msg,
            })
        };
        if m.blocks == 0 || !m.blocks.is_multiple_of(2) {
            return bad("model.blocks", format!("{} is not a positive even count", m.blocks));
        }
        if m.dim != m.heads * m.head_dim {
            return bad(
                "model.dim",
                format!("{} != heads {} x head_dim {}", m.dim, m.heads, m.head_dim),
            );
        }
        if let Err(e) = crate::model::rope::RopeBands::new(m.head_dim) {
            return bad("model.head_dim", e.to_string());
        }
        if m.spatial_factor == 0 || m.temporal_factor == 0 {
            return bad("latent.spatial_factor", "factors must be positive".into());
        }
        let pc = self.patch_channels();
        match m.vae_mode {
            VaeMode::Invertible if m.latent_channels != pc => {
                return bad(
                    "latent.channels",
                    format!("invertible mode needs 3*s_sp^2*s_t = {pc}, got {}", m.latent_channels),
                )
            }
            VaeMode::Projection if m.latent_channels == 0 || m.latent_channels > pc => {
                return bad(
                    "latent.channels",
                    format!("projection mode needs 1..={pc}, got {}", m.latent_channels),
                )
            }
            _ => {}
        }
        if m.diffusion_steps == 0 {
            return bad("diffusion.steps", "must be at least 1".into());
        }
        let d = &self.data;
        if d.frames == 0 || !(d.frames - 1).is_multiple_of(m.temporal_factor) {
            return bad(
                "data.frames",
                format!("{} is not 1 + {}k", d.frames, m.temporal_factor),
            );
        }
        if d.frames > crate::world::CLIP_FRAMES {
            return bad(
                "data.frames",
                format!("at most {} frames per clip", crate::world::CLIP_FRAMES),
            );
        }
        for (key, v) in [("data.view_h", d.view_h), ("data.view_w", d.view_w)] {
            if v == 0 || v % m.spatial_factor != 0 || v % 2 != 0 {
                return bad(
                    key,
                    format!("{v} must be even and divisible by {}", m.spatial_factor),
                );
            }
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad("train.lr", format!("{} is not positive", t.lr));
        }
        if t.batch == 0 {
            return bad("train.batch", "must be at least 1".into());
        }
        if t.steps == 0 {
            return bad("train.steps", "must be at least 1".into());
        }
        if t.dtype == DType::U8 {
            return bad("train.dtype", "must be f32 or f64".into());
        }
        if self.eval.sample_steps == 0 || self.eval.sample_steps > m.diffusion_steps {
            return bad(
                "eval.sample_steps",
                format!("must be in 1..={}", m.diffusion_steps),
            );
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        vec![
            ("model.blocks", m.blocks.to_string()),
            ("model.dim", m.dim.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.head_dim", m.head_dim.to_string()),
            ("latent.spatial_factor", m.spatial_factor.to_string()),
            ("latent.temporal_factor", m.temporal_factor.to_string()),
            ("latent.channels", m.latent_channels.to_string()),
            ("latent.vae_mode", m.vae_mode.to_string()),
            ("diffusion.steps", m.diffusion_steps.to_string()),
            ("diffusion.schedule", m.schedule.to_string()),
            ("data.frames", self.data.frames.to_string()),
            ("data.view_h", self.data.view_h.to_string()),
            ("data.view_w", self.data.view_w.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.batch", self.train.batch.to_string()),
            ("train.steps", self.train.steps.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("train.dtype", self.train.dtype.name().to_string()),
            ("ablate.four_views", self.ablate.four_views.to_string()),
            ("ablate.raymap_mode", self.ablate.raymap_mode.to_string()),
            ("ablate.cross_agent", self.ablate.cross_agent.to_string()),
            ("eval.sample_steps", self.eval.sample_steps.to_string()),
            ("eval.red_ratio", self.eval.red_ratio.to_string()),
            ("eval.red_min", self.eval.red_min.to_string()),
            ("eval.probe_range", self.eval.probe_range.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(key: &str, value: &str) -> Result<V>
        where
            V::Err: fmt::Display,
        {
            value.parse().map_err(|e: V::Err| Error::BadValue {
                key: key.to_string(),
                msg: e.to_string(),
            })
        }
        let m = &mut self.model;
        match key {
            "model.blocks" => m.blocks = p(key, value)?,
            "model.dim" => m.dim = p(key, value)?,
            "model.heads" => m.heads = p(key, value)?,
            "model.head_dim" => m.head_dim = p(key, value)?,
            "latent.spatial_factor" => m.spatial_factor = p(key, value)?,
            "latent.temporal_factor" => m.temporal_factor = p(key, value)?,
            "latent.channels" => m.latent_channels = p(key, value)?,
            "latent.vae_mode" => m.vae_mode = p(key, value)?,
            "diffusion.steps" => m.diffusion_steps = p(key, value)?,
            "diffusion.schedule" => m.schedule = p(key, value)?,
            "data.frames" => self.data.frames = p(key, value)?,
            "data.view_h" => self.data.view_h = p(key, value)?,
            "data.view_w" => self.data.view_w = p(key, value)?,
            "train.lr" => self.train.lr = p(key, value)?,
            "train.batch" => self.train.batch = p(key, value)?,
            "train.steps" => self.train.steps = p(key, value)?,
            "train.seed" => self.train.seed = p(key, value)?,
            "train.dtype" => self.train.dtype = p(key, value)?,
            "ablate.four_views" => self.ablate.four_views = p(key, value)?,
            "ablate.raymap_mode" => self.ablate.raymap_mode = p(key, value)?,
            "ablate.cross_agent" => self.ablate.cross_agent = p(key, value)?,
            "eval.sample_steps" => self.eval.sample_steps = p(key, value)?,
            "eval.red_ratio" => self.eval.red_ratio = p(key, value)?,
            "eval.red_min" => self.eval.red_min = p(key, value)?,
            "eval.probe_range" => self.eval.probe_range = p(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the desk defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::desk();
        for (key, value) in kv_pairs(text)? {
            c.set(&key, &value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Keys whose values differ from a config echo, ignoring resumable keys.
    pub fn echo_diff(&self, echo: &str) -> Result<Vec<String>> {
        let theirs = kv_pairs(echo)?;
        let mut diff = Vec::new();
        for (key, value) in self.entries() {
            if RESUMABLE_KEYS.contains(&key) {
                continue;
            }
            match theirs.iter().find(|(k, _)| k == key) {
                Some((_, v)) if *v == value => {}
                _ => diff.push(key.to_string()),
            }
        }
        for (k, _) in &theirs {
            if !self.entries().iter().any(|(key, _)| key == k) {
                diff.push(k.clone());
            }
        }
        Ok(diff)
    }
}

fn kv_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
