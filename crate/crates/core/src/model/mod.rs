//! Latent codec, noise schedule, positional encoding, denoiser and sampler.

mod denoiser;
pub mod rope;
mod sampler;
pub mod schedule;
pub mod vae;

pub use denoiser::{attention_parts, pair_loss, sinusoidal, AgentInput, Denoiser, RopeTables};
pub use rope::{grid_positions, rope_tables, RopeBands};
pub use sampler::{ddim_sample, SampleRequest};
pub use schedule::Schedule;
pub use vae::Vae;

use swtensor::{Element, Tensor};

use crate::camera::{build_raymap_frames, mean_normalize, pack_raymap, raw_camera_values, CameraTrack};
use crate::config::{Config, RaymapMode};
use crate::error::Result;
use crate::geom::Vec3;
use crate::world::ClipPair;

/// Camera conditioning of both agents after joint mean-normalization and an
/// optional shared translation jitter.
pub fn camera_inputs<T: Element>(cfg: &Config, tracks: [&CameraTrack; 2], jitter: Option<Vec3>) -> Result<[Option<Tensor<T>>; 2]> {
    let m = &cfg.model;
    if cfg.ablate.raymap_mode == RaymapMode::Off {
        return Ok([None, None]);
    }
    let norm = mean_normalize(&[tracks[0].clone(), tracks[1].clone()], jitter)?;
    let one = |t: &CameraTrack| -> Result<Option<Tensor<T>>> {
        let v = match cfg.ablate.raymap_mode {
            RaymapMode::Raymap => pack_raymap(&build_raymap_frames(t)?, m.spatial_factor, m.temporal_factor)?,
            _ => raw_camera_values(t, m.temporal_factor)?,
        };
        Ok(Some(v.cast()))
    };
    Ok([one(&norm[0])?, one(&norm[1])?])
}

/// Clean latents and front-camera tracks of a clip pair, cut to `cfg.data.frames`.
#[derive(Debug, Clone)]
pub struct PreparedPair<T> {
    pub latents: [Tensor<T>; 2],
    pub tracks: [CameraTrack; 2],
}

impl<T: Element> PreparedPair<T> {
    pub fn new(cfg: &Config, vae: &Vae, clip: &ClipPair) -> Result<Self> {
        let clip = clip.truncated(cfg.data.frames)?;
        Ok(PreparedPair {
            latents: [vae.encode(&clip.videos[0])?, vae.encode(&clip.videos[1])?],
            tracks: clip.tracks.clone(),
        })
    }

    pub fn cameras(&self, cfg: &Config, jitter: Option<Vec3>) -> Result<[Option<Tensor<T>>; 2]> {
        camera_inputs(cfg, [&self.tracks[0], &self.tracks[1]], jitter)
    }
}
