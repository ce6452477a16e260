//! Two-agent shared-world video generation at desk scale: a procedural driving
//! world, camera raymaps, a latent diffusion transformer with cross-agent
//! attention, training, sampling and evaluation.

pub mod camera;
pub mod config;
mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod svt;
pub mod train;
pub mod verify;
pub mod world;

pub use config::Config;
pub use error::{Error, ErrorKind, Result};
