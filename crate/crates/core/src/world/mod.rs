//! Procedural two-agent driving world: scenes, paired trajectories, a raycasting
//! renderer and clip packing.

mod clip;
mod dataset;
mod image;
mod render;
mod rig;
mod scene;
mod trajectory;

pub use clip::{clip_indices, clip_offsets, clip_pairs, generate_pair_clips, ClipPair, PairSpec};
pub use dataset::{
    clip_dir, clip_dirs, generate_clips, read_clip, read_dataset, read_video, sequence_specs, write_clip, write_dataset,
    write_video,
};
pub use image::{assemble_four_view, Image, Video};
pub use render::{line_of_sight, render_view, AgentBody, RayHit};
pub use rig::{camera_rig, camera_rotation, front_track, View};
pub use scene::{generate_scene, Layout, Scene, SceneBox, Weather};
pub use trajectory::{simulate_pair, AgentState, TrajectoryPattern};

/// Simulation time step, seconds.
pub const DT: f64 = 0.05;
/// Speed cap, meters per second.
pub const V_MAX: f64 = 15.0;
/// Camera mount height above the ground, meters.
pub const CAMERA_HEIGHT: f64 = 1.5;
/// Samples per clip.
pub const CLIP_FRAMES: usize = 49;
/// Source-frame step between clip samples.
pub const CLIP_STEP: usize = 3;
/// Source-frame stride between clip windows.
pub const CLIP_STRIDE: usize = 49;
/// Body color of both agents.
pub const AGENT_RED: [u8; 3] = [200, 20, 20];
