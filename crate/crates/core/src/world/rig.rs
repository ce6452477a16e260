use std::f64::consts::{FRAC_PI_2, PI};

use super::trajectory::AgentState;
use super::CAMERA_HEIGHT;
use crate::camera::{CameraFrame, CameraIntrinsics, CameraPose, CameraTrack};
use crate::error::Result;
use crate::geom::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Front,
    Rear,
    Left,
    Right,
}

impl View {
    /// Grid order: front, rear on top; left, right below.
    pub const ALL: [View; 4] = [View::Front, View::Rear, View::Left, View::Right];

    pub fn name(self) -> &'static str {
        match self {
            View::Front => "front",
            View::Rear => "rear",
            View::Left => "left",
            View::Right => "right",
        }
    }

    pub fn yaw_offset(self) -> f64 {
        match self {
            View::Front => 0.0,
            View::Rear => PI,
            View::Left => FRAC_PI_2,
            View::Right => -FRAC_PI_2,
        }
    }
}

/// Camera-to-world rotation for a level camera looking along heading `yaw`.
pub fn camera_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    let right = Vec3::new(s, -c, 0.0);
    let down = Vec3::new(0.0, 0.0, -1.0);
    let forward = Vec3::new(c, s, 0.0);
    Mat3::from_cols(right, down, forward)
}

/// Per-frame pose of one body-mounted camera.
pub fn camera_rig(agent: &AgentState, view: View) -> Vec<CameraPose> {
    agent
        .positions
        .iter()
        .zip(&agent.yaws)
        .map(|(p, &yaw)| CameraPose {
            rotation: camera_rotation(yaw + view.yaw_offset()),
            translation: *p + Vec3::new(0.0, 0.0, CAMERA_HEIGHT),
        })
        .collect()
}

/// Front-camera track with 90° field of view at `height × width`.
pub fn front_track(agent: &AgentState, height: usize, width: usize) -> Result<CameraTrack> {
    let k = CameraIntrinsics::wide(height, width);
    CameraTrack::new(
        camera_rig(agent, View::Front)
            .into_iter()
            .map(|pose| CameraFrame { intrinsics: k, pose })
            .collect(),
    )
}
