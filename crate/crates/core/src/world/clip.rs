use std::collections::BTreeSet;

use swtensor::par;

use super::image::{assemble_four_view, Image, Video};
use super::render::{render_view, AgentBody};
use super::rig::{camera_rig, front_track, View};
use super::scene::generate_scene;
use super::trajectory::{simulate_pair, AgentState, TrajectoryPattern};
use super::{CLIP_FRAMES, CLIP_STEP, CLIP_STRIDE, DT};
use crate::camera::{CameraFrame, CameraIntrinsics, CameraTrack};
use crate::error::{Error, Result};

/// Everything needed to regenerate one source sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSpec {
    pub pattern: TrajectoryPattern,
    pub scene_seed: u64,
    pub traj_seed: u64,
    pub weather: u8,
}

/// Two synchronized agent videos with their front-camera tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair {
    pub videos: [Video; 2],
    pub tracks: [CameraTrack; 2],
    pub spec: PairSpec,
    /// First source frame of the window.
    pub offset: usize,
    /// Four-view grid frames, or the front view alone.
    pub four_views: bool,
}

impl ClipPair {
    pub fn frames(&self) -> usize {
        self.videos[0].frames
    }

    /// Source-frame index of every clip sample.
    pub fn source_frames(&self) -> Vec<usize> {
        (0..self.frames()).map(|k| self.offset + CLIP_STEP * k).collect()
    }

    /// Simulation time of every sample of agent `i`, seconds.
    pub fn timestamps(&self, agent: usize) -> Vec<f64> {
        assert!(agent < 2);
        self.source_frames().iter().map(|&s| s as f64 * DT).collect()
    }

    /// Keeps the first `n` samples of both agents.
    pub fn truncated(&self, n: usize) -> Result<ClipPair> {
        Ok(ClipPair {
            videos: [self.videos[0].truncated(n)?, self.videos[1].truncated(n)?],
            tracks: [self.tracks[0].truncated(n)?, self.tracks[1].truncated(n)?],
            ..*self
        })
    }
}

/// Window offsets `0, 49, 98, …` whose last sample fits in the source.
pub fn clip_offsets(source_len: usize) -> Result<Vec<usize>> {
    let span = CLIP_STEP * (CLIP_FRAMES - 1);
    if source_len <= span {
        return Err(Error::Dimension(format!(
            "source of {source_len} frames is shorter than one clip ({} frames)",
            span + 1
        )));
    }
    Ok((0..)
        .map(|i| i * CLIP_STRIDE)
        .take_while(|o| o + span < source_len)
        .collect())
}

pub fn clip_indices(offset: usize) -> Vec<usize> {
    (0..CLIP_FRAMES).map(|k| offset + CLIP_STEP * k).collect()
}

/// Cuts full-length synchronized videos and tracks into clip pairs.
pub fn clip_pairs(
    videos: [&Video; 2],
    tracks: [&CameraTrack; 2],
    spec: PairSpec,
    four_views: bool,
) -> Result<Vec<ClipPair>> {
    let n = videos[0].frames;
    if videos[1].frames != n || tracks[0].len() != n || tracks[1].len() != n {
        return Err(Error::Dimension(
            "agent videos and tracks must share one source length".into(),
        ));
    }
    if videos[0].height != videos[1].height || videos[0].width != videos[1].width {
        return Err(Error::Dimension("agent videos differ in resolution".into()));
    }
    clip_offsets(n)?
        .into_iter()
        .map(|offset| {
            let idx = clip_indices(offset);
            let cut = |v: &Video| -> Result<Video> {
                Video::from_frames(&idx.iter().map(|&k| v.frame(k)).collect::<Vec<_>>())
            };
            Ok(ClipPair {
                videos: [cut(videos[0])?, cut(videos[1])?],
                tracks: [tracks[0].select(&idx)?, tracks[1].select(&idx)?],
                spec,
                offset,
                four_views,
            })
        })
        .collect()
}

fn body(agent: &AgentState, k: usize) -> AgentBody {
    AgentBody {
        center: agent.body_center(k),
        yaw: agent.yaws[k],
        extents: agent.extents,
        color: agent.color,
    }
}

/// One grid frame of agent `i` at source frame `k`.
pub(crate) fn render_agent_frame(
    scene: &super::Scene,
    agents: &[AgentState; 2],
    i: usize,
    k: usize,
    view_h: usize,
    view_w: usize,
    four_views: bool,
) -> Result<Image> {
    let other = [body(&agents[1 - i], k)];
    let k_view = CameraIntrinsics::wide(view_h, view_w);
    let shoot = |v: View| {
        let cam = CameraFrame {
            intrinsics: k_view,
            pose: camera_rig(&single_frame(&agents[i], k), v)[0],
        };
        render_view(scene, &other, &cam, view_h, view_w)
    };
    if four_views {
        let views = View::ALL.map(shoot);
        let [f, r, l, rt] = views;
        assemble_four_view([&f?, &r?, &l?, &rt?])
    } else {
        shoot(View::Front)
    }
}

fn single_frame(agent: &AgentState, k: usize) -> AgentState {
    AgentState {
        positions: vec![agent.positions[k]],
        yaws: vec![agent.yaws[k]],
        extents: agent.extents,
        color: agent.color,
    }
}

/// Simulates, renders and clips one source sequence. Only frames used by some clip
/// are rendered; output matches cutting a fully rendered sequence.
pub fn generate_pair_clips(spec: PairSpec, view_h: usize, view_w: usize, four_views: bool) -> Result<Vec<ClipPair>> {
    let scene = generate_scene(spec.scene_seed, spec.weather);
    let agents = simulate_pair(spec.pattern, &scene, spec.traj_seed)?;
    let n = agents[0].len();
    let offsets = clip_offsets(n)?;
    let needed: Vec<usize> = offsets
        .iter()
        .flat_map(|&o| clip_indices(o))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rendered: Vec<[Image; 2]> = par::try_map_range(needed.len(), |j| -> Result<[Image; 2]> {
        let k = needed[j];
        Ok([
            render_agent_frame(&scene, &agents, 0, k, view_h, view_w, four_views)?,
            render_agent_frame(&scene, &agents, 1, k, view_h, view_w, four_views)?,
        ])
    })?;
    let tracks = [
        front_track(&agents[0], view_h, view_w)?,
        front_track(&agents[1], view_h, view_w)?,
    ];
    offsets
        .into_iter()
        .map(|offset| {
            let idx = clip_indices(offset);
            let frames = |i: usize| -> Result<Video> {
                let imgs: Vec<Image> = idx
                    .iter()
                    .map(|k| rendered[needed.binary_search(k).expect("rendered")][i].clone())
                    .collect();
                Video::from_frames(&imgs)
            };
            Ok(ClipPair {
                videos: [frames(0)?, frames(1)?],
                tracks: [tracks[0].select(&idx)?, tracks[1].select(&idx)?],
                spec,
                offset,
                four_views,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_for_common_lengths() {
        assert_eq!(clip_offsets(250).unwrap(), vec![0, 49, 98]);
        assert_eq!(clip_offsets(145).unwrap(), vec![0]);
        assert!(clip_offsets(144).is_err());
        assert_eq!(clip_indices(49)[48], 49 + 144);
    }
}
