use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clip::{ClipPair, PairSpec};
use super::image::Video;
use super::scene::generate_scene;
use super::trajectory::TrajectoryPattern;
use crate::camera::CameraTrack;
use crate::error::{Error, Result};
use crate::svt::{SvtData, SvtTensor};

/// Spec of the `i`-th source sequence of a dataset seed. Distinct dataset seeds
/// never share a scene seed.
pub fn sequence_specs(seed: u64, i: u64) -> PairSpec {
    let scene_seed = (seed << 32) | (i & 0xffff_ffff);
    let layout = generate_scene(scene_seed, 0).layout;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed ^ 0x9a17_5eed);
    let feasible: Vec<TrajectoryPattern> = TrajectoryPattern::ALL
        .into_iter()
        .filter(|p| p.feasible_on(layout))
        .collect();
    PairSpec {
        pattern: feasible[rng.gen_range(0..feasible.len())],
        scene_seed,
        traj_seed: rng.gen_range(0..1u64 << 32),
        weather: rng.gen_range(0..3),
    }
}

/// The first `pairs` clip pairs of dataset `seed`, taken from consecutive source
/// sequences. `progress` receives each finished clip index.
pub fn generate_clips(
    seed: u64,
    pairs: usize,
    view_h: usize,
    view_w: usize,
    four_views: bool,
    mut progress: impl FnMut(usize),
) -> Result<Vec<ClipPair>> {
    let mut out = Vec::with_capacity(pairs);
    let mut i = 0u64;
    while out.len() < pairs {
        for clip in super::clip::generate_pair_clips(sequence_specs(seed, i), view_h, view_w, four_views)? {
            if out.len() < pairs {
                progress(out.len());
                out.push(clip);
            }
        }
        i += 1;
    }
    Ok(out)
}

fn video_to_svt(v: &Video) -> SvtTensor {
    SvtTensor {
        shape: v.shape().to_vec(),
        data: SvtData::U8(v.data.clone()),
    }
}

fn video_from_svt(t: SvtTensor, path: &Path) -> Result<Video> {
    match (t.shape.as_slice(), t.data) {
        (&[f, h, w, 3], SvtData::U8(data)) => Video::new(f, h, w, data),
        (shape, data) => Err(Error::Dimension(format!(
            "{}: expected a [F, H, W, 3] u8 video, found {:?} {}",
            path.display(),
            shape,
            data.dtype().name()
        ))),
    }
}

/// Writes a video as an RGB8 `[F, H, W, 3]` tensor file.
pub fn write_video(v: &Video, path: &Path) -> Result<()> {
    video_to_svt(v).write(path)
}

pub fn read_video(path: &Path) -> Result<Video> {
    video_from_svt(SvtTensor::read(path)?, path)
}

pub fn write_clip(clip: &ClipPair, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let v = &clip.videos[0];
    let manifest = format!(
        "pattern={}\nscene_seed={}\ntraj_seed={}\nweather={}\nframes={}\ngrid_h={}\ngrid_w={}\nviews={}\noffset={}\n",
        clip.spec.pattern.name(),
        clip.spec.scene_seed,
        clip.spec.traj_seed,
        clip.spec.weather,
        v.frames,
        v.height,
        v.width,
        if clip.four_views { 4 } else { 1 },
        clip.offset
    );
    let p = dir.join("manifest.txt");
    fs::write(&p, manifest).map_err(|e| Error::io(&p, e))?;
    for k in 0..2 {
        video_to_svt(&clip.videos[k]).write(&dir.join(format!("agent{}_video.svt", k + 1)))?;
        clip.tracks[k].write(&dir.join(format!("agent{}_track.txt", k + 1)))?;
    }
    Ok(())
}

pub fn read_clip(dir: &Path) -> Result<ClipPair> {
    let p = dir.join("manifest.txt");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let get = |key: &str| -> Result<&str> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| Error::Format(format!("{}: missing `{key}`", p.display())))
    };
    let num = |key: &str| -> Result<u64> {
        get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad `{key}`", p.display())))
    };
    let pattern = TrajectoryPattern::from_name(get("pattern")?)
        .ok_or_else(|| Error::Format(format!("{}: unknown pattern", p.display())))?;
    let spec = PairSpec {
        pattern,
        scene_seed: num("scene_seed")?,
        traj_seed: num("traj_seed")?,
        weather: num("weather")? as u8,
    };
    let views = num("views")?;
    let (frames, gh, gw) = (num("frames")? as usize, num("grid_h")? as usize, num("grid_w")? as usize);
    let mut videos = Vec::with_capacity(2);
    let mut tracks = Vec::with_capacity(2);
    for k in 1..=2 {
        let vp = dir.join(format!("agent{k}_video.svt"));
        let v = video_from_svt(SvtTensor::read(&vp)?, &vp)?;
        if (v.frames, v.height, v.width) != (frames, gh, gw) {
            return Err(Error::Dimension(format!(
                "{}: video is {:?}, manifest says [{frames}, {gh}, {gw}, 3]",
                vp.display(),
                v.shape()
            )));
        }
        let t = CameraTrack::read(&dir.join(format!("agent{k}_track.txt")))?;
        if t.len() != frames {
            return Err(Error::Dimension(format!(
                "{}: track has {} frames, video has {frames}",
                dir.display(),
                t.len()
            )));
        }
        videos.push(v);
        tracks.push(t);
    }
    let [v0, v1]: [Video; 2] = videos.try_into().expect("two");
    let [t0, t1]: [CameraTrack; 2] = tracks.try_into().expect("two");
    Ok(ClipPair {
        videos: [v0, v1],
        tracks: [t0, t1],
        spec,
        offset: num("offset")? as usize,
        four_views: views == 4,
    })
}

pub fn clip_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("clip_{i:05}"))
}

pub fn write_dataset(clips: &[ClipPair], root: &Path) -> Result<()> {
    clips
        .iter()
        .enumerate()
        .try_for_each(|(i, c)| write_clip(c, &clip_dir(root, i)))
}

/// Clip directories under `root`, sorted by name.
pub fn clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("clip_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<ClipPair>> {
    clip_dirs(root)?.iter().map(|d| read_clip(d)).collect()
}
