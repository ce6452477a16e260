//! Pinhole cameras, trajectory normalization and raymap construction.
//!
//! Poses are camera-to-world: a camera-frame direction `d` maps to `R·d` in the
//! world, and `t` is the camera origin in world coordinates. Camera axes follow
//! the x-right, y-down, z-forward convention.

use std::fmt::Write as _;
use std::path::Path;

use swtensor::{par, Tensor};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// 90° horizontal field of view, principal point at the image center.
    pub fn wide(height: usize, width: usize) -> Self {
        let f = width as f64 / 2.0;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Same optics at a different resolution.
    pub fn rescaled(&self, factor: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if rotation.orthogonality_error() > 1e-6 || (rotation.det() - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("not a rotation: {rotation:?}")));
        }
        Ok(CameraPose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        CameraPose {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
        }
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.col(2)
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl CameraFrame {
    /// Pixel coordinates and depth of a world point, if it lies in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.world_to_camera(p);
        if c.z() <= 1e-9 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy, c.z()))
    }

    /// True when the point projects inside the image.
    pub fn sees(&self, p: Vec3) -> bool {
        let k = &self.intrinsics;
        matches!(self.project(p), Some((u, v, _))
            if (0.0..k.width as f64).contains(&u) && (0.0..k.height as f64).contains(&v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraTrack {
    frames: Vec<CameraFrame>,
}

impl CameraTrack {
    pub fn new(frames: Vec<CameraFrame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let (w, h) = (first.intrinsics.width, first.intrinsics.height);
            if frames
                .iter()
                .any(|f| f.intrinsics.width != w || f.intrinsics.height != h)
            {
                return Err(Error::Dimension(
                    "track frames disagree on image size".into(),
                ));
            }
        }
        Ok(CameraTrack { frames })
    }

    pub fn frames(&self) -> &[CameraFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Keeps the listed frames, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<CameraTrack> {
        let frames = indices
            .iter()
            .map(|&i| {
                self.frames.get(i).copied().ok_or_else(|| {
                    Error::Dimension(format!("frame {i} out of range {}", self.frames.len()))
                })
            })
            .collect::<Result<_>>()?;
        Ok(CameraTrack { frames })
    }

    pub fn truncated(&self, n: usize) -> Result<CameraTrack> {
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// Text form: an intrinsics line, then one `[R|t]` row-major line per frame.
    pub fn to_text(&self) -> Result<String> {
        let k = self
            .frames
            .first()
            .ok_or_else(|| Error::Format("empty track".into()))?
            .intrinsics;
        if self.frames.iter().any(|f| f.intrinsics != k) {
            return Err(Error::Format(
                "text tracks need one intrinsics per track".into(),
            ));
        }
        let mut s = format!(
            "{} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        );
        for f in &self.frames {
            let r = &f.pose.rotation.0;
            let t = f.pose.translation;
            let vals = [
                r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
                r[2][2], t[2],
            ];
            let line: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<CameraTrack> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines
            .next()
            .ok_or_else(|| Error::Format("empty track file".into()))?;
        let h: Vec<&str> = head.split_whitespace().collect();
        if h.len() != 6 {
            return Err(Error::Format(format!(
                "intrinsics line needs 6 fields, got {}",
                h.len()
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad number `{s}`")))
        };
        let u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad integer `{s}`")))
        };
        let k = CameraIntrinsics::new(f(h[0])?, f(h[1])?, f(h[2])?, f(h[3])?, u(h[4])?, u(h[5])?)?;
        let mut frames = Vec::new();
        for line in lines {
            let v: Vec<f64> = line.split_whitespace().map(f).collect::<Result<_>>()?;
            if v.len() != 12 {
                return Err(Error::Format(format!(
                    "pose line needs 12 fields, got {}",
                    v.len()
                )));
            }
            let rot = Mat3([[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]]);
            let pose = CameraPose::new(rot, Vec3::new(v[3], v[7], v[11]))?;
            frames.push(CameraFrame {
                intrinsics: k,
                pose,
            });
        }
        CameraTrack::new(frames)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<CameraTrack> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CameraTrack::from_text(&text)
    }

    /// Applies `p ↦ R_g·p + d` to every pose.
    pub fn transformed(&self, rg: Mat3, d: Vec3) -> CameraTrack {
        CameraTrack {
            frames: self
                .frames
                .iter()
                .map(|f| CameraFrame {
                    intrinsics: f.intrinsics,
                    pose: CameraPose {
                        rotation: rg * f.pose.rotation,
                        translation: rg * f.pose.translation + d,
                    },
                })
                .collect(),
        }
    }
}

/// Subtracts the centroid of all translations of all tracks, then adds `jitter`.
pub fn mean_normalize(tracks: &[CameraTrack], jitter: Option<Vec3>) -> Result<Vec<CameraTrack>> {
    let n: usize = tracks.iter().map(|t| t.len()).sum();
    if n == 0 {
        return Err(Error::Format("mean_normalize needs at least one frame".into()));
    }
    let sum = tracks
        .iter()
        .flat_map(|t| t.frames.iter())
        .fold(Vec3::ZERO, |acc, f| acc + f.pose.translation);
    let centroid = sum.scale(1.0 / n as f64);
    let shift = jitter.unwrap_or(Vec3::ZERO);
    Ok(tracks
        .iter()
        .map(|t| CameraTrack {
            frames: t
                .frames
                .iter()
                .map(|f| CameraFrame {
                    intrinsics: f.intrinsics,
                    pose: CameraPose {
                        rotation: f.pose.rotation,
                        translation: f.pose.translation - centroid + shift,
                    },
                })
                .collect(),
        })
        .collect())
}

/// Camera-frame ray through each pixel center, `z = 1`. Shape `[H, W, 3]`.
pub fn pixel_ray_directions(k: &CameraIntrinsics, height: usize, width: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(height * width * 3);
    for v in 0..height {
        let y = (v as f64 + 0.5 - k.cy) / k.fy;
        for u in 0..width {
            data.extend([(u as f64 + 0.5 - k.cx) / k.fx, y, 1.0]);
        }
    }
    Tensor::new(&[height, width, 3], data).expect("sized")
}

/// World-frame `[r_d, r_o]` per pixel for every frame. Shape `[F, H, W, 6]`.
pub fn build_raymap_frames(track: &CameraTrack) -> Result<Tensor<f64>> {
    let first = track
        .frames
        .first()
        .ok_or_else(|| Error::Format("empty track".into()))?;
    let (h, w) = (first.intrinsics.height, first.intrinsics.width);
    let per = h * w * 6;
    let mut data = vec![0.0; track.len() * per];
    par::for_each_chunk(&mut data, per, |i, out| {
        let f = &track.frames[i];
        let dirs = pixel_ray_directions(&f.intrinsics, h, w);
        let o = f.pose.translation;
        for (px, d) in dirs.data().chunks_exact(3).enumerate() {
            let rd = f.pose.rotation * Vec3([d[0], d[1], d[2]]);
            out[px * 6..px * 6 + 6].copy_from_slice(&[rd[0], rd[1], rd[2], o[0], o[1], o[2]]);
        }
    });
    Ok(Tensor::new(&[track.len(), h, w, 6], data)?)
}

/// Source frames feeding each latent frame: frame 0 repeated, then consecutive groups.
pub fn temporal_groups(frames: usize, s_t: usize) -> Result<Vec<Vec<usize>>> {
    if s_t == 0 || frames == 0 || !(frames - 1).is_multiple_of(s_t) {
        return Err(Error::Dimension(format!(
            "{frames} frames cannot be grouped as 1 + {s_t}k"
        )));
    }
    let f = 1 + (frames - 1) / s_t;
    Ok((0..f)
        .map(|j| {
            if j == 0 {
                vec![0; s_t]
            } else {
                (1 + s_t * (j - 1)..=s_t * j).collect()
            }
        })
        .collect())
}

/// Bilinear downsample of `[H, W, C]` by an integer factor, half-pixel aligned.
pub fn bilinear_downsample(src: &[f64], h: usize, w: usize, c: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = (h / s, w / s);
    let taps = |o: usize, n: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * s as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        let (y0, y1, fy) = taps(oy, h);
        for ox in 0..ow {
            let (x0, x1, fx) = taps(ox, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(oy * ow + ox) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Output extents of [`pack_raymap`] for input extents `[F, H, W, C]`.
pub fn packed_raymap_dims(shape: [usize; 4], s_sp: usize, s_t: usize) -> Result<[usize; 4]> {
    let [nf, h, w, c] = shape;
    if s_sp == 0 || h % s_sp != 0 || w % s_sp != 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} not divisible by spatial factor {s_sp}"
        )));
    }
    Ok([temporal_groups(nf, s_t)?.len(), h / s_sp, w / s_sp, c * s_t])
}

/// Packs `[F, H, W, 6]` ray frames into the latent grid `[f, H/s_sp, W/s_sp, 6·s_t]`.
pub fn pack_raymap(frames: &Tensor<f64>, s_sp: usize, s_t: usize) -> Result<Tensor<f64>> {
    let &[nf, h, w, c] = frames.shape() else {
        return Err(Error::Dimension(format!(
            "raymap frames must be [F, H, W, C], got {:?}",
            frames.shape()
        )));
    };
    let [_, oh, ow, _] = packed_raymap_dims([nf, h, w, c], s_sp, s_t)?;
    let groups = temporal_groups(nf, s_t)?;
    let down: Vec<Vec<f64>> = par::map_range(nf, |i| {
        let src = &frames.data()[i * h * w * c..(i + 1) * h * w * c];
        bilinear_downsample(src, h, w, c, s_sp)
    });
    let oc = c * s_t;
    let mut data = vec![0.0; groups.len() * oh * ow * oc];
    for (j, group) in groups.iter().enumerate() {
        for cell in 0..oh * ow {
            let base = (j * oh * ow + cell) * oc;
            for (g, &src) in group.iter().enumerate() {
                data[base + g * c..base + (g + 1) * c]
                    .copy_from_slice(&down[src][cell * c..(cell + 1) * c]);
            }
        }
    }
    Ok(Tensor::new(&[groups.len(), oh, ow, oc], data)?)
}

/// Per-frame `(fx, fy, cx, cy, R, t)` vectors grouped like the raymap: `[f, 16·s_t]`.
pub fn raw_camera_values(track: &CameraTrack, s_t: usize) -> Result<Tensor<f64>> {
    let groups = temporal_groups(track.len(), s_t)?;
    let mut data = Vec::with_capacity(groups.len() * 16 * s_t);
    for group in &groups {
        for &i in group {
            let f = &track.frames[i];
            let k = &f.intrinsics;
            data.extend([k.fx, k.fy, k.cx, k.cy]);
            data.extend(f.pose.rotation.0.iter().flatten().copied());
            data.extend(f.pose.translation.0);
        }
    }
    Ok(Tensor::new(&[groups.len(), 16 * s_t], data)?)
}
