//! Latent codec stand-in: an exact space-time patchify, optionally followed by a
//! fixed row-orthonormal projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use swtensor::{Element, Tensor};

use crate::camera::temporal_groups;
use crate::config::{Config, VaeMode};
use crate::error::{Error, Result};
use crate::world::Video;

const PROJECTION_SEED: u64 = 0x0dec_0de5;

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub s_sp: usize,
    pub s_t: usize,
    pub latent_c: usize,
    /// `[latent_c, patch_c]` with orthonormal rows, projection mode only.
    proj: Option<Vec<f64>>,
}

impl Vae {
    pub fn new(cfg: &Config) -> Result<Self> {
        let m = &cfg.model;
        Self::with(m.spatial_factor, m.temporal_factor, m.latent_channels, m.vae_mode)
    }

    pub fn with(s_sp: usize, s_t: usize, latent_c: usize, mode: VaeMode) -> Result<Self> {
        let pc = 3 * s_sp * s_sp * s_t;
        let proj = match mode {
            VaeMode::Invertible if latent_c != pc => {
                return Err(Error::Dimension(format!(
                    "invertible latent needs {pc} channels, got {latent_c}"
                )))
            }
            VaeMode::Invertible => None,
            VaeMode::Projection if latent_c == 0 || latent_c > pc => {
                return Err(Error::Dimension(format!(
                    "projection latent needs 1..={pc} channels, got {latent_c}"
                )))
            }
            VaeMode::Projection => Some(orthonormal_rows(latent_c, pc, PROJECTION_SEED)),
        };
        Ok(Vae {
            s_sp,
            s_t,
            latent_c,
            proj,
        })
    }

    pub fn patch_channels(&self) -> usize {
        3 * self.s_sp * self.s_sp * self.s_t
    }

    pub fn is_invertible(&self) -> bool {
        self.proj.is_none()
    }

    /// Latent `[f, h, w]` for a `frames × height × width` video.
    pub fn latent_dims(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        if !height.is_multiple_of(self.s_sp) || !width.is_multiple_of(self.s_sp) {
            return Err(Error::Dimension(format!(
                "{height}x{width} not divisible by {}",
                self.s_sp
            )));
        }
        let groups = temporal_groups(frames, self.s_t)?;
        Ok([groups.len(), height / self.s_sp, width / self.s_sp])
    }

    /// Video bytes mapped to `[-1, 1]`, then encoded.
    pub fn encode<T: Element>(&self, video: &Video) -> Result<Tensor<T>> {
        let values: Vec<f64> = video.data.iter().map(|&p| p as f64 / 127.5 - 1.0).collect();
        let z = self.encode_values(&values, video.frames, video.height, video.width)?;
        Ok(z.cast())
    }

    /// Encodes a float video `[F, H, W, 3]`.
    pub fn encode_values(&self, values: &[f64], frames: usize, height: usize, width: usize) -> Result<Tensor<f64>> {
        let [f, h, w] = self.latent_dims(frames, height, width)?;
        let groups = temporal_groups(frames, self.s_t)?;
        let (s, pc) = (self.s_sp, self.patch_channels());
        let mut patches = vec![0.0; f * h * w * pc];
        for (j, group) in groups.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let cell = ((j * h + y) * w + x) * pc;
                    let mut ch = 0;
                    for &src in group {
                        for dy in 0..s {
                            let row = (src * height + y * s + dy) * width + x * s;
                            patches[cell + ch..cell + ch + 3 * s].copy_from_slice(&values[row * 3..(row + s) * 3]);
                            ch += 3 * s;
                        }
                    }
                }
            }
        }
        let data = match &self.proj {
            None => patches,
            Some(p) => matvec_rows(p, &patches, self.latent_c, pc, false),
        };
        Ok(Tensor::new(&[f, h, w, self.latent_c], data)?)
    }

    /// Inverse of [`encode_values`](Self::encode_values) on its range.
    pub fn decode_values<T: Element>(&self, latent: &Tensor<T>) -> Result<(Vec<f64>, [usize; 3])> {
        let &[f, h, w, c] = latent.shape() else {
            return Err(Error::Dimension(format!("latent must be 4-D, got {:?}", latent.shape())));
        };
        if c != self.latent_c {
            return Err(Error::Dimension(format!("latent has {c} channels, codec {}", self.latent_c)));
        }
        let (s, pc) = (self.s_sp, self.patch_channels());
        let z: Vec<f64> = latent.data().iter().map(|v| v.to_f64().unwrap()).collect();
        let patches = match &self.proj {
            None => z,
            Some(p) => matvec_rows(p, &z, self.latent_c, pc, true),
        };
        let frames = 1 + self.s_t * (f - 1);
        let (height, width) = (h * s, w * s);
        let mut out = vec![0.0; frames * height * width * 3];
        let groups = temporal_groups(frames, self.s_t)?;
        let chunk = 3 * s * s;
        for (j, group) in groups.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let cell = &patches[((j * h + y) * w + x) * pc..][..pc];
                    let place = |src: usize, vals: &[f64], out: &mut [f64]| {
                        for dy in 0..s {
                            let row = (src * height + y * s + dy) * width + x * s;
                            out[row * 3..(row + s) * 3].copy_from_slice(&vals[dy * 3 * s..(dy + 1) * 3 * s]);
                        }
                    };
                    if j == 0 {
                        // Replicas of frame 0: r0 + mean(ri - r0) is exact when they agree.
                        let n = group.len() as f64;
                        let r0 = &cell[..chunk];
                        let avg: Vec<f64> = (0..chunk)
                            .map(|i| r0[i] + (1..group.len()).map(|g| cell[g * chunk + i] - r0[i]).sum::<f64>() / n)
                            .collect();
                        place(0, &avg, &mut out);
                    } else {
                        for (g, &src) in group.iter().enumerate() {
                            place(src, &cell[g * chunk..(g + 1) * chunk], &mut out);
                        }
                    }
                }
            }
        }
        Ok((out, [frames, height, width]))
    }

    /// Decodes and quantizes to RGB8.
    pub fn decode<T: Element>(&self, latent: &Tensor<T>) -> Result<Video> {
        let (values, [f, h, w]) = self.decode_values(latent)?;
        let data = values
            .iter()
            .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect();
        Video::new(f, h, w, data)
    }
}

/// `P·x` per row vector, or `Pᵀ·x` when `transpose`, for `P` of `[rows, cols]`.
fn matvec_rows(p: &[f64], xs: &[f64], rows: usize, cols: usize, transpose: bool) -> Vec<f64> {
    let (din, dout) = if transpose { (rows, cols) } else { (cols, rows) };
    let mut out = Vec::with_capacity(xs.len() / din * dout);
    for x in xs.chunks_exact(din) {
        if transpose {
            let mut y = vec![0.0; cols];
            for (r, &xv) in x.iter().enumerate() {
                for (yc, &pv) in y.iter_mut().zip(&p[r * cols..(r + 1) * cols]) {
                    *yc += pv * xv;
                }
            }
            out.extend(y);
        } else {
            out.extend((0..rows).map(|r| p[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()));
        }
    }
    out
}

/// Gram-Schmidt on Gaussian rows.
fn orthonormal_rows(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    for r in 0..rows {
        for _ in 0..2 {
            for q in 0..r {
                let dot: f64 = (0..cols).map(|c| m[r * cols + c] * m[q * cols + c]).sum();
                for c in 0..cols {
                    m[r * cols + c] -= dot * m[q * cols + c];
                }
            }
        }
        let norm = (0..cols).map(|c| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
        for c in 0..cols {
            m[r * cols + c] /= norm;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn video(frames: usize, h: usize, w: usize, seed: u64) -> Video {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Video::new(frames, h, w, (0..frames * h * w * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn invertible_round_trip_is_exact() {
        let vae = Vae::with(4, 4, 3 * 16 * 4, VaeMode::Invertible).unwrap();
        let v = video(9, 36, 48, 1);
        let z: Tensor<f32> = vae.encode(&v).unwrap();
        assert_eq!(z.shape(), &[3, 9, 12, 192]);
        assert_eq!(vae.decode(&z).unwrap(), v);
        let z64: Tensor<f64> = vae.encode(&v).unwrap();
        assert_eq!(vae.decode(&z64).unwrap(), v);
    }

    #[test]
    fn frame_zero_group_replicates() {
        let vae = Vae::with(2, 2, 24, VaeMode::Invertible).unwrap();
        let v = video(3, 2, 2, 2);
        let z: Tensor<f64> = vae.encode(&v).unwrap();
        let cell0 = &z.data()[..24];
        assert_eq!(&cell0[..12], &cell0[12..]);
    }

    #[test]
    fn projection_encode_decode_identity() {
        // Exact on latent frames >= 1. The frame-0 group collapses its replicas, so
        // there the round trip is the symmetric contraction P·A·Pᵀ.
        let vae = Vae::with(2, 2, 10, VaeMode::Projection).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let round = |z: &Tensor<f64>| {
            let (vals, [f, h, w]) = vae.decode_values(z).unwrap();
            vae.encode_values(&vals, f, h, w).unwrap()
        };
        let z = Tensor::<f64>::randn(&[3, 3, 2, 10], 1.0, &mut rng);
        let once = round(&z);
        let per = 3 * 2 * 10;
        for (a, b) in once.data()[per..].iter().zip(&z.data()[per..]) {
            assert!((a - b).abs() < 1e-5);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let z2 = Tensor::<f64>::randn(&[3, 3, 2, 10], 1.0, &mut rng);
        let once2 = round(&z2);
        let (m1, m2) = (&once.data()[..per], &once2.data()[..per]);
        let (a1, a2) = (&z.data()[..per], &z2.data()[..per]);
        assert!((dot(m1, a2) - dot(a1, m2)).abs() < 1e-9);
        assert!(dot(m1, m1) <= dot(a1, a1) + 1e-9);
    }

    #[test]
    fn rejects_bad_dims() {
        let vae = Vae::with(4, 4, 192, VaeMode::Invertible).unwrap();
        assert!(vae.encode::<f32>(&video(8, 36, 48, 0)).is_err());
        assert!(vae.encode::<f32>(&video(9, 34, 48, 0)).is_err());
        assert!(Vae::with(4, 4, 100, VaeMode::Invertible).is_err());
    }
}
