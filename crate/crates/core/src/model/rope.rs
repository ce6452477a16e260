//! Three-axis rotary position embedding over interleaved channel pairs.

use std::sync::Arc;

use swtensor::{Element, Tensor};

use crate::error::{Error, Result};

pub const ROPE_BASE: f64 = 10_000.0;

/// Split of a head's channel pairs into frame, height and width bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RopeBands {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
}

impl RopeBands {
    /// Height and width each get `⌊3p/8⌋` of the `p = d/2` pairs; frames get the rest.
    pub fn new(head_dim: usize) -> Result<Self> {
        if !head_dim.is_multiple_of(2) {
            return Err(Error::config(format!("head_dim {head_dim} is odd")));
        }
        let pairs = head_dim / 2;
        let hw = pairs * 3 / 8;
        let b = RopeBands {
            frame: pairs.saturating_sub(2 * hw),
            height: hw,
            width: hw,
        };
        if b.frame == 0 || b.height == 0 {
            return Err(Error::config(format!(
                "head_dim {head_dim} cannot give every rope axis a channel pair"
            )));
        }
        Ok(b)
    }

    pub fn pairs(&self) -> usize {
        self.frame + self.height + self.width
    }
}

/// Token positions of an `f×h×w` grid in row-major order, frames shifted by `frame_offset`.
pub fn grid_positions(f: usize, h: usize, w: usize, frame_offset: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(f * h * w);
    for t in 0..f {
        for y in 0..h {
            for x in 0..w {
                out.push([t + frame_offset, y, x]);
            }
        }
    }
    out
}

/// Cos/sin tables `[N, d/2]` for the given positions.
pub fn rope_tables<T: Element>(bands: RopeBands, positions: &[[usize; 3]]) -> (Arc<Tensor<T>>, Arc<Tensor<T>>) {
    let sizes = [bands.frame, bands.height, bands.width];
    let mut freqs = Vec::with_capacity(bands.pairs());
    for (axis, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            freqs.push((axis, ROPE_BASE.powf(-(i as f64) / n as f64)));
        }
    }
    let p = freqs.len();
    let mut cos = Vec::with_capacity(positions.len() * p);
    let mut sin = Vec::with_capacity(positions.len() * p);
    for pos in positions {
        for &(axis, fr) in &freqs {
            let a = pos[axis] as f64 * fr;
            cos.push(T::c(a.cos()));
            sin.push(T::c(a.sin()));
        }
    }
    let shape = [positions.len(), p];
    (
        Arc::new(Tensor::new(&shape, cos).expect("sized")),
        Arc::new(Tensor::new(&shape, sin).expect("sized")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use swtensor::{kernels, Graph};

    #[test]
    fn band_split() {
        assert_eq!(RopeBands::new(32).unwrap(), RopeBands { frame: 4, height: 6, width: 6 });
        assert_eq!(RopeBands::new(8).unwrap(), RopeBands { frame: 2, height: 1, width: 1 });
        assert!(RopeBands::new(4).is_err());
        assert!(RopeBands::new(7).is_err());
    }

    fn rotate(v: &[f64], pos: [usize; 3], bands: RopeBands) -> Vec<f64> {
        let (c, s) = rope_tables::<f64>(bands, &[pos]);
        kernels::rotary(v, 1, v.len(), c.data(), s.data(), false)
    }

    #[test]
    fn norm_preserved_and_origin_identity() {
        let bands = RopeBands::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Tensor::<f64>::randn(&[16], 1.0, &mut rng);
        let r = rotate(v.data(), [3, 7, 2], bands);
        let n = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
        assert!((n(&r) - n(v.data())).abs() < 1e-12);
        assert_eq!(rotate(v.data(), [0, 0, 0], bands), v.data());
    }

    #[test]
    fn dot_depends_on_offsets_only() {
        let bands = RopeBands::new(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Tensor::<f64>::randn(&[32], 1.0, &mut rng);
        let k = Tensor::<f64>::randn(&[32], 1.0, &mut rng);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let base = dot(&rotate(q.data(), [1, 4, 0], bands), &rotate(k.data(), [3, 1, 5], bands));
        let shifted = dot(&rotate(q.data(), [6, 6, 3], bands), &rotate(k.data(), [8, 3, 8], bands));
        assert!((base - shifted).abs() < 1e-10);
        let other = dot(&rotate(q.data(), [1, 4, 0], bands), &rotate(k.data(), [4, 1, 5], bands));
        assert!((base - other).abs() > 1e-6);
    }

    #[test]
    fn graph_op_matches_tables() {
        let bands = RopeBands::new(8).unwrap();
        let pos = grid_positions(2, 1, 2, 0);
        let (c, s) = rope_tables::<f64>(bands, &pos);
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[4, 8])).unwrap();
        let y = g.rotary(x, c, s).unwrap();
        assert_eq!(g.value(y).data()[..8], [1.0; 8]);
    }
}
