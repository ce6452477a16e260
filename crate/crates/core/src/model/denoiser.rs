//! Two-agent diffusion transformer.
//!
//! Tokens are the latent cells of one agent in `(frame, y, x)` order. Block `j`
//! applies, when `j` is even, the camera embedding and then cross-agent attention
//! over both agents' tokens concatenated along frames; every block then runs a
//! per-agent DiT block.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swtensor::{Element, Graph, ParamSet, Tensor, Var};

use super::rope::{grid_positions, rope_tables, RopeBands};
use crate::config::{Ablation, Config, LatentShape, ModelConfig, RaymapMode};
use crate::error::{Error, Result};

/// Standard deviation of modulation and output-head weights at init.
const SMALL_INIT: f64 = 0.02;

/// Cosine and sine tables `[N, head_dim / 2]`.
pub type RopeTables<T> = (Arc<Tensor<T>>, Arc<Tensor<T>>);

/// Inputs of one agent, all latent-aligned.
#[derive(Debug, Clone)]
pub struct AgentInput<T> {
    /// Noisy latent `[f, h, w, c_lat]`.
    pub x_t: Tensor<T>,
    /// Clean latent whose frame 0 conditions the generation, `[f, h, w, c_lat]`.
    pub cond: Tensor<T>,
    /// Packed raymap `[f, h, w, 6·s_t]`, raw camera values `[f, 16·s_t]`, or nothing.
    pub camera: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Zero,
}

/// Model structure; parameters live in a separate [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub model: ModelConfig,
    pub ablate: Ablation,
    pub latent: LatentShape,
    pub bands: RopeBands,
    /// Give agent 2 the low frame indices inside cross-agent attention.
    pub swap_cross_frames: bool,
}

impl Denoiser {
    pub fn new(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Denoiser {
            model: cfg.model.clone(),
            ablate: cfg.ablate,
            latent: cfg.latent_shape(),
            bands: RopeBands::new(cfg.model.head_dim)?,
            swap_cross_frames: false,
        })
    }

    fn c(&self) -> usize {
        self.model.dim
    }

    pub fn raymap_channels(&self) -> usize {
        6 * self.model.temporal_factor
    }

    pub fn raw_channels(&self) -> usize {
        16 * self.model.temporal_factor
    }

    fn input_channels(&self) -> usize {
        2 * self.latent.channels + 1
    }

    fn even_blocks(&self) -> impl Iterator<Item = usize> {
        (0..self.model.blocks).step_by(2)
    }

    /// Names, shapes and init rules, in creation order. Cross-agent blocks are
    /// copied from their host blocks afterwards.
    fn param_specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let c = self.c();
        let lc = self.latent.channels;
        let mut v: Vec<(String, Vec<usize>, Init)> = Vec::new();
        let lin = |v: &mut Vec<_>, name: &str, din: usize, dout: usize, w: Init| {
            v.push((format!("{name}.weight"), vec![din, dout], w));
            v.push((format!("{name}.bias"), vec![dout], Init::Zero));
        };
        let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());
        lin(&mut v, "embed", self.input_channels(), c, fan(self.input_channels()));
        lin(&mut v, "time.fc1", c, c, fan(c));
        lin(&mut v, "time.fc2", c, c, fan(c));
        for j in 0..self.model.blocks {
            let p = format!("blocks.{j}");
            lin(&mut v, &format!("{p}.mod"), c, 4 * c, Init::Normal(SMALL_INIT));
            lin(&mut v, &format!("{p}.attn.qkv"), c, 3 * c, fan(c));
            lin(&mut v, &format!("{p}.attn.out"), c, c, fan(c));
            lin(&mut v, &format!("{p}.ffn.fc1"), c, 4 * c, fan(c));
            lin(&mut v, &format!("{p}.ffn.fc2"), 4 * c, c, fan(4 * c));
        }
        for j in self.even_blocks() {
            match self.ablate.raymap_mode {
                RaymapMode::Raymap => {
                    let rc = self.raymap_channels();
                    lin(&mut v, &format!("raymap.{j}.fc1"), rc, c, fan(rc));
                    lin(&mut v, &format!("raymap.{j}.fc2"), c, c, Init::Zero);
                }
                RaymapMode::RawValues => lin(&mut v, &format!("rawcam.{j}"), self.raw_channels(), c, Init::Zero),
                RaymapMode::Off => {}
            }
            if self.ablate.cross_agent {
                lin(&mut v, &format!("cross.{j}.proj"), c, c, Init::Zero);
            }
        }
        lin(&mut v, "final.mod", c, 2 * c, Init::Normal(SMALL_INIT));
        lin(&mut v, "head", c, lc, Init::Normal(SMALL_INIT));
        v
    }

    /// Seeded initialization. Values are drawn in f64, so every dtype starts from
    /// the same numbers.
    pub fn init_params<T: Element>(&self, seed: u64) -> Result<ParamSet<T>> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        for (name, shape, init) in self.param_specs() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zero => vec![T::zero(); n],
                Init::Normal(std) => (0..n)
                    .map(|_| T::c(std * Distribution::<f64>::sample(&StandardNormal, &mut rng)))
                    .collect(),
            };
            ps.insert(name, Tensor::new(&shape, data)?)?;
        }
        if self.ablate.cross_agent {
            let c = self.c();
            for j in self.even_blocks() {
                let host = |s: &str| ps.get(&format!("blocks.{j}.{s}")).expect("host").clone();
                // Attention-branch shift/scale columns of the host modulation.
                let w = host("mod.weight");
                let wd: Vec<T> = w.data().chunks(4 * c).flat_map(|r| r[..2 * c].iter().copied()).collect();
                let b = host("mod.bias");
                let copies = [
                    ("mod.weight", Tensor::new(&[c, 2 * c], wd)?),
                    ("mod.bias", Tensor::new(&[2 * c], b.data()[..2 * c].to_vec())?),
                    ("attn.qkv.weight", host("attn.qkv.weight")),
                    ("attn.qkv.bias", host("attn.qkv.bias")),
                    ("attn.out.weight", host("attn.out.weight")),
                    ("attn.out.bias", host("attn.out.bias")),
                ];
                for (s, t) in copies {
                    ps.insert(format!("cross.{j}.{s}"), t)?;
                }
            }
        }
        Ok(ps)
    }

    /// Checks that a parameter set has exactly the tensors this structure uses.
    pub fn check_params<T: Element>(&self, ps: &ParamSet<T>) -> Result<()> {
        let fresh = self.init_params::<T>(0)?;
        let want: Vec<(&String, &[usize])> = fresh.iter().map(|(k, v)| (k, v.shape())).collect();
        let have: Vec<(&String, &[usize])> = ps.iter().map(|(k, v)| (k, v.shape())).collect();
        if want != have {
            return Err(Error::Dimension("parameter set does not match the model structure".into()));
        }
        Ok(())
    }

    fn input_tokens<T: Element>(&self, inp: &AgentInput<T>) -> Result<Tensor<T>> {
        let dims = self.latent.dims();
        for (what, t) in [("x_t", &inp.x_t), ("cond", &inp.cond)] {
            if t.shape() != dims {
                return Err(Error::Dimension(format!("{what} is {:?}, model expects {dims:?}", t.shape())));
            }
        }
        let lc = self.latent.channels;
        let per_frame = self.latent.height * self.latent.width;
        let ic = self.input_channels();
        let mut data = Vec::with_capacity(self.latent.tokens() * ic);
        for tok in 0..self.latent.tokens() {
            let frame = tok / per_frame;
            let cell = tok % per_frame;
            data.extend_from_slice(&inp.x_t.data()[tok * lc..(tok + 1) * lc]);
            data.extend_from_slice(&inp.cond.data()[cell * lc..(cell + 1) * lc]);
            data.push(if frame == 0 { T::one() } else { T::zero() });
        }
        Ok(Tensor::new(&[self.latent.tokens(), ic], data)?)
    }

    /// Tables for within-agent attention: frames `0..f`.
    pub fn within_rope<T: Element>(&self) -> RopeTables<T> {
        rope_tables(self.bands, &grid_positions(self.latent.frames, self.latent.height, self.latent.width, 0))
    }

    /// Tables for cross-agent attention: one agent on frames `0..f`, the other on `f..2f`.
    pub fn cross_rope<T: Element>(&self) -> RopeTables<T> {
        let (f, h, w) = (self.latent.frames, self.latent.height, self.latent.width);
        let (a, b) = if self.swap_cross_frames { (f, 0) } else { (0, f) };
        let mut pos = grid_positions(f, h, w, a);
        pos.extend(grid_positions(f, h, w, b));
        rope_tables(self.bands, &pos)
    }

    /// Both agents' noise predictions `[f, h, w, c_lat]`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, inputs: &[AgentInput<T>; 2], t: usize) -> Result<[Var; 2]> {
        let temb = self.time_embedding(g, ps, t)?;
        let mut feats = [self.embed(g, ps, &inputs[0])?, self.embed(g, ps, &inputs[1])?];
        let rope = self.within_rope::<T>();
        let cross_rope = self.cross_rope::<T>();
        for j in 0..self.model.blocks {
            if j % 2 == 0 {
                for (f, inp) in feats.iter_mut().zip(inputs) {
                    if let Some(e) = self.camera_embedding(g, ps, j, inp)? {
                        *f = g.add(*f, e)?;
                    }
                }
                if self.ablate.cross_agent {
                    feats = self.cross_block(g, ps, j, feats, temb, &cross_rope)?;
                }
            }
            for f in feats.iter_mut() {
                *f = self.dit_block(g, ps, j, *f, temb, &rope)?;
            }
        }
        Ok([self.head(g, ps, feats[0], temb)?, self.head(g, ps, feats[1], temb)?])
    }

    /// The base single-agent model: no camera embedding, no cross-agent attention.
    pub fn forward_single<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, input: &AgentInput<T>, t: usize) -> Result<Var> {
        let temb = self.time_embedding(g, ps, t)?;
        let mut f = self.embed(g, ps, input)?;
        let rope = self.within_rope::<T>();
        for j in 0..self.model.blocks {
            f = self.dit_block(g, ps, j, f, temb, &rope)?;
        }
        self.head(g, ps, f, temb)
    }

    /// Untraced prediction.
    pub fn predict<T: Element>(&self, ps: &ParamSet<T>, inputs: &[AgentInput<T>; 2], t: usize) -> Result<[Tensor<T>; 2]> {
        let mut g = Graph::untraced();
        let [a, b] = self.forward(&mut g, ps, inputs, t)?;
        Ok([g.value(a).clone(), g.value(b).clone()])
    }

    pub fn embed<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, inp: &AgentInput<T>) -> Result<Var> {
        let x = g.constant(self.input_tokens(inp)?)?;
        linear(g, ps, "embed", x)
    }

    pub fn time_embedding<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, t: usize) -> Result<Var> {
        let s = g.constant(sinusoidal(t as f64, self.c()))?;
        let h = linear(g, ps, "time.fc1", s)?;
        let h = g.gelu(h)?;
        linear(g, ps, "time.fc2", h)
    }

    pub fn camera_embedding<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, j: usize, inp: &AgentInput<T>) -> Result<Option<Var>> {
        let (n, c) = (self.latent.tokens(), self.c());
        let (f, hw) = (self.latent.frames, self.latent.height * self.latent.width);
        match (self.ablate.raymap_mode, &inp.camera) {
            (RaymapMode::Off, _) => Ok(None),
            (_, None) => Err(Error::Dimension("camera conditioning is enabled but no camera input was given".into())),
            (RaymapMode::Raymap, Some(ray)) => {
                let want = [f, self.latent.height, self.latent.width, self.raymap_channels()];
                if ray.shape() != want {
                    return Err(Error::Dimension(format!("raymap is {:?}, expected {want:?}", ray.shape())));
                }
                let r = g.constant(ray.reshape(&[n, self.raymap_channels()])?)?;
                let h = linear(g, ps, &format!("raymap.{j}.fc1"), r)?;
                let h = g.gelu(h)?;
                Ok(Some(linear(g, ps, &format!("raymap.{j}.fc2"), h)?))
            }
            (RaymapMode::RawValues, Some(raw)) => {
                let want = [f, self.raw_channels()];
                if raw.shape() != want {
                    return Err(Error::Dimension(format!("raw camera values are {:?}, expected {want:?}", raw.shape())));
                }
                let r = g.constant(raw.clone())?;
                let e = linear(g, ps, &format!("rawcam.{j}"), r)?;
                let e = g.reshape(e, &[f, 1, c])?;
                let e = g.broadcast_to(e, &[f, hw, c])?;
                Ok(Some(g.reshape(e, &[n, c])?))
            }
        }
    }

    pub fn dit_block<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, j: usize, x: Var, temb: Var, rope: &RopeTables<T>) -> Result<Var> {
        let p = format!("blocks.{j}");
        let c = self.c();
        let m = linear(g, ps, &format!("{p}.mod"), temb)?;
        let parts = g.split(m, 0, &[c; 4])?;
        let h = g.layernorm(x)?;
        let h = modulate(g, h, parts[0], parts[1])?;
        let a = attention(g, ps, &format!("{p}.attn"), h, self.model.heads, self.model.head_dim, rope)?;
        let x = g.add(x, a)?;
        let h = g.layernorm(x)?;
        let h = modulate(g, h, parts[2], parts[3])?;
        let h = linear(g, ps, &format!("{p}.ffn.fc1"), h)?;
        let h = g.gelu(h)?;
        let h = linear(g, ps, &format!("{p}.ffn.fc2"), h)?;
        Ok(g.add(x, h)?)
    }

    pub fn cross_block<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, j: usize, feats: [Var; 2], temb: Var, rope: &RopeTables<T>) -> Result<[Var; 2]> {
        let p = format!("cross.{j}");
        let c = self.c();
        let n = self.latent.tokens();
        let joint = g.concat(&feats, 0)?;
        let m = linear(g, ps, &format!("{p}.mod"), temb)?;
        let parts = g.split(m, 0, &[c, c])?;
        let h = g.layernorm(joint)?;
        let h = modulate(g, h, parts[0], parts[1])?;
        let a = attention(g, ps, &format!("{p}.attn"), h, self.model.heads, self.model.head_dim, rope)?;
        let proj = linear(g, ps, &format!("{p}.proj"), a)?;
        let back = g.split(proj, 0, &[n, n])?;
        Ok([g.add(feats[0], back[0])?, g.add(feats[1], back[1])?])
    }

    pub fn head<T: Element>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, x: Var, temb: Var) -> Result<Var> {
        let c = self.c();
        let m = linear(g, ps, "final.mod", temb)?;
        let parts = g.split(m, 0, &[c, c])?;
        let h = g.layernorm(x)?;
        let h = modulate(g, h, parts[0], parts[1])?;
        let out = linear(g, ps, "head", h)?;
        Ok(g.reshape(out, &self.latent.dims())?)
    }
}

/// `prefix.weight`/`prefix.bias` linear layer.
pub(crate) fn linear<T: Element>(g: &mut Graph<T>, ps: &ParamSet<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(ps, &format!("{prefix}.weight"))?;
    let b = g.param(ps, &format!("{prefix}.bias"))?;
    Ok(g.linear(x, w, Some(b))?)
}

/// `x·(1 + scale) + shift` with per-channel `shift`, `scale`.
fn modulate<T: Element>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let c = g.shape(scale)[0];
    let one = g.constant(Tensor::ones(&[c]))?;
    let s = g.add(scale, one)?;
    let y = g.mul(x, s)?;
    Ok(g.add(y, shift)?)
}

/// Softmax attention probabilities `[H, N, N]` and the head-merged output `[N, c]`.
pub fn attention_parts<T: Element>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    head_dim: usize,
    rope: &RopeTables<T>,
) -> Result<(Var, Var)> {
    let n = g.shape(x)[0];
    let c = heads * head_dim;
    let qkv = linear(g, ps, &format!("{prefix}.qkv"), x)?;
    let qkv = g.reshape(qkv, &[n, 3, heads, head_dim])?;
    let qkv = g.permute(qkv, &[1, 2, 0, 3])?;
    let mut parts = Vec::with_capacity(3);
    for i in 0..3 {
        let s = g.slice(qkv, 0, i, 1)?;
        parts.push(g.reshape(s, &[heads, n, head_dim])?);
    }
    let q = g.rotary(parts[0], rope.0.clone(), rope.1.clone())?;
    let k = g.rotary(parts[1], rope.0.clone(), rope.1.clone())?;
    let kt = g.permute(k, &[0, 2, 1])?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, T::c(1.0 / (head_dim as f64).sqrt()))?;
    let probs = g.softmax(s, 2)?;
    let o = g.matmul(probs, parts[2])?;
    let o = g.permute(o, &[1, 0, 2])?;
    let o = g.reshape(o, &[n, c])?;
    Ok((probs, linear(g, ps, &format!("{prefix}.out"), o)?))
}

fn attention<T: Element>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    head_dim: usize,
    rope: &RopeTables<T>,
) -> Result<Var> {
    Ok(attention_parts(g, ps, prefix, x, heads, head_dim, rope)?.1)
}

/// `[cos(t·ω_i)…, sin(t·ω_i)…]` with `ω_i = 10000^(−i/(d/2))`.
pub fn sinusoidal<T: Element>(t: f64, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut v = vec![T::zero(); dim];
    for i in 0..half {
        let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        v[i] = T::c((t * w).cos());
        v[half + i] = T::c((t * w).sin());
    }
    Tensor::new(&[dim], v).expect("sized")
}

/// Mean squared error over both agents and every element.
pub fn pair_loss<T: Element>(g: &mut Graph<T>, pred: [Var; 2], target: [&Tensor<T>; 2]) -> Result<Var> {
    let mut total = None;
    let mut count = 0;
    for (p, t) in pred.into_iter().zip(target) {
        let tv = g.constant(t.clone())?;
        let d = g.sub(p, tv)?;
        let sq = g.mul(d, d)?;
        let s = g.sum(sq)?;
        count += t.numel();
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    Ok(g.scale(total.expect("two agents"), T::c(1.0 / count as f64))?)
}
