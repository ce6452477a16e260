//! Deterministic DDIM sampling for both agents at once.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use swtensor::{Element, ParamSet, Tensor};

use super::denoiser::{AgentInput, Denoiser};
use super::schedule::Schedule;
use crate::error::Result;

/// Inputs of one sampling run.
#[derive(Debug, Clone)]
pub struct SampleRequest<T> {
    /// Clean latents whose frame 0 conditions each agent.
    pub cond: [Tensor<T>; 2],
    pub cameras: [Option<Tensor<T>>; 2],
    pub steps: usize,
    pub seed: u64,
    /// Clamp the predicted clean latent to `[-1, 1]` at every step.
    pub clip_x0: bool,
}

fn overwrite_frame0<T: Element>(x: &mut [T], clean: &[T], per_frame: usize) {
    x[..per_frame].copy_from_slice(&clean[..per_frame]);
}

/// η = 0 DDIM over `steps` strided timesteps. Latent frame 0 is replaced by the
/// clean conditioning latent after every step.
pub fn ddim_sample<T: Element>(model: &Denoiser, params: &ParamSet<T>, schedule: &Schedule, req: &SampleRequest<T>) -> Result<[Tensor<T>; 2]> {
    let dims = model.latent.dims();
    let per_frame = model.latent.height * model.latent.width * model.latent.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut noise = || -> Tensor<T> {
        Tensor::from_fn(&dims, |_| T::c(StandardNormal.sample(&mut rng)))
    };
    let mut x = [noise(), noise()];
    let taus = schedule.strided(req.steps)?;
    for k in (0..taus.len()).rev() {
        let t = taus[k];
        let prev_ab = if k == 0 { 1.0 } else { schedule.alpha_bar(taus[k - 1]) };
        let inputs = [0, 1].map(|i| AgentInput {
            x_t: x[i].clone(),
            cond: req.cond[i].clone(),
            camera: req.cameras[i].clone(),
        });
        let eps = model.predict(params, &inputs, t)?;
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        let (ap, sp) = (prev_ab.sqrt(), (1.0 - prev_ab).sqrt());
        for i in 0..2 {
            let next: Vec<T> = x[i]
                .data()
                .iter()
                .zip(eps[i].data())
                .map(|(&xv, &ev)| {
                    let (xv, ev) = (xv.to_f64().unwrap_or(f64::NAN), ev.to_f64().unwrap_or(f64::NAN));
                    let mut x0 = (xv - s * ev) / a;
                    let mut e = ev;
                    if req.clip_x0 {
                        x0 = x0.clamp(-1.0, 1.0);
                        e = (xv - a * x0) / s;
                    }
                    T::c(ap * x0 + sp * e)
                })
                .collect();
            let mut next = next;
            overwrite_frame0(&mut next, req.cond[i].data(), per_frame);
            x[i] = Tensor::new(&dims, next)?;
        }
    }
    Ok(x)
}
