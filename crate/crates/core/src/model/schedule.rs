//! Variance-preserving noise schedules.

use swtensor::{Element, Tensor};

use crate::config::ScheduleKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `ᾱ_t` for `t = 1..=T`, stored at index `t - 1`.
    alpha_bar: Vec<f64>,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion needs at least one step"));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    if steps == 1 {
                        1e-4
                    } else {
                        1e-4 + (2e-2 - 1e-4) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(0.999))
                    .collect()
            }
        };
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Schedule { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Signal scale `√ᾱ_t`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// Noise scale `√(1 − ᾱ_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Dimension(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `x_t = α_t·x0 + σ_t·ε`.
    pub fn q_sample<T: Element>(&self, x0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_t(t)?;
        let (a, s) = (T::c(self.alpha(t)), T::c(self.sigma(t)));
        Ok(x0.zip_map(eps, |x, e| a * x + s * e)?)
    }

    /// DDIM timesteps `τ_k = ⌊k·T/n⌋` for `k = 1..=n`, ascending and ending at `T`.
    pub fn strided(&self, n: usize) -> Result<Vec<usize>> {
        if n == 0 || n > self.steps() {
            return Err(Error::config(format!("sampler steps {n} outside 1..={}", self.steps())));
        }
        Ok((1..=n).map(|k| k * self.steps() / n).collect())
    }
}
