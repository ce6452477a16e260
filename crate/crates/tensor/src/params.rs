use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::Gradients;
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<T> {
    value: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Named parameters with their Adam moments. Iteration is lexicographic by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: BTreeMap<String, Entry<T>>,
    step: u64,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
            step: 0,
        }
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::invalid(
                "param",
                format!("duplicate parameter `{name}`"),
            ));
        }
        let n = value.numel();
        self.entries.insert(
            name,
            Entry {
                value,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            },
        );
        Ok(())
    }

    /// Replaces the value of an existing parameter, keeping its moments.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_param",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter().map(|(k, e)| (k, &e.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Number of optimizer steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers of one parameter.
    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.entries.get(name).map(|e| (&e.m[..], &e.v[..]))
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn set_moments(&mut self, name: &str, m: Vec<T>, v: Vec<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if m.len() != e.value.numel() || v.len() != e.value.numel() {
            return Err(TensorError::invalid(
                "set_moments",
                format!("moment length mismatch for `{name}`"),
            ));
        }
        e.m = m;
        e.v = v;
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// One bias-corrected Adam update over every parameter that has a gradient.
    pub fn adam_step(&mut self, grads: &Gradients<T>, opt: &Adam) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::c(opt.beta1);
        let b2 = T::c(opt.beta2);
        let one = T::one();
        let c1 = one - T::c(opt.beta1.powi(t));
        let c2 = one - T::c(opt.beta2.powi(t));
        let lr = T::c(opt.lr);
        let eps = T::c(opt.eps);
        for (name, e) in self.entries.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != e.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: e.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let mut w = std::mem::replace(&mut e.value, Tensor::scalar(T::zero())).into_vec();
            for i in 0..w.len() {
                let gi = g.data()[i];
                e.m[i] = b1 * e.m[i] + (one - b1) * gi;
                e.v[i] = b2 * e.v[i] + (one - b2) * gi * gi;
                let mh = e.m[i] / c1;
                let vh = e.v[i] / c2;
                w[i] = w[i] - lr * mh / (vh.sqrt() + eps);
            }
            e.value = Tensor::new(g.shape(), w)?;
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        let cast = |v: &[T]| v.iter().map(|x| U::c(x.to_f64().unwrap())).collect();
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            value: e.value.cast(),
                            m: cast(&e.m),
                            v: cast(&e.v),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}
