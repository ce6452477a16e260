//! Central finite-difference verification of reverse-mode gradients.

use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    /// `max |analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)`.
    pub rel_error: f64,
    pub abs_error: f64,
    pub grad_scale: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    /// Fixed-width table, one parameter per line.
    pub fn table(&self) -> String {
        let width = self.params.iter().map(|p| p.name.len()).max().unwrap_or(4).max(4);
        let mut s = format!(
            "{:<width$}  {:>7}  {:>10}  {:>10}  {:>10}  status\n",
            "name", "numel", "rel_err", "abs_err", "|grad|max"
        );
        for p in &self.params {
            s.push_str(&format!(
                "{:<width$}  {:>7}  {:>10.3e}  {:>10.3e}  {:>10.3e}  {}\n",
                p.name,
                p.numel,
                p.rel_error,
                p.abs_error,
                p.grad_scale,
                if p.passed { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Relative error between two gradient tensors, with a `1e-8` floor on the scale.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64, f64) {
    let abs = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    (abs / scale.max(1e-8), abs, scale)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against central
/// differences with step `h`, for every parameter of `params`.
///
/// Never fails on a mismatch; mismatches are reported in the returned table.
pub fn finite_diff_check<T, F>(f: F, params: &ParamSet<T>, h: f64, tolerance: f64) -> Result<GradReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &ParamSet<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let grads = g.backward(loss, params)?;

    let eval = |p: &ParamSet<T>| -> Result<f64> {
        let mut g = Graph::untraced();
        let v = f(&mut g, p)?;
        Ok(g.value(v).item().to_f64().unwrap_or(f64::NAN))
    };

    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let base = params.get(&name).expect("listed").clone();
        let mut numeric = Vec::with_capacity(base.numel());
        let mut data = base.data().to_vec();
        for i in 0..base.numel() {
            let orig = data[i];
            data[i] = orig + T::c(h);
            work.set(&name, Tensor::new(base.shape(), data.clone())?)?;
            let plus = eval(&work)?;
            data[i] = orig - T::c(h);
            work.set(&name, Tensor::new(base.shape(), data.clone())?)?;
            let minus = eval(&work)?;
            data[i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        work.set(&name, base.clone())?;
        let analytic: Vec<f64> = grads
            .get(&name)
            .expect("backward fills every parameter")
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        let (rel, abs, scale) = relative_error(&analytic, &numeric);
        report.push(ParamCheck {
            name,
            numel: base.numel(),
            rel_error: rel,
            abs_error: abs,
            grad_scale: scale,
            passed: rel < tolerance,
        });
    }
    Ok(GradReport {
        tolerance,
        params: report,
    })
}
