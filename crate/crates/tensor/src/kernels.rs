//! Forward and backward kernels on raw row-major buffers.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::par;
use crate::tensor::{numel, strides};

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                st[i - lead]
            }
        })
        .collect()
}

/// Elementwise binary op over broadcast shapes.
pub fn broadcast_binary<T: Element>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n = numel(out_shape);
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    // `b` repeats over leading axes of `a`: the bias / modulation case.
    if a_shape == out_shape && !b.is_empty() && out_shape.ends_with(b_shape) {
        let m = b.len();
        return a
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b[i % m]))
            .collect();
    }
    if b_shape == out_shape && !a.is_empty() && out_shape.ends_with(a_shape) {
        let m = a.len();
        return b
            .iter()
            .enumerate()
            .map(|(i, &y)| f(a[i % m], y))
            .collect();
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut idx = vec![0usize; out_shape.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(a[oa], b[ob]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// Sums `grad` (of shape `from`) down to the broadcast source shape `to`.
pub fn reduce_to_shape<T: Element>(grad: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); numel(to)];
    if !out.is_empty() && from.ends_with(to) {
        let m = out.len();
        for (i, &g) in grad.iter().enumerate() {
            out[i % m] = out[i % m] + g;
        }
        return out;
    }
    let st = broadcast_strides(to, from);
    let mut idx = vec![0usize; from.len()];
    let mut o = 0usize;
    for &g in grad {
        out[o] = out[o] + g;
        for d in (0..from.len()).rev() {
            idx[d] += 1;
            o += st[d];
            if idx[d] < from[d] {
                break;
            }
            o -= st[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// Shapes for `[..., m, k] @ [..., k, n]`; `b` may also be a shared 2-D matrix.
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub b_shared: bool,
    pub out_shape: Vec<usize>,
}

pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    let err = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let b_shared = b_batch.is_empty();
    if !b_shared && a_batch != b_batch {
        return Err(err());
    }
    let mut out_shape = a_batch.to_vec();
    out_shape.extend([m, n]);
    Ok(MatmulDims {
        batch: numel(a_batch),
        m,
        k,
        n,
        b_shared,
        out_shape,
    })
}

/// `c = a @ b` for one pair of (possibly transposed) row-major matrices.
/// `a` is `m x k` (stored `k x m` when `ta`), `b` is `k x n` (stored `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: slice lengths checked above; c does not alias a or b.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

pub fn matmul_forward<T: Element>(a: &[T], b: &[T], d: &MatmulDims) -> Vec<T> {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![T::zero(); d.batch * m * n];
    if d.b_shared {
        // Fold the batch into rows: a single large gemm.
        gemm(d.batch * m, k, n, a, false, b, false, &mut out, false);
        return out;
    }
    par::for_each_chunk(&mut out, m * n, |i, c| {
        gemm(
            m,
            k,
            n,
            &a[i * m * k..(i + 1) * m * k],
            false,
            &b[i * k * n..(i + 1) * k * n],
            false,
            c,
            false,
        )
    });
    out
}

/// Returns `(grad_a, grad_b)` for `c = a @ b`.
pub fn matmul_backward<T: Element>(
    a: &[T],
    b: &[T],
    gc: &[T],
    d: &MatmulDims,
) -> (Vec<T>, Vec<T>) {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    if d.b_shared {
        let rows = d.batch * m;
        // ga = gc @ b^T ; gb = a^T @ gc
        gemm(rows, n, k, gc, false, b, true, &mut ga, false);
        gemm(k, rows, n, a, true, gc, false, &mut gb, false);
        return (ga, gb);
    }
    par::for_each_chunk(&mut ga, m * k, |i, c| {
        gemm(
            m,
            n,
            k,
            &gc[i * m * n..(i + 1) * m * n],
            false,
            &b[i * k * n..(i + 1) * k * n],
            true,
            c,
            false,
        )
    });
    par::for_each_chunk(&mut gb, k * n, |i, c| {
        gemm(
            k,
            m,
            n,
            &a[i * m * k..(i + 1) * m * k],
            true,
            &gc[i * m * n..(i + 1) * m * n],
            false,
            c,
            false,
        )
    });
    (ga, gb)
}

pub fn permute<T: Element>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_st = strides(shape);
    let src_st: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return (out, out_shape);
    }
    let nd = out_shape.len();
    let last_len = out_shape[nd - 1];
    let last_st = src_st[nd - 1];
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    while out.len() < n {
        let mut o = off;
        for _ in 0..last_len {
            out.push(data[o]);
            o += last_st;
        }
        // advance the odometer over all but the innermost axis
        let mut d = nd - 1;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            idx[d] += 1;
            off += src_st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_st[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// (outer, axis length, inner) decomposition around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Normalizes rows of length `d`; returns (output, per-row reciprocal std).
pub fn layernorm_forward<T: Element>(x: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let eps = T::c(LAYERNORM_EPS);
    let inv_d = T::one() / T::c(d as f64);
    let stats: Vec<(T, T)> = (0..rows)
        .map(|r| {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            (mean, T::one() / (var + eps).sqrt())
        })
        .collect();
    let mut out = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut out, d, |r, o| {
        let (mean, rs) = stats[r];
        for (o, &v) in o.iter_mut().zip(&x[r * d..(r + 1) * d]) {
            *o = (v - mean) * rs;
        }
    });
    (out, stats.into_iter().map(|(_, rs)| rs).collect())
}

pub fn layernorm_backward<T: Element>(y: &[T], rstd: &[T], gy: &[T], d: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    let inv_d = T::one() / T::c(d as f64);
    par::for_each_chunk(&mut gx, d, |r, g| {
        let yr = &y[r * d..(r + 1) * d];
        let gr = &gy[r * d..(r + 1) * d];
        let mean_g = gr.iter().copied().sum::<T>() * inv_d;
        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        for i in 0..d {
            g[i] = rstd[r] * (gr[i] - mean_g - yr[i] * mean_gy);
        }
    });
    gx
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu<T: Element>(x: T) -> T {
    let k = T::c(GELU_K);
    let c = T::c(GELU_C);
    let half = T::c(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

pub fn gelu_grad<T: Element>(x: T) -> T {
    let k = T::c(GELU_K);
    let c = T::c(GELU_C);
    let half = T::c(0.5);
    let th = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + th)
        + half * x * (T::one() - th * th) * k * (T::one() + T::c(3.0) * c * x * x)
}

pub fn softmax_forward<T: Element>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    if inner == 1 {
        par::for_each_chunk(&mut out, len, |r, o| {
            let row = &x[r * len..(r + 1) * len];
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            for (o, &v) in o.iter_mut().zip(row) {
                *o = (v - mx).exp();
                s = s + *o;
            }
            let inv = T::one() / s;
            for o in o.iter_mut() {
                *o = *o * inv;
            }
        });
        return out;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mx = (0..len).fold(T::neg_infinity(), |m, j| m.max(x[at(j)]));
            let mut s = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - mx).exp();
                out[at(j)] = e;
                s = s + e;
            }
            for j in 0..len {
                out[at(j)] = out[at(j)] / s;
            }
        }
    }
    out
}

pub fn softmax_backward<T: Element>(y: &[T], gy: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut gx = vec![T::zero(); y.len()];
    if inner == 1 {
        par::for_each_chunk(&mut gx, len, |r, g| {
            let yr = &y[r * len..(r + 1) * len];
            let gr = &gy[r * len..(r + 1) * len];
            let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
            for j in 0..len {
                g[j] = yr[j] * (gr[j] - dot);
            }
        });
        return gx;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot = (0..len).map(|j| y[at(j)] * gy[at(j)]).sum::<T>();
            for j in 0..len {
                gx[at(j)] = y[at(j)] * (gy[at(j)] - dot);
            }
        }
    }
    gx
}

/// Rotates interleaved channel pairs of `x` (`[..., n, d]`) by the angles whose
/// cos/sin tables are `[n, d/2]`. `inverse` rotates by the negated angles.
pub fn rotary<T: Element>(x: &[T], n: usize, d: usize, cos: &[T], sin: &[T], inverse: bool) -> Vec<T> {
    let half = d / 2;
    let mut out = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut out, d, |r, o| {
        let p = r % n;
        let xr = &x[r * d..(r + 1) * d];
        for i in 0..half {
            let c = cos[p * half + i];
            let s = if inverse { -sin[p * half + i] } else { sin[p * half + i] };
            let (a, b) = (xr[2 * i], xr[2 * i + 1]);
            o[2 * i] = a * c - b * s;
            o[2 * i + 1] = a * s + b * c;
        }
    });
    out
}
