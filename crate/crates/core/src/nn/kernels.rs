//! Batched forward/backward kernels shared by the graph and the inference path.
//!
//! Sequence tensors are `[batch, time, channels]`, row-major. Conv weights are
//! `[width, c_in, c_out]`. Every kernel that reduces across the batch does so
//! in sample order, so results do not depend on the rayon thread count.

use rayon::prelude::*;

use super::tensor::Scalar;

#[inline]
fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Valid cross-correlation of one sequence `[time, c_in]` into `out` `[time - width + 1, c_out]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_sequence<F: Scalar>(
    x: &[F],
    time: usize,
    c_in: usize,
    weight: &[F],
    width: usize,
    c_out: usize,
    bias: &[F],
    out: &mut [F],
) {
    let t_out = time + 1 - width;
    debug_assert_eq!(out.len(), t_out * c_out);
    for t in 0..t_out {
        let row = &mut out[t * c_out..(t + 1) * c_out];
        row.copy_from_slice(bias);
        for k in 0..width {
            let xr = &x[(t + k) * c_in..(t + k + 1) * c_in];
            let wk = &weight[k * c_in * c_out..(k + 1) * c_in * c_out];
            for (ci, &xv) in xr.iter().enumerate() {
                if xv != F::zero() {
                    axpy(xv, &wk[ci * c_out..(ci + 1) * c_out], row);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward_batch<F: Scalar>(
    x: &[F],
    batch: usize,
    time: usize,
    c_in: usize,
    weight: &[F],
    width: usize,
    c_out: usize,
    bias: &[F],
) -> Vec<F> {
    let t_out = time + 1 - width;
    let mut out = vec![F::zero(); batch * t_out * c_out];
    out.par_chunks_mut(t_out * c_out)
        .zip(x.par_chunks(time * c_in))
        .for_each(|(o, xs)| conv1d_sequence(xs, time, c_in, weight, width, c_out, bias, o));
    out
}

/// Returns `(dx, dweight, dbias)` for a batched valid convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward_batch<F: Scalar>(
    x: &[F],
    batch: usize,
    time: usize,
    c_in: usize,
    weight: &[F],
    width: usize,
    c_out: usize,
    dy: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let t_out = time + 1 - width;
    let wlen = width * c_in * c_out;
    let per_sample: Vec<(Vec<F>, Vec<F>, Vec<F>)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let xs = &x[b * time * c_in..(b + 1) * time * c_in];
            let dys = &dy[b * t_out * c_out..(b + 1) * t_out * c_out];
            let mut dx = vec![F::zero(); time * c_in];
            let mut dw = vec![F::zero(); wlen];
            let mut db = vec![F::zero(); c_out];
            for t in 0..t_out {
                let g = &dys[t * c_out..(t + 1) * c_out];
                if g.iter().all(|v| *v == F::zero()) {
                    continue;
                }
                axpy(F::one(), g, &mut db);
                for k in 0..width {
                    let row = t + k;
                    for ci in 0..c_in {
                        let off = (k * c_in + ci) * c_out;
                        let wrow = &weight[off..off + c_out];
                        dx[row * c_in + ci] += dot(g, wrow);
                        let xv = xs[row * c_in + ci];
                        if xv != F::zero() {
                            axpy(xv, g, &mut dw[off..off + c_out]);
                        }
                    }
                }
            }
            (dx, dw, db)
        })
        .collect();
    let mut dx = Vec::with_capacity(batch * time * c_in);
    let mut dw = vec![F::zero(); wlen];
    let mut db = vec![F::zero(); c_out];
    for (sx, sw, sb) in per_sample {
        dx.extend_from_slice(&sx);
        axpy(F::one(), &sw, &mut dw);
        axpy(F::one(), &sb, &mut db);
    }
    (dx, dw, db)
}

/// `y = x · w + b` with `x: [rows, d_in]`, `w: [d_in, d_out]`.
pub fn dense_forward<F: Scalar>(x: &[F], rows: usize, d_in: usize, w: &[F], d_out: usize, b: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); rows * d_out];
    out.par_chunks_mut(d_out).zip(x.par_chunks(d_in)).for_each(|(o, xr)| {
        o.copy_from_slice(b);
        for (i, &xv) in xr.iter().enumerate() {
            if xv != F::zero() {
                axpy(xv, &w[i * d_out..(i + 1) * d_out], o);
            }
        }
    });
    debug_assert_eq!(out.len(), rows * d_out);
    out
}

/// Returns `(dx, dw, db)` for [`dense_forward`].
pub fn dense_backward<F: Scalar>(
    x: &[F],
    rows: usize,
    d_in: usize,
    w: &[F],
    d_out: usize,
    dy: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut dx = vec![F::zero(); rows * d_in];
    dx.par_chunks_mut(d_in).zip(dy.par_chunks(d_out)).for_each(|(dxr, g)| {
        for (i, v) in dxr.iter_mut().enumerate() {
            *v = dot(g, &w[i * d_out..(i + 1) * d_out]);
        }
    });
    let mut dw = vec![F::zero(); d_in * d_out];
    dw.par_chunks_mut(d_out).enumerate().for_each(|(i, dwr)| {
        for r in 0..rows {
            let xv = x[r * d_in + i];
            if xv != F::zero() {
                axpy(xv, &dy[r * d_out..(r + 1) * d_out], dwr);
            }
        }
    });
    let mut db = vec![F::zero(); d_out];
    for r in 0..rows {
        axpy(F::one(), &dy[r * d_out..(r + 1) * d_out], &mut db);
    }
    (dx, dw, db)
}

/// Column sums over the rows of `x: [time, channels]` whose mask entry is set.
pub fn masked_column_sum<F: Scalar>(x: &[F], channels: usize, mask: &[bool], out: &mut [F]) {
    out.iter_mut().for_each(|v| *v = F::zero());
    for (t, &keep) in mask.iter().enumerate() {
        if keep {
            axpy(F::one(), &x[t * channels..(t + 1) * channels], out);
        }
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F, eps: F) -> F {
    let s = if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    };
    s.max(eps).min(F::one() - eps)
}
