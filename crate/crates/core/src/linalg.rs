//! Dense row-major kernels used by the denoiser and codec.
//!
//! Weights are stored `[out, in]`. Every reduction runs in a fixed order so
//! results are bit-stable across runs.

use alloc::vec;
use alloc::vec::Vec;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `x[rows, inp] · wᵀ + b` with `w: [out, inp]`.
pub(crate) fn linear(x: &[f64], rows: usize, inp: usize, w: &[f64], out: usize, b: Option<&[f64]>) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * inp);
    debug_assert_eq!(w.len(), out * inp);
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let yr = &mut y[r * out..(r + 1) * out];
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(xr, &w[o * inp..(o + 1) * inp]);
            if let Some(b) = b {
                *yo += b[o];
            }
        }
    }
    y
}

/// `a[rows, k] · b[k, m]`.
pub(crate) fn matmul(a: &[f64], rows: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * m];
    for r in 0..rows {
        let yr = &mut y[r * m..(r + 1) * m];
        for j in 0..k {
            axpy(a[r * k + j], &b[j * m..(j + 1) * m], yr);
        }
    }
    y
}

/// `gw[o, i] += Σ_r dy[r, o] · x[r, i]`.
pub(crate) fn acc_weight_grad(gw: &mut [f64], dy: &[f64], rows: usize, out: usize, x: &[f64], inp: usize) {
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dy[r * out + o];
            if g != 0.0 {
                axpy(g, xr, &mut gw[o * inp..(o + 1) * inp]);
            }
        }
    }
}

/// `dx[r, i] += Σ_o dy[r, o] · w[o, i]`.
pub(crate) fn acc_input_grad(dx: &mut [f64], dy: &[f64], rows: usize, out: usize, w: &[f64], inp: usize) {
    for r in 0..rows {
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dy[r * out + o];
            if g != 0.0 {
                axpy(g, &w[o * inp..(o + 1) * inp], dxr);
            }
        }
    }
}

/// `gb[o] += Σ_r dy[r, o]`.
pub(crate) fn acc_col_sum(gb: &mut [f64], dy: &[f64], rows: usize, out: usize) {
    for r in 0..rows {
        for (g, d) in gb.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *g += d;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows(x: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_naive() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [1.0, 0.0, -1.0, 0.5, 0.5, 0.5];
        let y = linear(&x, 2, 3, &w, 2, Some(&[1.0, 0.0]));
        assert_eq!(y, vec![-1.0, 3.0, -1.0, 7.5]);
    }

    #[test]
    fn dot_handles_tail() {
        let a: Vec<f64> = (0..7).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), 91.0);
    }

    #[test]
    fn silu_grad_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
