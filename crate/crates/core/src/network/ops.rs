//! Layer kernels on flat channel-major buffers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point type a network computes in.
pub trait Real:
    Float + Debug + Default + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    const BITS: u32;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for row/column-strided matrices:
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $bits:expr, $gemm:path) => {
        impl Real for $t {
            const BITS: u32 = $bits;

            fn of(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                check_extent(a.0.len(), m, k, a.1, a.2);
                check_extent(b.0.len(), k, n, b.1, b.2);
                check_extent(c.0.len(), m, n, c.1, c.2);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m, k, n, alpha, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta,
                        c.0.as_mut_ptr(), c.1, c.2,
                    );
                }
            }
        }
    };
}

impl_real!(f32, 32, matrixmultiply::sgemm);
impl_real!(f64, 64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfolds receptive fields into a `(C*K*K) x (OH*OW)` matrix.
pub fn im2col<T: Real>(input: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let n = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_height {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, input: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let n = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &mut input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_height {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[o] = W[o] . cols + b[o]`; weight is `O x (C*K*K)`.
pub fn conv_forward<T: Real>(input: &[T], g: &ConvGeom, weight: &[T], bias: &[T], out: &mut [T]) {
    let (m, kk, n) = (bias.len(), g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); kk * n];
    im2col(input, g, &mut cols);
    for (o, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[o]);
    }
    T::gemm(
        m,
        kk,
        n,
        T::one(),
        (weight, kk as isize, 1),
        (&cols, n as isize, 1),
        T::one(),
        (out, n as isize, 1),
    );
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv_backward<T: Real>(
    input: &[T],
    g: &ConvGeom,
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let (m, kk, n) = (grad_bias.len(), g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); kk * n];
    im2col(input, g, &mut cols);
    // dW (m x kk) += dOut (m x n) * cols^T (n x kk)
    T::gemm(
        m,
        n,
        kk,
        T::one(),
        (grad_out, n as isize, 1),
        (&cols, 1, n as isize),
        T::one(),
        (grad_weight, kk as isize, 1),
    );
    for (o, row) in grad_out.chunks_exact(n).enumerate() {
        grad_bias[o] += row.iter().copied().sum::<T>();
    }
    // dcols (kk x n) = W^T (kk x m) * dOut (m x n)
    let mut dcols = vec![T::zero(); kk * n];
    T::gemm(
        kk,
        m,
        n,
        T::one(),
        (weight, 1, kk as isize),
        (grad_out, n as isize, 1),
        T::zero(),
        (&mut dcols, n as isize, 1),
    );
    let mut grad_in = vec![T::zero(); g.in_channels * g.height * g.width];
    col2im(&dcols, g, &mut grad_in);
    grad_in
}

/// Max pooling without padding; `argmax` records the flat input index
/// chosen for each output (first maximum wins).
pub fn maxpool_forward<T: Real>(
    input: &[T],
    [c, h, w]: [usize; 3],
    kernel: usize,
    stride: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = T::neg_infinity();
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if best == usize::MAX || input[idx] > best_v {
                            best = idx;
                            best_v = input[idx];
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best_v;
                argmax[o] = best as u32;
            }
        }
    }
}

pub fn maxpool_backward<T: Real>(grad_out: &[T], argmax: &[u32], grad_in: &mut [T]) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i as usize] += g;
    }
}

/// Across-channel local response normalization:
/// `b_c = a_c / (k + alpha * sum_{|c'-c| <= size/2} a_{c'}^2)^beta`.
///
/// Returns the per-element denominator base (`k + alpha * sum`).
pub fn lrn_forward<T: Real>(
    input: &[T],
    [c, h, w]: [usize; 3],
    size: usize,
    k: T,
    alpha: T,
    beta: T,
    out: &mut [T],
) -> Vec<T> {
    let plane = h * w;
    let half = size / 2;
    let mut scale = vec![k; input.len()];
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        let dst = &mut scale[ch * plane..(ch + 1) * plane];
        for src_ch in lo..=hi {
            let src = &input[src_ch * plane..(src_ch + 1) * plane];
            for (s, &a) in dst.iter_mut().zip(src) {
                *s += alpha * a * a;
            }
        }
    }
    for ((o, &a), &s) in out.iter_mut().zip(input).zip(&scale) {
        *o = a * s.powf(-beta);
    }
    scale
}

pub fn lrn_backward<T: Real>(
    input: &[T],
    scale: &[T],
    grad_out: &[T],
    [c, h, w]: [usize; 3],
    size: usize,
    alpha: T,
    beta: T,
) -> Vec<T> {
    let plane = h * w;
    let half = size / 2;
    // t_i = g_i * a_i * s_i^(-beta-1)
    let t: Vec<T> = grad_out
        .iter()
        .zip(input)
        .zip(scale)
        .map(|((&g, &a), &s)| g * a * s.powf(-beta - T::one()))
        .collect();
    let two_ab = T::of(2.0) * alpha * beta;
    let mut grad_in: Vec<T> = grad_out
        .iter()
        .zip(scale)
        .map(|(&g, &s)| g * s.powf(-beta))
        .collect();
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        for p in 0..plane {
            let mut acc = T::zero();
            for src_ch in lo..=hi {
                acc += t[src_ch * plane + p];
            }
            let i = ch * plane + p;
            grad_in[i] -= two_ab * input[i] * acc;
        }
    }
    grad_in
}

/// `out = W x + b`, `W` is `units x inputs`.
pub fn fc_forward<T: Real>(input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let (m, k) = (bias.len(), input.len());
    out.copy_from_slice(bias);
    T::gemm(
        m,
        k,
        1,
        T::one(),
        (weight, k as isize, 1),
        (input, 1, 1),
        T::one(),
        (out, 1, 1),
    );
}

pub fn fc_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let (m, k) = (grad_out.len(), input.len());
    // dW += g x^T
    T::gemm(
        m,
        1,
        k,
        T::one(),
        (grad_out, 1, 1),
        (input, 1, 1),
        T::one(),
        (grad_weight, k as isize, 1),
    );
    for (b, &g) in grad_bias.iter_mut().zip(grad_out) {
        *b += g;
    }
    let mut grad_in = vec![T::zero(); k];
    T::gemm(
        k,
        m,
        1,
        T::one(),
        (weight, 1, k as isize),
        (grad_out, 1, 1),
        T::zero(),
        (&mut grad_in, 1, 1),
    );
    grad_in
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], g: &ConvGeom, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; bias.len() * g.col_cols()];
        for o in 0..bias.len() {
            for oy in 0..g.out_height {
                for ox in 0..g.out_width {
                    let mut acc = bias[o];
                    for c in 0..g.in_channels {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                let wi = ((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
                                let ii = (c * g.height + iy as usize) * g.width + ix as usize;
                                acc += weight[wi] * input[ii];
                            }
                        }
                    }
                    out[(o * g.out_height + oy) * g.out_width + ox] = acc;
                }
            }
        }
        out
    }

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + a) * 0.731).sin()).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let g = ConvGeom {
            in_channels: 3,
            height: 9,
            width: 7,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_height: 5,
            out_width: 4,
        };
        let input = seq(3 * 9 * 7, 0.0);
        let weight = seq(4 * 27, 1.0);
        let bias = seq(4, 2.0);
        let mut out = vec![0.0; 4 * 20];
        conv_forward(&input, &g, &weight, &bias, &mut out);
        let expected = naive_conv(&input, &g, &weight, &bias);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom {
            in_channels: 2,
            height: 6,
            width: 5,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_height: 3,
            out_width: 3,
        };
        let x = seq(60, 0.3);
        let y = seq(g.col_rows() * g.col_cols(), 0.9);
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pooling_routes_each_gradient_once() {
        let x = seq(2 * 7 * 7, 0.1);
        let mut out = vec![0.0; 2 * 9];
        let mut arg = vec![0u32; 18];
        maxpool_forward(&x, [2, 7, 7], 3, 2, &mut out, &mut arg);
        for (o, &i) in out.iter().zip(&arg) {
            assert_eq!(*o, x[i as usize]);
        }
        let g = seq(18, 5.0);
        let mut gi = vec![0.0; x.len()];
        maxpool_backward(&g, &arg, &mut gi);
        let s_out: f64 = g.iter().sum();
        let s_in: f64 = gi.iter().sum();
        assert!((s_out - s_in).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_normalized() {
        let p = softmax(&[1.0f64, 2.0, 3.0, -50.0, 700.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v.is_finite()));
    }

    #[test]
    fn gemm_bounds_are_checked() {
        let a = [1.0f32; 4];
        let b = [1.0f32; 4];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 2, 2, 1.0, (&a, 2, 1), (&b, 2, 1), 0.0, (&mut c, 2, 1));
        assert_eq!(c, [2.0; 4]);
        let r = std::panic::catch_unwind(|| {
            let mut c = [0.0f32; 3];
            f32::gemm(2, 2, 2, 1.0, (&a, 2, 1), (&b, 2, 1), 0.0, (&mut c, 2, 1));
        });
        assert!(r.is_err());
    }
}
