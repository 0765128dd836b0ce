//! Dense parameter tensors and the two layer types the model is built from.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn gaussian(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..shape.iter().product())
            .map(|_| T::from_f64_lossy(normal.sample(rng)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Affine map `y = W x + b`, `W` stored row-major as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// Weights ~ N(0, gain / fan_in), zero bias.
    pub fn init(out_dim: usize, in_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Tensor::gaussian(&[out_dim, in_dim], (gain / in_dim as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let n_in = self.in_dim();
        debug_assert_eq!(x.len(), n_in);
        self.weight
            .data
            .chunks_exact(n_in)
            .zip(&self.bias.data)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let n_in = self.in_dim();
        let mut dx = vec![T::zero(); n_in];
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias.data[o] = grad.bias.data[o] + g;
            let row = &self.weight.data[o * n_in..(o + 1) * n_in];
            let grow = &mut grad.weight.data[o * n_in..(o + 1) * n_in];
            for ((gw, &xv), (dxv, &w)) in grow.iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
                *gw = *gw + g * xv;
                *dxv = *dxv + g * w;
            }
        }
        dx
    }

    /// Pointwise (1×1) application over `in_dim` planes of `plane` pixels.
    pub fn forward_planes(&self, x: &[T], plane: usize) -> Vec<T> {
        let (n_out, n_in) = (self.out_dim(), self.in_dim());
        let mut y = vec![T::zero(); n_out * plane];
        for o in 0..n_out {
            let yo = &mut y[o * plane..(o + 1) * plane];
            yo.iter_mut().for_each(|v| *v = self.bias.data[o]);
            for i in 0..n_in {
                let w = self.weight.data[o * n_in + i];
                for (a, &b) in yo.iter_mut().zip(&x[i * plane..(i + 1) * plane]) {
                    *a = *a + w * b;
                }
            }
        }
        y
    }

    /// Backward of [`Linear::forward_planes`].
    pub fn backward_planes(&self, x: &[T], dy: &[T], plane: usize, grad: &mut Linear<T>) -> Vec<T> {
        let (n_out, n_in) = (self.out_dim(), self.in_dim());
        let mut dx = vec![T::zero(); n_in * plane];
        for o in 0..n_out {
            let dyo = &dy[o * plane..(o + 1) * plane];
            grad.bias.data[o] = grad.bias.data[o] + dyo.iter().copied().sum::<T>();
            for i in 0..n_in {
                let xi = &x[i * plane..(i + 1) * plane];
                let dot = dyo.iter().zip(xi).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                grad.weight.data[o * n_in + i] = grad.weight.data[o * n_in + i] + dot;
                let w = self.weight.data[o * n_in + i];
                for (d, &g) in dx[i * plane..(i + 1) * plane].iter_mut().zip(dyo) {
                    *d = *d + w * g;
                }
            }
        }
        dx
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weight layout `[out, in, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv3x3<T> {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        Conv3x3 {
            weight: Tensor::zeros(&[out_ch, in_ch, 3, 3]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    /// He initialization: weights ~ N(0, 2 / (9 · in_ch)).
    pub fn init(out_ch: usize, in_ch: usize, rng: &mut impl Rng) -> Self {
        Conv3x3 {
            weight: Tensor::gaussian(&[out_ch, in_ch, 3, 3], (2.0 / (9 * in_ch) as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }
}

/// Row/column ranges for a tap offset `d` ∈ {-1, 0, 1} on an axis of length `n`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { n - 1 } else { n };
    (lo, hi)
}

/// Dense row-major matrix product `C = A·B` (or `C += A·B`), with either
/// operand optionally read transposed. Shapes are those of the logical
/// operands: `A` is m×k, `B` is k×n.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "matmul operand too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the length checks above bound every strided index, and `c`
    // is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
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

/// Unfolds `cin` zero-padded planes into a `(cin·9) × (h·w)` patch matrix.
fn im2col<T: Scalar>(input: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for i in 0..cin {
        let src = &input[i * hw..(i + 1) * hw];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = tap_range(dy, h);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = tap_range(dx, w);
                let row = &mut cols[((i * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the planes.
fn col2im<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); cin * hw];
    for i in 0..cin {
        let dst = &mut out[i * hw..(i + 1) * hw];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = tap_range(dy, h);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = tap_range(dx, w);
                let row = &cols[((i * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (a, &b) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
    out
}

/// 3×3 convolution, stride 1, zero padding 1, as a patch-matrix product.
pub fn conv3x3_forward<T: Scalar>(conv: &Conv3x3<T>, input: &[T], h: usize, w: usize) -> Vec<T> {
    let (cout, cin) = (conv.out_channels(), conv.in_channels());
    let hw = h * w;
    debug_assert_eq!(input.len(), cin * hw);
    let cols = im2col(input, cin, h, w);
    let mut out = vec![T::zero(); cout * hw];
    for (o, plane) in out.chunks_mut(hw).enumerate() {
        plane.fill(conv.bias.data[o]);
    }
    matmul(cout, cin * 9, hw, &conv.weight.data, false, &cols, false, &mut out, true);
    out
}

/// Accumulates weight/bias gradients; returns `dL/dinput` when requested.
pub fn conv3x3_backward<T: Scalar>(
    conv: &Conv3x3<T>,
    input: &[T],
    d_out: &[T],
    h: usize,
    w: usize,
    grad: &mut Conv3x3<T>,
    want_input_grad: bool,
) -> Option<Vec<T>> {
    let (cout, cin) = (conv.out_channels(), conv.in_channels());
    let hw = h * w;
    for (o, g) in d_out.chunks(hw).enumerate() {
        grad.bias.data[o] = grad.bias.data[o] + g.iter().copied().sum::<T>();
    }
    let cols = im2col(input, cin, h, w);
    matmul(cout, hw, cin * 9, d_out, false, &cols, true, &mut grad.weight.data, true);
    want_input_grad.then(|| {
        let mut d_cols = vec![T::zero(); cin * 9 * hw];
        matmul(cin * 9, cout, hw, &conv.weight.data, true, d_out, false, &mut d_cols, false);
        col2im(&d_cols, cin, h, w)
    })
}

/// 2×2 average pooling with stride 2 over `c` planes of `h × w`.
pub fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let (r0, r1) = (&p[2 * y * w..2 * y * w + w], &p[(2 * y + 1) * w..(2 * y + 1) * w + w]);
            for xx in 0..ow {
                out.push((r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]) * quarter);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(d_out: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut d = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let g = d_out[(ch * oh + y) * ow + xx] * quarter;
                let base = ch * h * w;
                d[base + 2 * y * w + 2 * xx] = g;
                d[base + 2 * y * w + 2 * xx + 1] = g;
                d[base + (2 * y + 1) * w + 2 * xx] = g;
                d[base + (2 * y + 1) * w + 2 * xx + 1] = g;
            }
        }
    }
    d
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Multiplies `grad` by the rectifier derivative evaluated at `pre`.
pub fn relu_backward_inplace<T: Scalar>(pre: &[T], grad: &mut [T]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Per-channel spatial mean.
pub fn channel_means<T: Scalar>(x: &[T], c: usize, plane: usize) -> Vec<T> {
    let inv = T::one() / T::of_usize(plane);
    (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>() * inv)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(conv: &Conv3x3<f64>, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (co, ci) = (conv.out_channels(), conv.in_channels());
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut s = conv.bias.data[o];
                    for i in 0..ci {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight.data[((o * ci + i) * 3 + ky as usize) * 3 + kx as usize];
                                s += wv * x[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = crate::seed::rng_for(3, &[1]);
        let mut conv = Conv3x3::<f64>::init(3, 2, &mut rng);
        conv.bias = Tensor::gaussian(&[3], 1.0, &mut rng);
        let x = Tensor::<f64>::gaussian(&[2, 5, 7], 1.0, &mut rng).data;
        let fast = conv3x3_forward(&conv, &x, 5, 7);
        let slow = naive_conv(&conv, &x, 5, 7);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_adjoint() {
        // <conv(x), g> linear in x: d/dx equals backward(g)
        let mut rng = crate::seed::rng_for(4, &[1]);
        let conv = Conv3x3::<f64>::init(2, 3, &mut rng);
        let (h, w) = (4, 6);
        let x = Tensor::<f64>::gaussian(&[3, h, w], 1.0, &mut rng).data;
        let g = Tensor::<f64>::gaussian(&[2, h, w], 1.0, &mut rng).data;
        let mut grad = Conv3x3::zeros(2, 3);
        let dx = conv3x3_backward(&conv, &x, &g, h, w, &mut grad, true).unwrap();
        let eps = 1e-6;
        for k in [0, 5, 17, 40, 71] {
            let mut xp = x.clone();
            xp[k] += eps;
            let mut xm = x.clone();
            xm[k] -= eps;
            let f = |v: &[f64]| conv3x3_forward(&conv, v, h, w).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((fd - dx[k]).abs() < 1e-7, "{fd} vs {}", dx[k]);
        }
    }

    #[test]
    fn pool_and_means() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        assert_eq!(avg_pool2(&x, 1, 4, 4), vec![2.5, 4.5, 10.5, 12.5]);
        assert_eq!(channel_means(&x, 2, 8), vec![3.5, 11.5]);
        let d = avg_pool2_backward(&[4.0, 0.0, 0.0, 0.0], 1, 4, 4);
        assert_eq!(&d[..2], &[1.0, 1.0]);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn linear_planes_matches_pointwise() {
        let mut rng = crate::seed::rng_for(5, &[1]);
        let lin = Linear::<f64>::init(2, 3, 1.0, &mut rng);
        let x = Tensor::<f64>::gaussian(&[3, 4], 1.0, &mut rng).data;
        let y = lin.forward_planes(&x, 4);
        for s in 0..4 {
            let col: Vec<f64> = (0..3).map(|c| x[c * 4 + s]).collect();
            let r = lin.forward(&col);
            assert!((r[0] - y[s]).abs() < 1e-14 && (r[1] - y[4 + s]).abs() < 1e-14);
        }
    }
}
