//! Convolution, transposed convolution, instance normalization and
//! pointwise activations, each with an explicit backward pass.
//!
//! All reductions run in a fixed order, so results are bit-reproducible.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

// ---------------------------------------------------------------- gemm

/// `c[m x n] += a[m x k] * b[k x n]`
fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m x n] += a^T * b` with `a` stored as `[k x m]`.
fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m x n] += a * b^T` with `b` stored as `[n x k]`.
fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = c[i * n + j] + dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight fixed partial sums.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

// ------------------------------------------------------------ geometry

/// Maps a `[c, h, w]` image to its `[c*k*k, oh*ow]` patch matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output extent of a convolution along one axis.
pub fn conv_out(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

impl ConvGeometry {
    pub fn new(channels: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        let oh = conv_out(h, kernel, stride, pad);
        let ow = conv_out(w, kernel, stride, pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(Self { channels, h, w, kernel, stride, pad, oh, ow }),
            _ => Err(Error::Shape(format!("{h}x{w} input too small for kernel {kernel}"))),
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.pad as isize);
        for c in 0..self.channels {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * self.kernel + kh as usize) * self.kernel + kw as usize;
                    for oy in 0..self.oh as isize {
                        let iy = oy * s + kh - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow as isize {
                            let ix = ox * s + kw - p;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let col = oy as usize * self.ow + ox as usize;
                            let img = (c * self.h + iy as usize) * self.w + ix as usize;
                            f(row * self.cols() + col, img);
                        }
                    }
                }
            }
        }
    }

    pub fn im2col<T: Real>(&self, img: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.rows() * self.cols()];
        self.for_each_tap(|ci, ii| cols[ci] = img[ii]);
        cols
    }

    pub fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        self.for_each_tap(|ci, ii| img[ii] = img[ii] + cols[ci]);
    }
}

fn gaussian<T: Real>(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("valid normal");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(dist.sample(rng))).collect()).unwrap()
}

// ---------------------------------------------------------------- conv

/// 2-D convolution, weights `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache<T> {
    geom: ConvGeometry,
    cols: Vec<Vec<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn init(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: gaussian(&[cout, cin, kernel, kernel], 0.0, INIT_STD, rng),
            bias: bias.then(|| Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.as_ref().map(Tensor::zeros_like),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_channels())));
        }
        let geom = ConvGeometry::new(c, h, w, self.kernel(), self.stride, self.pad)?;
        let co = self.out_channels();
        let (k, cols_n) = (geom.rows(), geom.cols());
        let mut y = Tensor::zeros(&[n, co, geom.oh, geom.ow]);
        let mut cache = ConvCache { geom, cols: Vec::with_capacity(n) };
        for (xi, yi) in x.data().chunks_exact(c * h * w).zip(y.data_mut().chunks_exact_mut(co * cols_n)) {
            let cols = geom.im2col(xi);
            if let Some(b) = &self.bias {
                for (row, &bv) in yi.chunks_exact_mut(cols_n).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(self.weight.data(), &cols, yi, co, k, cols_n);
            cache.cols.push(cols);
        }
        Ok((y, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, dy: &Tensor<T>, cache: &ConvCache<T>, grad: &mut Conv2d<T>) -> Tensor<T> {
        let g = cache.geom;
        let co = self.out_channels();
        let (k, cols_n) = (g.rows(), g.cols());
        let n = cache.cols.len();
        let mut dx = Tensor::zeros(&[n, g.channels, g.h, g.w]);
        let mut dcols = vec![T::zero(); k * cols_n];
        for ((dyi, cols), dxi) in dy
            .data()
            .chunks_exact(co * cols_n)
            .zip(&cache.cols)
            .zip(dx.data_mut().chunks_exact_mut(g.channels * g.h * g.w))
        {
            gemm_nt(dyi, cols, grad.weight.data_mut(), co, cols_n, k);
            if let Some(gb) = grad.bias.as_mut() {
                for (b, row) in gb.data_mut().iter_mut().zip(dyi.chunks_exact(cols_n)) {
                    *b = *b + row.iter().copied().sum::<T>();
                }
            }
            dcols.iter_mut().for_each(|v| *v = T::zero());
            gemm_tn(self.weight.data(), dyi, &mut dcols, k, co, cols_n);
            g.col2im(&dcols, dxi);
        }
        dx
    }
}

/// Transposed convolution (the adjoint of [`Conv2d`]), weights `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvTransposeCache<T> {
    geom: ConvGeometry,
    input: Tensor<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn init(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: gaussian(&[cin, cout, kernel, kernel], 0.0, INIT_STD, rng),
            bias: bias.then(|| Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.as_ref().map(Tensor::zeros_like),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTransposeCache<T>)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!("transposed conv expects {} channels, got {c}", self.in_channels())));
        }
        let (k, s, p) = (self.kernel(), self.stride, self.pad);
        let oh = ((h - 1) * s + k).checked_sub(2 * p).filter(|&v| v > 0);
        let ow = ((w - 1) * s + k).checked_sub(2 * p).filter(|&v| v > 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::Shape(format!("transposed conv output empty for {h}x{w}")));
        };
        let co = self.out_channels();
        let geom = ConvGeometry::new(co, oh, ow, k, s, p)?;
        if (geom.oh, geom.ow) != (h, w) {
            return Err(Error::Shape(format!("transposed conv geometry mismatch for {h}x{w}")));
        }
        let rows = geom.rows();
        let mut y = Tensor::zeros(&[n, co, oh, ow]);
        let mut cols = vec![T::zero(); rows * h * w];
        for (xi, yi) in x.data().chunks_exact(c * h * w).zip(y.data_mut().chunks_exact_mut(co * oh * ow)) {
            cols.iter_mut().for_each(|v| *v = T::zero());
            gemm_tn(self.weight.data(), xi, &mut cols, rows, c, h * w);
            geom.col2im(&cols, yi);
            if let Some(b) = &self.bias {
                for (plane, &bv) in yi.chunks_exact_mut(oh * ow).zip(b.data()) {
                    plane.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        Ok((y, ConvTransposeCache { geom, input: x.clone() }))
    }

    pub fn backward(&self, dy: &Tensor<T>, cache: &ConvTransposeCache<T>, grad: &mut ConvTranspose2d<T>) -> Tensor<T> {
        let g = cache.geom;
        let (n, c, h, w) = cache.input.dims4().unwrap();
        let co = self.out_channels();
        let rows = g.rows();
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for ((dyi, xi), dxi) in dy
            .data()
            .chunks_exact(co * g.h * g.w)
            .zip(cache.input.data().chunks_exact(c * h * w))
            .zip(dx.data_mut().chunks_exact_mut(c * h * w))
        {
            let dcols = g.im2col(dyi);
            gemm_nn(self.weight.data(), &dcols, dxi, c, rows, h * w);
            gemm_nt(xi, &dcols, grad.weight.data_mut(), c, h * w, rows);
            if let Some(gb) = grad.bias.as_mut() {
                for (b, plane) in gb.data_mut().iter_mut().zip(dyi.chunks_exact(g.h * g.w)) {
                    *b = *b + plane.iter().copied().sum::<T>();
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------- norm

/// Per-sample, per-channel normalization with a learned affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> InstanceNorm<T> {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        Self { gamma: gaussian(&[channels], 1.0, INIT_STD, rng), beta: Tensor::zeros(&[channels]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { gamma: self.gamma.zeros_like(), beta: self.beta.zeros_like() }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, NormCache<T>)> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.gamma.len() {
            return Err(Error::Shape(format!("norm expects {} channels, got {c}", self.gamma.len())));
        }
        let plane = h * w;
        let count = T::from_usize(plane).unwrap();
        let eps = T::lit(NORM_EPS);
        let mut xhat = x.clone();
        let mut y = x.zeros_like();
        let mut inv_std = Vec::with_capacity(x.len() / plane);
        for (i, (xp, yp)) in xhat
            .data_mut()
            .chunks_exact_mut(plane)
            .zip(y.data_mut().chunks_exact_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let mean = xp.iter().copied().sum::<T>() / count;
            let var = xp.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let is = T::one() / (var + eps).sqrt();
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for (xv, yv) in xp.iter_mut().zip(yp.iter_mut()) {
                *xv = (*xv - mean) * is;
                *yv = g * *xv + b;
            }
            inv_std.push(is);
        }
        Ok((y, NormCache { xhat, inv_std }))
    }

    pub fn backward(&self, dy: &Tensor<T>, cache: &NormCache<T>, grad: &mut InstanceNorm<T>) -> Tensor<T> {
        let (_, c, h, w) = dy.dims4().unwrap();
        let plane = h * w;
        let count = T::from_usize(plane).unwrap();
        let mut dx = dy.zeros_like();
        for (i, ((dyp, xh), dxp)) in dy
            .data()
            .chunks_exact(plane)
            .zip(cache.xhat.data().chunks_exact(plane))
            .zip(dx.data_mut().chunks_exact_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let g = self.gamma.data()[ch];
            let sum_dy = dyp.iter().copied().sum::<T>();
            let sum_dy_xh = dyp.iter().zip(xh).map(|(&d, &x)| d * x).sum::<T>();
            grad.gamma.data_mut()[ch] = grad.gamma.data()[ch] + sum_dy_xh;
            grad.beta.data_mut()[ch] = grad.beta.data()[ch] + sum_dy;
            let scale = g * cache.inv_std[i] / count;
            for ((dxv, &d), &x) in dxp.iter_mut().zip(dyp).zip(xh) {
                *dxv = scale * (count * d - sum_dy - x * sum_dy_xh);
            }
        }
        dx
    }
}

// --------------------------------------------------------- activations

pub fn leaky_relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let a = T::lit(LEAKY_SLOPE);
    x.map(|v| if v > T::zero() { v } else { a * v })
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let a = T::lit(LEAKY_SLOPE);
    let data = x.data().iter().zip(dy.data()).map(|(&v, &d)| if v > T::zero() { d } else { a * d }).collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().zip(dy.data()).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Backward of tanh given its output `y`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y.data().iter().zip(dy.data()).map(|(&v, &d)| d * (T::one() - v * v)).collect();
    Tensor::from_vec(y.shape(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // Direct seven-loop convolution, independent of im2col/gemm.
    fn conv_oracle(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let (co, k, s, p) = (conv.out_channels(), conv.kernel(), conv.stride, conv.pad);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut y = Tensor::zeros(&[n, co, oh, ow]);
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |t| t.data()[o]);
                        for i in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += conv.weight.data()[((o * c + i) * k + ky) * k + kx]
                                        * x.data()[((b * c + i) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        y.data_mut()[((b * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::init(3, 5, 4, 2, 1, true, &mut rng);
        conv.bias = Some(rand_tensor(&[5], &mut rng));
        let x = rand_tensor(&[2, 3, 8, 6], &mut rng);
        let (y, _) = conv.forward(&x).unwrap();
        let want = conv_oracle(&x, &conv);
        assert_eq!(y.shape(), &[2, 5, 4, 3]);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_the_adjoint() {
        // <conv(x), y> == <x, conv_t(y)> when both share weights
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::init(3, 4, 4, 2, 1, false, &mut rng);
        let convt = ConvTranspose2d { weight: conv.weight.clone(), bias: None, stride: 2, pad: 1 };
        let x = rand_tensor(&[1, 3, 8, 8], &mut rng);
        let y = rand_tensor(&[1, 4, 4, 4], &mut rng);
        let (cx, _) = conv.forward(&x).unwrap();
        // conv weights are [out, in, k, k]; the adjoint reads them as [in', out', k, k]
        let (ty, _) = convt.forward(&y).unwrap();
        assert_eq!(ty.shape(), &[1, 3, 8, 8]);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn instance_norm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm = InstanceNorm { gamma: Tensor::full(&[2], 1.0), beta: Tensor::zeros(&[2]) };
        let x = rand_tensor(&[2, 2, 4, 4], &mut rng).map(|v| 3.0 * v + 7.0);
        let (y, _) = norm.forward(&x).unwrap();
        for plane in y.data().chunks_exact(16) {
            let m: f64 = plane.iter().sum::<f64>() / 16.0;
            let v: f64 = plane.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_arithmetic() {
        assert_eq!(conv_out(64, 4, 2, 1), Some(32));
        assert_eq!(conv_out(8, 4, 1, 1), Some(7));
        assert_eq!(conv_out(1, 4, 1, 0), None);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..13).map(f64::from).collect();
        let b = vec![2.0; 13];
        assert_eq!(dot(&a, &b), 156.0);
    }
}
