//! Neural primitives used by the layer graph: convolution, pooling, dense
//! layers, activations and bilinear resizing, with the backward passes the
//! graph needs.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Shape bookkeeping for a 2-D cross-correlation with zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::ShapeMismatch(format!("conv input {input:?}"))),
        };
        let (f, kc, kh, kw) = match *kernel {
            [f, kc, kh, kw] => (f, kc, kh, kw),
            _ => return Err(Error::ShapeMismatch(format!("conv kernel {kernel:?}"))),
        };
        if kc != c {
            return Err(Error::ShapeMismatch(format!(
                "kernel expects {kc} channels, input has {c}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(Self {
            in_channels: c,
            height: h,
            width: w,
            filters: f,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        })
    }

    fn padded_h(&self) -> usize {
        self.height + 2 * self.pad
    }

    fn padded_w(&self) -> usize {
        self.width + 2 * self.pad
    }

    pub fn out_h(&self) -> usize {
        (self.padded_h() - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.padded_w() - self.kernel_w) / self.stride + 1
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.filters, self.out_h(), self.out_w()]
    }

    /// Rows of the unfolded input: one per (channel, kernel row, kernel col).
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Unfolds `[C,H,W]` into a `[C·kH·kW, oH·oW]` column matrix; padding reads as zero.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let p = oh * ow;
        let mut cols = vec![0.0; self.patch_len() * p];
        let mut row = 0;
        for c in 0..self.in_channels {
            for di in 0..self.kernel_h {
                for dj in 0..self.kernel_w {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    self.for_each_tap(di, dj, |o, src| dst[o] = input[c * self.height * self.width + src]);
                    row += 1;
                }
            }
        }
        cols
    }

    /// Adds a column matrix back onto `[C,H,W]` (the adjoint of [`Self::im2col`]).
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let p = oh * ow;
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.in_channels * plane];
        let mut row = 0;
        for c in 0..self.in_channels {
            let dst = &mut out[c * plane..(c + 1) * plane];
            for di in 0..self.kernel_h {
                for dj in 0..self.kernel_w {
                    let src = &cols[row * p..(row + 1) * p];
                    self.for_each_tap(di, dj, |o, idx| dst[idx] += src[o]);
                    row += 1;
                }
            }
        }
        out
    }

    /// Visits `(output index, in-plane input index)` for every output position
    /// whose kernel tap `(di, dj)` lands inside the unpadded input.
    fn for_each_tap(&self, di: usize, dj: usize, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for i in 0..oh {
            let y = (i * self.stride + di) as isize - self.pad as isize;
            if y < 0 || y >= self.height as isize {
                continue;
            }
            let base = y as usize * self.width;
            for j in 0..ow {
                let x = (j * self.stride + dj) as isize - self.pad as isize;
                if x >= 0 && x < self.width as isize {
                    f(i * ow + j, base + x as usize);
                }
            }
        }
    }

    /// Forward cross-correlation. `kernel` is `[F,C,kH,kW]` flattened.
    pub fn forward(&self, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let p = self.out_h() * self.out_w();
        let k = self.patch_len();
        let cols = self.im2col(input);
        let mut out = vec![0.0; self.filters * p];
        for (f, &b) in bias.iter().enumerate() {
            out[f * p..(f + 1) * p].fill(b);
        }
        // SAFETY: every slice matches the dimensions and row-major strides passed.
        unsafe {
            matrixmultiply::dgemm(
                self.filters, k, p,
                1.0, kernel.as_ptr(), k as isize, 1,
                cols.as_ptr(), p as isize, 1,
                1.0, out.as_mut_ptr(), p as isize, 1,
            );
        }
        out
    }

    /// Gradient with respect to the input given the output gradient.
    pub fn backward_input(&self, grad_out: &[f64], kernel: &[f64]) -> Vec<f64> {
        let p = self.out_h() * self.out_w();
        let k = self.patch_len();
        let mut dcols = vec![0.0; k * p];
        // SAFETY: kernel is read transposed as a [K, F] view.
        unsafe {
            matrixmultiply::dgemm(
                k, self.filters, p,
                1.0, kernel.as_ptr(), 1, k as isize,
                grad_out.as_ptr(), p as isize, 1,
                0.0, dcols.as_mut_ptr(), p as isize, 1,
            );
        }
        self.col2im(&dcols)
    }

    /// Gradients with respect to kernel and bias.
    pub fn backward_params(&self, input: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.out_h() * self.out_w();
        let k = self.patch_len();
        let cols = self.im2col(input);
        let mut dk = vec![0.0; self.filters * k];
        // SAFETY: cols is read transposed as a [P, K] view.
        unsafe {
            matrixmultiply::dgemm(
                self.filters, p, k,
                1.0, grad_out.as_ptr(), p as isize, 1,
                cols.as_ptr(), 1, p as isize,
                0.0, dk.as_mut_ptr(), k as isize, 1,
            );
        }
        let db = grad_out.chunks_exact(p).map(|g| g.iter().sum()).collect();
        (dk, db)
    }
}


/// 2-D cross-correlation of `[C,H,W]` with `[F,C,kH,kW]` plus per-filter bias.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let geo = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    if bias.len() != geo.filters {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries for {} filters",
            bias.len(),
            geo.filters
        )));
    }
    Tensor::new(
        geo.out_shape().to_vec(),
        geo.forward(input.data(), kernel.data(), bias.data()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    /// Flat input index of each output's maximum (max mode only).
    pub argmax: Option<Vec<usize>>,
}

/// Windowed max or mean pooling over each channel of a `[C,H,W]` tensor.
/// Ties in max mode go to the first element in row-major window order.
pub fn pool2d(input: &Tensor, mode: PoolMode, window: usize, stride: usize) -> Result<Pooled> {
    let (c, h, w) = input.dims3()?;
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::ShapeMismatch(format!(
            "pool window {window} stride {stride} on {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = match mode {
        PoolMode::Max => Some(vec![0usize; c * oh * ow]),
        PoolMode::Avg => None,
    };
    let norm = 1.0 / (window * window) as f64;
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let o = (ch * oh + i) * ow + j;
                match mode {
                    PoolMode::Max => {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for di in 0..window {
                            for dj in 0..window {
                                let idx = (ch * h + i * stride + di) * w + j * stride + dj;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out[o] = best;
                        arg.as_mut().unwrap()[o] = best_idx;
                    }
                    PoolMode::Avg => {
                        let mut acc = 0.0;
                        for di in 0..window {
                            let row = (ch * h + i * stride + di) * w + j * stride;
                            acc += x[row..row + window].iter().sum::<f64>();
                        }
                        out[o] = acc * norm;
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![c, oh, ow], out)?,
        argmax: arg,
    })
}

/// `weights · input + bias` for `weights: [M,N]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = weights.dims2()?;
    if input.len() != n || bias.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "dense {m}x{n} with input {} and bias {}",
            input.len(),
            bias.len()
        )));
    }
    Tensor::new(vec![m], dense_raw(input.data(), weights.data(), bias.data()))
}

pub(crate) fn dense_raw(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + w[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// `weightsᵀ · grad` for `weights: [M,N]`.
pub(crate) fn dense_transpose(grad: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (r, &g) in grad.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[r * n..(r + 1) * n]) {
            *o += g * wv;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Bilinear resampling of an `[H,W]` field with half-pixel centres
/// (align-corners = false), clamping sample positions at the borders.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = input.dims2()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be non-empty".into()));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = x[r0 * w + c0] * (1.0 - fx) + x[r0 * w + c1] * fx;
            let bottom = x[r1 * w + c0] * (1.0 - fx) + x[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (c, h, w) = input.dims3().unwrap();
        let (f, _, kh, kw) = match kernel.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            _ => unreachable!(),
        };
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for fi in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.data()[fi];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let y = (i * stride + ki) as isize - pad as isize;
                                let x = (j * stride + kj) as isize - pad as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                    continue;
                                }
                                acc += input.at3(ci, y as usize, x as usize)
                                    * kernel.data()[((fi * c + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: u64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15 ^ salt);
                ((v >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        let x = Tensor::zeros(&[1, 3, 3]);
        let k = Tensor::new(vec![2, 1, 2, 2], pseudo(8, 1)).unwrap();
        let out = conv2d(&x, &k, &Tensor::zeros(&[2]), 1, 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let out = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_diagonal_kernel_hand_values() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn conv_matches_naive_for_strides_and_padding() {
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (3, 2)] {
            let x = Tensor::new(vec![3, 7, 6], pseudo(126, 3)).unwrap();
            let k = Tensor::new(vec![4, 3, 3, 2], pseudo(72, 5)).unwrap();
            let b = Tensor::new(vec![4], pseudo(4, 9)).unwrap();
            let fast = conv2d(&x, &k, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &k, &b, stride, pad);
            for (a, e) in fast.data().iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_adjoint_identity() {
        // <conv(x), g> == <x, conv_input_grad(g)> + bias term, and likewise for kernels.
        for &(stride, pad) in &[(1, 1), (2, 0)] {
            let x = Tensor::new(vec![2, 6, 5], pseudo(60, 11)).unwrap();
            let k = Tensor::new(vec![3, 2, 3, 3], pseudo(54, 13)).unwrap();
            let geo = ConvGeometry::new(x.shape(), k.shape(), stride, pad).unwrap();
            let zero_b = vec![0.0; 3];
            let y = geo.forward(x.data(), k.data(), &zero_b);
            let g = pseudo(y.len(), 17);
            let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
            let dx = geo.backward_input(&g, k.data());
            let rhs: f64 = dx.iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            let (dk, db) = geo.backward_params(x.data(), &g);
            let rhs_k: f64 = dk.iter().zip(k.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_k).abs() < 1e-10);
            let gsum: Vec<f64> = (0..3)
                .map(|f| g[f * geo.out_h() * geo.out_w()..][..geo.out_h() * geo.out_w()].iter().sum())
                .collect();
            assert_eq!(db, gsum);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(
            conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pool_examples() {
        let c = Tensor::full(&[2, 4, 4], 0.3);
        let avg = pool2d(&c, PoolMode::Avg, 2, 2).unwrap();
        assert!(avg.output.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mx = pool2d(&x, PoolMode::Max, 2, 2).unwrap();
        assert_eq!(mx.output.data(), &[4.0]);
        assert_eq!(mx.argmax.unwrap(), vec![3]);

        let ramp = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let avg = pool2d(&ramp, PoolMode::Avg, 2, 2).unwrap();
        assert_eq!(avg.output.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn dense_examples() {
        let w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[3.0, 8.0]);

        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = Tensor::new(vec![2], vec![0.3, -2.0]).unwrap();
        assert_eq!(dense(&v, &eye, &Tensor::zeros(&[2])).unwrap().data(), v.data());
        assert_eq!(
            dense(&v, &Tensor::zeros(&[2, 2]), &b).unwrap().data(),
            b.data()
        );
        assert!(dense(&v, &Tensor::zeros(&[2, 3]), &b).is_err());
    }

    #[test]
    fn activation_examples() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 3.0_f64.ln()]).unwrap();
        assert_eq!(activation(&t, Activation::Relu).data()[0], 0.0);
        let s = activation(&t, Activation::Sigmoid);
        assert_eq!(s.data()[1], 0.5);
        assert!((s.data()[2] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bilinear_examples() {
        let c = Tensor::full(&[3, 5], 0.7);
        let r = bilinear_resize(&c, 8, 2).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let one = Tensor::full(&[1, 1], 2.5);
        assert!(bilinear_resize(&one, 4, 3).unwrap().data().iter().all(|&v| v == 2.5));

        let x = Tensor::from_rows(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let r = bilinear_resize(&x, 2, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }
}
