use rand::Rng;

use crate::optim::LayerParams;
use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

use super::init::he_uniform;

/// Output extent of a strided, zero-padded cross-correlation.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        weights: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        input.expect_ndim("conv2d input", 4)?;
        weights.expect_ndim("conv2d kernel", 4)?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let (f, kc, kh, kw) = (weights.dim(0), weights.dim(1), weights.dim(2), weights.dim(3));
        if kc != c {
            return Err(TensorError::ChannelMismatch {
                input: input.shape().to_vec(),
                kernel: weights.shape().to_vec(),
            });
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(TensorError::KernelTooLarge {
                op: "conv2d",
                input: input.shape().to_vec(),
                kernel: weights.shape().to_vec(),
                padding: pad,
            });
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            oh: conv_output_dim(h, kh, stride, pad),
            ow: conv_output_dim(w, kw, stride, pad),
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_area(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample into a `[C*kH*kW, oH*oW]` column matrix.
    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        let area = self.out_area();
        for c in 0..self.c {
            let plane = &sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * area;
                    let dst = &mut cols[row..row + area];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *out = if ix < 0 || ix >= self.w as isize {
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

    /// Adjoint of `im2col`: scatters column gradients back onto one sample.
    fn col2im<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        let area = self.out_area();
        for c in 0..self.c {
            let plane = &mut sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * area;
                    let src = &cols[row..row + area];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
/// The summation order is fixed, so results are deterministic.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Zero-padded 2-D cross-correlation (no kernel flip).
///
/// `input` is `[N, C, H, W]`, `weights` is `[F, C, kH, kW]`, `bias` is `[F]`;
/// the result is `[N, F, H', W']` with `H' = (H + 2p - kH) / stride + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weights, stride, padding)?;
    bias.expect_shape("conv2d bias", &[g.f])?;
    let (k_len, area) = (g.patch_len(), g.out_area());
    let in_len = g.c * g.h * g.w;
    let mut out = Tensor::zeros(&[g.n, g.f, g.oh, g.ow]);
    let mut cols = vec![T::zero(); k_len * area];
    let w = weights.data();
    for n in 0..g.n {
        g.im2col(&input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let out_n = &mut out.data_mut()[n * g.f * area..(n + 1) * g.f * area];
        for f in 0..g.f {
            let row = &mut out_n[f * area..(f + 1) * area];
            row.fill(bias.data()[f]);
            let w_row = &w[f * k_len..(f + 1) * k_len];
            for (k, &wk) in w_row.iter().enumerate() {
                let col = &cols[k * area..(k + 1) * area];
                for (o, &x) in row.iter_mut().zip(col) {
                    *o += wk * x;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Exact gradients of [`conv2d`] given the upstream gradient and the forward input.
///
/// The input gradient is skipped when `want_input` is false (first layer).
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, weights, stride, padding)?;
    grad_out.expect_shape("conv2d_backward grad_out", &[g.n, g.f, g.oh, g.ow])?;
    let (k_len, area) = (g.patch_len(), g.out_area());
    let in_len = g.c * g.h * g.w;
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[g.f]);
    let mut gi = want_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![T::zero(); k_len * area];
    let mut gcols = vec![T::zero(); if want_input { k_len * area } else { 0 }];
    let w = weights.data();
    for n in 0..g.n {
        g.im2col(&input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let go_n = &grad_out.data()[n * g.f * area..(n + 1) * g.f * area];
        for f in 0..g.f {
            let go = &go_n[f * area..(f + 1) * area];
            gb.data_mut()[f] += go.iter().copied().sum::<T>();
            let gw_row = &mut gw.data_mut()[f * k_len..(f + 1) * k_len];
            for (k, acc) in gw_row.iter_mut().enumerate() {
                *acc += dot(go, &cols[k * area..(k + 1) * area]);
            }
        }
        if let Some(gi) = gi.as_mut() {
            gcols.fill(T::zero());
            for f in 0..g.f {
                let go = &go_n[f * area..(f + 1) * area];
                let w_row = &w[f * k_len..(f + 1) * k_len];
                for (k, &wk) in w_row.iter().enumerate() {
                    let dst = &mut gcols[k * area..(k + 1) * area];
                    for (d, &x) in dst.iter_mut().zip(go) {
                        *d += wk * x;
                    }
                }
            }
            g.col2im(&gcols, &mut gi.data_mut()[n * in_len..(n + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

/// Convolution layer with cached input for backpropagation.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub params: LayerParams<T>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = he_uniform(&[filters, in_channels, kernel, kernel], fan_in, rng);
        Self::from_params(LayerParams::new(name, w, Tensor::zeros(&[filters])), stride, padding)
    }

    pub fn from_params(params: LayerParams<T>, stride: usize, padding: usize) -> Self {
        Self {
            params,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn filters(&self) -> usize {
        self.params.weights.value.dim(0)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            input,
            &self.params.weights.value,
            &self.params.bias.value,
            self.stride,
            self.padding,
        )
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient (if requested).
    pub fn backward(&mut self, grad_out: &Tensor<T>, want_input: bool) -> Result<Option<Tensor<T>>> {
        let input = self.cache.as_ref().ok_or(TensorError::MissingCache("conv2d"))?;
        let g = conv2d_backward(
            grad_out,
            input,
            &self.params.weights.value,
            self.stride,
            self.padding,
            want_input,
        )?;
        self.params.weights.grad.add_assign(&g.weights)?;
        self.params.bias.grad.add_assign(&g.bias)?;
        Ok(g.input)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    /// Direct nested-loop evaluation of the cross-correlation definition.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        s: usize,
        p: usize,
    ) -> Tensor<f64> {
        let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (f, _, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (wd + 2 * p - kw) / s + 1;
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((ni * c + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((fi * c + ci) * kh + ki) * kw + kj;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_on_ones() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 4], |i| (i as f64).sin());
        let y = conv2d(&x, &Tensor::zeros(&[2, 3, 3, 3]), &t(&[2], &[1.5, -2.0]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 5, 4]);
        for n in 0..2 {
            for f in 0..2 {
                let v = [1.5, -2.0][f];
                let start = (n * 2 + f) * 20;
                assert!(y.data()[start..start + 20].iter().all(|&o| o == v));
            }
        }
    }

    #[test]
    fn diagonal_kernel_worked_example() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        let b = t(&[1], &[0.0]);
        let expected = conv_oracle(&x, &w, &b, 1, 0);
        assert_eq!(expected.data(), &[6., 8., 12., 14.]);
        assert_eq!(conv2d(&x, &w, &b, 1, 0).unwrap(), expected);
    }

    #[test]
    fn matches_nested_loop_oracle_with_stride_and_padding() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 7, 6], |i| ((i * 37 % 11) as f64) - 5.0);
        let w = Tensor::<f64>::from_fn(&[4, 3, 3, 2], |i| ((i * 13 % 7) as f64) * 0.25 - 0.5);
        let b = t(&[4], &[0.1, -0.2, 0.3, 0.0]);
        for (s, p) in [(1, 0), (2, 1), (3, 2), (1, 1)] {
            let got = conv2d(&x, &w, &b, s, p).unwrap();
            let want = conv_oracle(&x, &w, &b, s, p);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_dims_follow_floor_formula() {
        let x = Tensor::<f64>::zeros(&[1, 1, 10, 9]);
        let y = conv2d(&x, &Tensor::zeros(&[1, 1, 3, 4]), &Tensor::zeros(&[1]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, (10 + 2 - 3) / 2 + 1, (9 + 2 - 4) / 2 + 1]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let err = conv2d(&x, &Tensor::zeros(&[2, 1, 3, 3]), &Tensor::zeros(&[2]), 1, 0).unwrap_err();
        match &err {
            TensorError::ChannelMismatch { input, kernel } => {
                assert_eq!(input, &vec![1, 3, 4, 4]);
                assert_eq!(kernel, &vec![2, 1, 3, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("[1, 3, 4, 4]"));
    }

    #[test]
    fn kernel_larger_than_padded_input_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 5, 5]), &Tensor::zeros(&[1]), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 1, 1]), &Tensor::zeros(&[1]), 0, 0).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 4, 4], |i| i as f64 * 0.1);
        let w = Tensor::<f64>::from_fn(&[3, 2, 2, 2], |i| i as f64 * 0.01);
        let g = conv2d_backward(&Tensor::zeros(&[2, 3, 3, 3]), &x, &w, 1, 0, true).unwrap();
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case_weight_gradient_is_input_times_upstream() {
        let x = t(&[1, 1, 1, 1], &[3.0]);
        let w = t(&[1, 1, 1, 1], &[-2.0]);
        let g = conv2d_backward(&t(&[1, 1, 1, 1], &[0.5]), &x, &w, 1, 0, true).unwrap();
        assert_eq!(g.weights.data(), &[1.5]);
        assert_eq!(g.bias.data(), &[0.5]);
        assert_eq!(g.input.unwrap().data(), &[-1.0]);
    }

    #[test]
    fn layer_backward_without_forward_is_an_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut layer = Conv2d::<f64>::new("c", 1, 1, 1, 1, 0, &mut rng);
        let err = layer.backward(&Tensor::zeros(&[1, 1, 2, 2]), true).unwrap_err();
        assert_eq!(err, TensorError::MissingCache("conv2d"));
    }

}
