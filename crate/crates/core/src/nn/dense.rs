use rand::Rng;

use crate::optim::LayerParams;
use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

use super::init::he_uniform;

/// Affine map `x·W + b` with `x: [N, D]`, `W: [D, K]`, `b: [K]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_ndim("dense input", 2)?;
    weights.expect_ndim("dense weights", 2)?;
    let (n, d) = (input.dim(0), input.dim(1));
    let k = weights.dim(1);
    if weights.dim(0) != d {
        return Err(TensorError::ShapeMismatch {
            op: "dense inner dimension",
            expected: vec![d, k],
            got: weights.shape().to_vec(),
        });
    }
    bias.expect_shape("dense bias", &[k])?;
    let mut out = Tensor::zeros(&[n, k]);
    let w = weights.data();
    for i in 0..n {
        let x = input.row(i);
        let y = out.row_mut(i);
        y.copy_from_slice(bias.data());
        for (di, &xv) in x.iter().enumerate() {
            for (o, &wv) in y.iter_mut().zip(&w[di * k..(di + 1) * k]) {
                *o += xv * wv;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, d) = (input.dim(0), input.dim(1));
    let k = weights.dim(1);
    grad_out.expect_shape("dense_backward grad_out", &[n, k])?;
    let mut gi = Tensor::zeros(&[n, d]);
    let mut gw = Tensor::zeros(&[d, k]);
    let mut gb = Tensor::zeros(&[k]);
    let w = weights.data();
    for i in 0..n {
        let go = grad_out.row(i);
        let x = input.row(i);
        for (b, &g) in gb.data_mut().iter_mut().zip(go) {
            *b += g;
        }
        for (di, &xv) in x.iter().enumerate() {
            let gw_row = &mut gw.data_mut()[di * k..(di + 1) * k];
            for (acc, &g) in gw_row.iter_mut().zip(go) {
                *acc += xv * g;
            }
        }
        let gx = gi.row_mut(i);
        for (di, gxv) in gx.iter_mut().enumerate() {
            let mut s = T::zero();
            for (&wv, &g) in w[di * k..(di + 1) * k].iter().zip(go) {
                s += wv * g;
            }
            *gxv = s;
        }
    }
    Ok(DenseGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub params: LayerParams<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = he_uniform(&[inputs, outputs], inputs, rng);
        Self::from_params(LayerParams::new(name, w, Tensor::zeros(&[outputs])))
    }

    pub fn from_params(params: LayerParams<T>) -> Self {
        Self { params, cache: None }
    }

    pub fn outputs(&self) -> usize {
        self.params.weights.value.dim(1)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        dense(input, &self.params.weights.value, &self.params.bias.value)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.as_ref().ok_or(TensorError::MissingCache("dense"))?;
        let g = dense_backward(grad_out, input, &self.params.weights.value)?;
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
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_weights_return_input() {
        let x = t(&[2, 3], &[1., -2., 3., 0.5, 0.0, -1.0]);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let y = dense(&Tensor::zeros(&[3, 2]), &t(&[2, 2], &[1., 2., 3., 4.]), &t(&[2], &[7., -1.])).unwrap();
        assert_eq!(y.data(), &[7., -1., 7., -1., 7., -1.]);
    }

    #[test]
    fn worked_example() {
        let y = dense(&t(&[1, 2], &[1., 2.]), &t(&[2, 2], &[1., 0., 0., 1.]), &t(&[2], &[1., 1.])).unwrap();
        assert_eq!(y.data(), &[2., 3.]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let err = dense(&Tensor::<f64>::zeros(&[1, 3]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }
}
