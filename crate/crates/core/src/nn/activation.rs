use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = relu(x);
        self.cache = Some(y.clone());
        y
    }

    /// Subgradient 0 at the kink.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.as_ref().ok_or(TensorError::MissingCache("relu"))?;
        grad_out.expect_shape("relu backward", y.shape())?;
        let mut g = grad_out.clone();
        for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
            if yv <= T::zero() {
                *gv = T::zero();
            }
        }
        Ok(g)
    }

    /// Output of the last cached forward pass.
    pub fn activation(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn reject_nan<T: Scalar>(x: &Tensor<T>, op: &str) -> Result<()> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(TensorError::NonFinite {
            what: format!("{op} input"),
        });
    }
    Ok(())
}

/// Row-wise softmax over `[N, K]` with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_ndim("softmax", 2)?;
    reject_nan(logits, "softmax")?;
    let mut out = logits.clone();
    for i in 0..logits.dim(0) {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    reject_nan(logits, "sigmoid")?;
    Ok(logits.map(sigmoid_scalar))
}
