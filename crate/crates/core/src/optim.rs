//! Trainable parameters and the Adadelta optimizer.
//!
//! Per element, with decay `rho` and smoothing `epsilon`:
//!
//! ```text
//! E[g²]  <- rho·E[g²]  + (1 - rho)·g²
//! delta  <- -sqrt(E[Δx²] + eps) / sqrt(E[g²] + eps) · g
//! E[Δx²] <- rho·E[Δx²] + (1 - rho)·delta²
//! x      <- x + lr·delta
//! ```
//!
//! The learning rate scales the applied step only; the update accumulator
//! tracks the unscaled `delta`. With `lr = 1` this is the original method.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errors.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            errors.push(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            errors.push(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// A parameter tensor with its gradient buffer and Adadelta accumulators.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub accum_grad_sq: Tensor<T>,
    pub accum_update_sq: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            accum_grad_sq: zeros.clone(),
            accum_update_sq: zeros,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Applies one Adadelta update using the accumulated `grad` buffer.
    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        let grad = std::mem::replace(&mut self.grad, Tensor::zeros(&[1]));
        let out = adadelta_step(self, &grad, config);
        self.grad = grad;
        out
    }

    /// Rounds every value through `f32`, the on-disk precision.
    pub fn quantize_f32(&mut self) {
        for v in self.value.data_mut() {
            *v = T::lit(v.as_f64() as f32 as f64);
        }
    }
}

/// Weights and bias of one layer.
#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub weights: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(name: &str, weights: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            weights: Param::new(format!("{name}.weights"), weights),
            bias: Param::new(format!("{name}.bias"), bias),
        }
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

/// One Adadelta update of `param` with gradient `grad`.
///
/// Fails without touching any state if `grad` has the wrong shape or holds a
/// non-finite value.
pub fn adadelta_step<T: Scalar>(param: &mut Param<T>, grad: &Tensor<T>, config: &OptimizerConfig) -> Result<()> {
    grad.expect_shape("adadelta_step", param.value.shape())?;
    if !grad.all_finite() {
        return Err(TensorError::NonFinite {
            what: format!("gradient of {}", param.name),
        });
    }
    let rho = T::lit(config.rho);
    let one_minus_rho = T::one() - rho;
    let eps = T::lit(config.epsilon);
    let lr = T::lit(config.learning_rate);
    let values = param.value.data_mut().iter_mut();
    let eg = param.accum_grad_sq.data_mut().iter_mut();
    let ed = param.accum_update_sq.data_mut().iter_mut();
    for (((x, eg), ed), &g) in values.zip(eg).zip(ed).zip(grad.data()) {
        *eg = rho * *eg + one_minus_rho * g * g;
        let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
        *ed = rho * *ed + one_minus_rho * delta * delta;
        *x += lr * delta;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(x: f64) -> Param<f64> {
        Param::new("x", Tensor::from_f64(&[1], &[x]).unwrap())
    }

    /// Independent scalar evaluation of the update recursion.
    fn oracle(x0: f64, steps: usize, grad: impl Fn(f64) -> f64, c: &OptimizerConfig) -> Vec<f64> {
        let (mut x, mut eg, mut ed) = (x0, 0.0f64, 0.0f64);
        let mut path = Vec::with_capacity(steps);
        for _ in 0..steps {
            let g = grad(x);
            eg = c.rho * eg + (1.0 - c.rho) * g * g;
            let d = -(ed + c.epsilon).sqrt() / (eg + c.epsilon).sqrt() * g;
            ed = c.rho * ed + (1.0 - c.rho) * d * d;
            x += c.learning_rate * d;
            path.push(x);
        }
        path
    }

    #[test]
    fn zero_gradient_on_fresh_state_is_identity() {
        let mut p = Param::new("w", Tensor::<f64>::from_fn(&[3, 2], |i| i as f64 - 2.5));
        let before = p.value.clone();
        adadelta_step(&mut p, &Tensor::zeros(&[3, 2]), &OptimizerConfig::default()).unwrap();
        assert_eq!(p.value, before);
        assert!(p.accum_grad_sq.data().iter().all(|&v| v == 0.0));
        assert!(p.accum_update_sq.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_by_hand() {
        let c = OptimizerConfig {
            learning_rate: 1.0,
            ..OptimizerConfig::default()
        };
        let mut p = scalar_param(0.0);
        adadelta_step(&mut p, &Tensor::from_f64(&[1], &[1.0]).unwrap(), &c).unwrap();
        assert!((p.accum_grad_sq.data()[0] - 0.05).abs() < 1e-15);
        let delta = -(1e-6f64).sqrt() / 0.050001f64.sqrt();
        assert!((p.value.data()[0] - delta).abs() < 1e-15);
        assert!((p.value.data()[0] + 0.0044721).abs() < 1e-7);
    }

    #[test]
    fn matches_scalar_recursion_on_quadratic() {
        for lr in [1.0, 0.001] {
            let c = OptimizerConfig {
                learning_rate: lr,
                ..OptimizerConfig::default()
            };
            let want = oracle(5.0, 500, |x| 2.0 * x, &c);
            let mut p = scalar_param(5.0);
            for &w in &want {
                let g = Tensor::from_f64(&[1], &[2.0 * p.value.data()[0]]).unwrap();
                adadelta_step(&mut p, &g, &c).unwrap();
                assert_eq!(p.value.data()[0], w);
            }
        }
    }

    #[test]
    fn quadratic_converges_with_unit_learning_rate() {
        let c = OptimizerConfig {
            learning_rate: 1.0,
            ..OptimizerConfig::default()
        };
        let mut p = scalar_param(5.0);
        let steps = (1..=20_000)
            .find(|_| {
                let g = Tensor::from_f64(&[1], &[2.0 * p.value.data()[0]]).unwrap();
                adadelta_step(&mut p, &g, &c).unwrap();
                p.value.data()[0].abs() < 0.5
            })
            .expect("converges within 20k steps");
        // Frozen from the scalar recursion oracle.
        assert_eq!(steps, oracle(5.0, 20_000, |x| 2.0 * x, &c).iter().position(|x| x.abs() < 0.5).unwrap() + 1);
    }

    #[test]
    fn default_learning_rate_is_far_slower_on_quadratic() {
        // The recursion needs 128_287 steps to bring |x| under 0.5 at lr = 0.001.
        let c = OptimizerConfig::default();
        let path = oracle(5.0, 130_000, |x| 2.0 * x, &c);
        assert_eq!(path.iter().position(|x| x.abs() < 0.5).map(|i| i + 1), Some(128_287));
        assert!(path[19_999].abs() > 4.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = scalar_param(1.0);
        let err = adadelta_step(&mut p, &Tensor::from_f64(&[1], &[f64::INFINITY]).unwrap(), &OptimizerConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("gradient of x"));
        assert_eq!(p.value.data()[0], 1.0);
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            rho: 1.0,
            epsilon: -1.0,
        };
        assert_eq!(bad.validate().unwrap_err().len(), 3);
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
