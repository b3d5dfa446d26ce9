//! Classification losses. Multiclass heads use softmax cross-entropy, binary
//! heads use sigmoid cross-entropy. Targets are optional so partially labelled
//! batches can be masked; the mean is over labelled rows only.

use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

use super::activation::{sigmoid_scalar, softmax};

fn check_targets(targets: &[Option<usize>], rows: usize, classes: usize) -> Result<usize> {
    if targets.len() != rows {
        return Err(TensorError::ShapeMismatch {
            op: "loss targets",
            expected: vec![rows],
            got: vec![targets.len()],
        });
    }
    let mut labelled = 0;
    for &t in targets.iter().flatten() {
        if t >= classes {
            return Err(TensorError::TargetOutOfRange { index: t, classes });
        }
        labelled += 1;
    }
    Ok(labelled)
}

/// Mean negative log-likelihood of the target class under `probs: [N, K]`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<T> {
    probs.expect_ndim("cross_entropy", 2)?;
    let classes = probs.dim(1);
    let wrapped: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
    let m = check_targets(&wrapped, probs.dim(0), classes)?;
    let mut total = T::zero();
    for (i, &t) in targets.iter().enumerate() {
        total -= probs.row(i)[t].max(T::min_positive_value()).ln();
    }
    Ok(total / T::from_usize_lossy(m.max(1)))
}

/// Fused softmax + cross-entropy. Returns the mean loss and `(p - onehot) / m`
/// for labelled rows (zero rows for unlabelled ones).
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[Option<usize>],
) -> Result<(T, Tensor<T>)> {
    let probs = softmax(logits)?;
    let classes = logits.dim(1);
    let m = check_targets(targets, logits.dim(0), classes)?;
    let mut grad = Tensor::zeros(logits.shape());
    if m == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_m = T::one() / T::from_usize_lossy(m);
    let mut total = T::zero();
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let p = probs.row(i);
        total -= p[t].max(T::min_positive_value()).ln();
        let g = grad.row_mut(i);
        for (k, (gv, &pv)) in g.iter_mut().zip(p).enumerate() {
            let y = if k == t { T::one() } else { T::zero() };
            *gv = (pv - y) * inv_m;
        }
    }
    Ok((total * inv_m, grad))
}

/// Mean binary cross-entropy of probabilities `[N, 1]` against `{0, 1}` targets.
pub fn binary_cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let wrapped: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
    let m = check_targets(&wrapped, probs.len(), 2)?;
    let eps = T::min_positive_value();
    let mut total = T::zero();
    for (&p, &t) in probs.data().iter().zip(targets) {
        total -= if t == 1 { p.max(eps).ln() } else { (T::one() - p).max(eps).ln() };
    }
    Ok(total / T::from_usize_lossy(m.max(1)))
}

/// Sigmoid cross-entropy on logits `[N, 1]`, computed as `softplus(z) - y·z`.
pub fn binary_cross_entropy_with_logits<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[Option<usize>],
) -> Result<(T, Tensor<T>)> {
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(TensorError::NonFinite {
            what: "binary_cross_entropy_with_logits input".into(),
        });
    }
    let m = check_targets(targets, logits.len(), 2)?;
    let mut grad = Tensor::zeros(logits.shape());
    if m == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_m = T::one() / T::from_usize_lossy(m);
    let mut total = T::zero();
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let z = logits.data()[i];
        let y = if t == 1 { T::one() } else { T::zero() };
        // softplus(z) = max(z, 0) + ln(1 + e^{-|z|})
        let softplus = z.max(T::zero()) + (-z.abs()).exp().ln_1p();
        total += softplus - y * z;
        grad.data_mut()[i] = (sigmoid_scalar(z) - y) * inv_m;
    }
    Ok((total * inv_m, grad))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn certain_true_class_has_zero_loss() {
        let p = Tensor::<f64>::from_f64(&[2, 3], &[1., 0., 0., 0., 0., 1.]).unwrap();
        assert_eq!(cross_entropy(&p, &[0, 2]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_probs_give_ln_k() {
        let p = Tensor::<f64>::full(&[4, 5], 0.2);
        let l = cross_entropy(&p, &[0, 1, 4, 3]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!((l - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn zero_logits_gradient_by_hand() {
        let z = Tensor::<f64>::zeros(&[1, 2]);
        let (l, g) = softmax_cross_entropy(&z, &[Some(0)]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn gradient_is_divided_by_labelled_count() {
        let z = Tensor::<f64>::zeros(&[3, 2]);
        let (_, g) = softmax_cross_entropy(&z, &[Some(1), None, Some(0)]).unwrap();
        assert_eq!(g.data(), &[0.25, -0.25, 0.0, 0.0, -0.25, 0.25]);
    }

    #[test]
    fn target_out_of_range() {
        let z = Tensor::<f64>::zeros(&[1, 3]);
        assert_eq!(
            softmax_cross_entropy(&z, &[Some(3)]).unwrap_err(),
            TensorError::TargetOutOfRange { index: 3, classes: 3 }
        );
        assert!(binary_cross_entropy_with_logits(&Tensor::<f64>::zeros(&[1, 1]), &[Some(2)]).is_err());
    }

    #[test]
    fn binary_logits_match_probability_form() {
        let z = Tensor::<f64>::from_f64(&[3, 1], &[-2.0, 0.3, 4.0]).unwrap();
        let targets = [0usize, 1, 1];
        let (l, g) = binary_cross_entropy_with_logits(&z, &targets.map(Some)).unwrap();
        let p = z.map(sigmoid_scalar);
        let direct = binary_cross_entropy(&p, &targets).unwrap();
        assert!((l - direct).abs() < 1e-12);
        for i in 0..3 {
            let want = (p.data()[i] - targets[i] as f64) / 3.0;
            assert!((g.data()[i] - want).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn cross_entropy_nonnegative_and_zero_only_on_one_hot(
            logits in proptest::collection::vec(-10.0f64..10.0, 4),
            t in 0usize..4,
        ) {
            let z = Tensor::new(vec![1, 4], logits).unwrap();
            let (l, _) = softmax_cross_entropy(&z, &[Some(t)]).unwrap();
            prop_assert!(l > 0.0);
            let mut onehot = vec![0.0; 4];
            onehot[t] = 1.0;
            let p = Tensor::new(vec![1, 4], onehot).unwrap();
            prop_assert_eq!(cross_entropy(&p, &[t]).unwrap(), 0.0);
        }
    }
}
