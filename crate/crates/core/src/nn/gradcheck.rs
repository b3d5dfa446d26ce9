//! Central finite-difference checks of every hand-written backward pass.
//!
//! The numeric side only ever calls forward functions, so it stays
//! independent of the backward code it audits. Relative error is
//! `|a - n| / max(|a|, |n|, 1e-3)`: relative for gradients of order one,
//! absolute (scaled by 1e3) for tiny ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Result, Tensor};

use super::{
    binary_cross_entropy_with_logits, conv2d, conv2d_backward, dense, dense_backward, global_avg_pool,
    global_avg_pool_backward, softmax_cross_entropy, MaxPool2d, Relu,
};

pub const STEP: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub probes: usize,
    pub max_rel_error: f64,
}

/// One differentiable argument: its flat values, analytic gradient and a
/// loss evaluated with this argument replaced.
struct Argument<'a> {
    values: Vec<f64>,
    analytic: Vec<f64>,
    loss: Box<dyn Fn(&[f64]) -> f64 + 'a>,
}

fn probe(args: &[Argument<'_>], probes: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    let mut slots: Vec<(usize, usize)> = args
        .iter()
        .enumerate()
        .flat_map(|(a, arg)| (0..arg.values.len()).map(move |i| (a, i)))
        .collect();
    slots.shuffle(rng);
    // Cycle if a layer has fewer components than requested probes.
    for k in 0..probes {
        let (a, i) = slots[k % slots.len()];
        let arg = &args[a];
        let numeric = central_difference(arg.loss.as_ref(), &arg.values, i, STEP);
        worst = worst.max(relative_error(arg.analytic[i], numeric));
    }
    worst
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), v.to_vec()).expect("shape preserved")
}

fn check_conv(stride: usize, pad: usize, probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random_tensor(&[1, 2, 5, 5], rng);
    let w = random_tensor(&[3, 2, 2, 2], rng);
    let b = random_tensor(&[3], rng);
    let y = conv2d(&x, &w, &b, stride, pad)?;
    let r = random_tensor(y.shape(), rng);
    let g = conv2d_backward(&r, &x, &w, stride, pad, true)?;
    let (xs, ws, bs) = (x.shape().to_vec(), w.shape().to_vec(), b.shape().to_vec());
    let args = [
        Argument {
            values: x.data().to_vec(),
            analytic: g.input.expect("requested").data().to_vec(),
            loss: Box::new(|v| weighted_sum(&conv2d(&t(&xs, v), &w, &b, stride, pad).unwrap(), &r)),
        },
        Argument {
            values: w.data().to_vec(),
            analytic: g.weights.data().to_vec(),
            loss: Box::new(|v| weighted_sum(&conv2d(&x, &t(&ws, v), &b, stride, pad).unwrap(), &r)),
        },
        Argument {
            values: b.data().to_vec(),
            analytic: g.bias.data().to_vec(),
            loss: Box::new(|v| weighted_sum(&conv2d(&x, &w, &t(&bs, v), stride, pad).unwrap(), &r)),
        },
    ];
    Ok(probe(&args, probes, rng))
}

fn check_dense(probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random_tensor(&[4, 6], rng);
    let w = random_tensor(&[6, 3], rng);
    let b = random_tensor(&[3], rng);
    let r = random_tensor(&[4, 3], rng);
    let g = dense_backward(&r, &x, &w)?;
    let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
    let args = [
        Argument {
            values: x.data().to_vec(),
            analytic: g.input.data().to_vec(),
            loss: Box::new(|v| weighted_sum(&dense(&t(&xs, v), &w, &b).unwrap(), &r)),
        },
        Argument {
            values: w.data().to_vec(),
            analytic: g.weights.data().to_vec(),
            loss: Box::new(|v| weighted_sum(&dense(&x, &t(&ws, v), &b).unwrap(), &r)),
        },
        Argument {
            values: b.data().to_vec(),
            analytic: g.bias.data().to_vec(),
            loss: Box::new(|v| weighted_sum(&dense(&x, &w, &t(&[3], v)).unwrap(), &r)),
        },
    ];
    Ok(probe(&args, probes, rng))
}

fn check_relu(probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    // Keep inputs away from the kink so ±h never crosses it.
    let x = Tensor::from_fn(&[2, 3, 4, 4], |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    });
    let r = random_tensor(x.shape(), rng);
    let mut layer = Relu::new();
    layer.forward(&x);
    let g = layer.backward(&r)?;
    let xs = x.shape().to_vec();
    let args = [Argument {
        values: x.data().to_vec(),
        analytic: g.data().to_vec(),
        loss: Box::new(|v| weighted_sum(&super::relu(&t(&xs, v)), &r)),
    }];
    Ok(probe(&args, probes, rng))
}

fn check_max_pool(probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    // Distinct values spaced 0.01 apart: no window changes its argmax under ±h.
    let shape = [2, 2, 5, 6];
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let x = Tensor::from_fn(&shape, |i| ranks[i] as f64 * 0.01 - 1.0);
    let mut pool = MaxPool2d::new(2);
    let y = pool.forward(&x)?;
    let r = random_tensor(y.shape(), rng);
    let g = pool.backward(&r)?;
    let args = [Argument {
        values: x.data().to_vec(),
        analytic: g.data().to_vec(),
        loss: Box::new(|v| weighted_sum(&MaxPool2d::new(2).infer(&t(&shape, v)).unwrap(), &r)),
    }];
    Ok(probe(&args, probes, rng))
}

fn check_global_avg_pool(probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random_tensor(&[2, 3, 4, 5], rng);
    let r = random_tensor(&[2, 3], rng);
    let g = global_avg_pool_backward(&r, x.shape())?;
    let xs = x.shape().to_vec();
    let args = [Argument {
        values: x.data().to_vec(),
        analytic: g.data().to_vec(),
        loss: Box::new(|v| weighted_sum(&global_avg_pool(&t(&xs, v)).unwrap(), &r)),
    }];
    Ok(probe(&args, probes, rng))
}

fn check_softmax_ce(probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let z = Tensor::from_fn(&[6, 5], |_| rng.random_range(-3.0..3.0));
    let targets: Vec<Option<usize>> = (0..6).map(|i| (i != 2).then(|| rng.random_range(0..5))).collect();
    let (_, g) = softmax_cross_entropy(&z, &targets)?;
    let args = [Argument {
        values: z.data().to_vec(),
        analytic: g.data().to_vec(),
        loss: Box::new(|v| softmax_cross_entropy(&t(&[6, 5], v), &targets).unwrap().0),
    }];
    Ok(probe(&args, probes, rng))
}

fn check_sigmoid_bce(probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let z = Tensor::from_fn(&[8, 1], |_| rng.random_range(-4.0..4.0));
    let targets: Vec<Option<usize>> = (0..8).map(|i| (i != 5).then(|| rng.random_range(0..2))).collect();
    let (_, g) = binary_cross_entropy_with_logits(&z, &targets)?;
    let args = [Argument {
        values: z.data().to_vec(),
        analytic: g.data().to_vec(),
        loss: Box::new(|v| binary_cross_entropy_with_logits(&t(&[8, 1], v), &targets).unwrap().0),
    }];
    Ok(probe(&args, probes, rng))
}

/// Runs `probes` finite-difference probes against every layer type.
pub fn check_all_layers(seed: u64, probes: usize) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |layer, err| out.push(LayerCheck { layer, probes, max_rel_error: err });
    push("conv2d", check_conv(1, 0, probes, &mut rng)?);
    push("conv2d(stride 2, pad 1)", check_conv(2, 1, probes, &mut rng)?);
    push("dense", check_dense(probes, &mut rng)?);
    push("relu", check_relu(probes, &mut rng)?);
    push("max_pool2d", check_max_pool(probes, &mut rng)?);
    push("global_avg_pool", check_global_avg_pool(probes, &mut rng)?);
    push("softmax_cross_entropy", check_softmax_ce(probes, &mut rng)?);
    push("sigmoid_cross_entropy", check_sigmoid_bce(probes, &mut rng)?);
    Ok(out)
}
