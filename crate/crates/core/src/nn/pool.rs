use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

/// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_ndim("global_avg_pool", 4)?;
    let (n, c, area) = (input.dim(0), input.dim(1), input.dim(2) * input.dim(3));
    let inv = T::one() / T::from_usize_lossy(area);
    let mut out = Tensor::zeros(&[n, c]);
    for (o, plane) in out.data_mut().iter_mut().zip(input.data().chunks_exact(area)) {
        *o = plane.iter().copied().sum::<T>() * inv;
    }
    Ok(out)
}

/// Spreads each pooled gradient uniformly back over its `H×W` plane.
pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let (n, c, area) = (input_shape[0], input_shape[1], input_shape[2] * input_shape[3]);
    grad_out.expect_shape("global_avg_pool backward", &[n, c])?;
    let inv = T::one() / T::from_usize_lossy(area);
    let mut g = Tensor::zeros(input_shape);
    for (plane, &go) in g.data_mut().chunks_exact_mut(area).zip(grad_out.data()) {
        plane.fill(go * inv);
    }
    Ok(g)
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { input_shape: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = global_avg_pool(x)?;
        self.input_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or(TensorError::MissingCache("global_avg_pool"))?;
        global_avg_pool_backward(grad_out, shape)
    }
}

/// Non-overlapping `size×size` max pooling; trailing rows/columns that do not
/// fill a window are dropped. Ties go to the first element in row-major order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(size: usize) -> Self {
        Self { size, cache: None }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        input / self.size
    }

    fn pool<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        x.expect_ndim("max_pool2d", 4)?;
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let s = self.size;
        let (oh, ow) = (h / s, w / s);
        if oh == 0 || ow == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "max_pool2d: window {s} larger than input {:?}",
                x.shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = x.data();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * s * w + ox * s;
                    for dy in 0..s {
                        for dx in 0..s {
                            let idx = base + (oy * s + dy) * w + ox * s + dx;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = data[best];
                    argmax.push(best);
                    o += 1;
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.pool(x)?.0)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, argmax) = self.pool(x)?;
        self.cache = Some((x.shape().to_vec(), argmax));
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self.cache.as_ref().ok_or(TensorError::MissingCache("max_pool2d"))?;
        if grad_out.len() != argmax.len() {
            return Err(TensorError::ShapeMismatch {
                op: "max_pool2d backward",
                expected: vec![argmax.len()],
                got: grad_out.shape().to_vec(),
            });
        }
        let mut g = Tensor::zeros(shape);
        for (&idx, &go) in argmax.iter().zip(grad_out.data()) {
            g.data_mut()[idx] += go;
        }
        Ok(g)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_maps_pool_to_constant() {
        let y = global_avg_pool(&Tensor::<f64>::full(&[2, 3, 4, 5], 7.0)).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| (v - 7.0).abs() < 1e-15));
    }

    #[test]
    fn unit_spatial_maps_are_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 1, 1], |i| i as f64 - 3.5);
        assert_eq!(global_avg_pool(&x).unwrap().data(), x.data());
    }

    #[test]
    fn two_by_two_mean() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn max_pool_picks_window_maxima_and_drops_remainder() {
        let x = Tensor::<f64>::from_f64(
            &[1, 1, 3, 4],
            &[1., 5., 2., 0., 3., 4., 8., 1., 9., 9., 9., 9.],
        )
        .unwrap();
        let mut pool = MaxPool2d::new(2);
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5., 8.]);
        let g = pool.backward(&Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[1., 2.]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 0., 0., 0., 2., 0., 0., 0., 0., 0.]);
    }
}
