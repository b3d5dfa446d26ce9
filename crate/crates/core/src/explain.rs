//! Class-activation heatmaps from the last convolutional block, and overlays
//! on the input image.
//!
//! Grad-CAM: with `A` the last block's post-ReLU activation `[C, H', W']` and
//! `z` the target class logit, channel weights are `w_c = mean(∂z/∂A_c)` and
//! the map is `ReLU(Σ_c w_c·A_c)`, scaled to max 1. An all-zero map stays zero.
//!
//! Overlay color ramp: value `v` maps to RGB `(v, 0, 1 − v)` (blue to red),
//! blended as `out = img·(1 − αv) + αv·ramp(v)` with `α = 0.4`.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::augment::resize_bilinear;
use crate::error::{Error, IoContext, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::{argmax, HeadKind, MultiTaskModel, Task};

pub const OVERLAY_ALPHA: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamMethod {
    /// Gradient-weighted channels.
    #[default]
    GradCam,
    /// Head dense weights on the pooled features; needs a network ending in
    /// global average pooling and a dense head, which every model here does.
    Cam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[H', W']`, values in `[0, 1]`.
    pub grid: Tensor<f64>,
    pub task: Task,
    pub class: usize,
    pub method: CamMethod,
}

impl Heatmap {
    /// Bilinear upsampling to `[height, width]`, clamped to `[0, 1]`.
    pub fn upsample(&self, size: [usize; 2]) -> Result<Tensor<f64>> {
        let [h, w] = [self.grid.dim(0), self.grid.dim(1)];
        let img = self.grid.clone().reshape(&[1, h, w])?;
        let up = resize_bilinear(&img, size)?;
        Ok(up.map(|v| v.clamp(0.0, 1.0)).reshape(&size)?)
    }
}

/// `ReLU(Σ_c weights[c]·activations[c])` over `[C, H, W]` activations,
/// normalized to max 1 (a map with no positive value is all zeros).
pub fn combine_channels(activations: &Tensor<f64>, weights: &[f64]) -> Result<Tensor<f64>> {
    activations.expect_ndim("combine_channels", 3)?;
    let (c, h, w) = (activations.dim(0), activations.dim(1), activations.dim(2));
    if weights.len() != c {
        return Err(Error::Invalid(format!("{} channel weights for {c} channels", weights.len())));
    }
    let a = activations.data();
    let mut map = vec![0.0; h * w];
    for (ch, &wc) in weights.iter().enumerate() {
        for (m, &v) in map.iter_mut().zip(&a[ch * h * w..(ch + 1) * h * w]) {
            *m += wc * v;
        }
    }
    let max = map.iter().fold(0.0f64, |m, &v| m.max(v));
    for v in &mut map {
        *v = if max > 0.0 { v.max(0.0) / max } else { 0.0 };
    }
    Ok(Tensor::new(vec![h, w], map)?)
}

/// Column of the head's dense weights for the target class's logit. Binary
/// heads have one logit `z`; class `yes` uses `z`, class `no` uses `−z`.
fn logit_direction<T: Scalar>(model: &MultiTaskModel<T>, task: Task, class: usize) -> Result<Vec<T>> {
    let head = model.head(task).ok_or_else(|| Error::UnknownTask(task.to_string()))?;
    let classes = model.schema.class_count(task);
    if class >= classes {
        return Err(Error::LabelOutsideSchema {
            task: task.to_string(),
            label: format!("class index {class} of {classes}"),
        });
    }
    let w = &head.dense.params.weights.value;
    let (inputs, outputs) = (w.dim(0), w.dim(1));
    let (col, sign) = match head.kind {
        HeadKind::Softmax(_) => (class, T::one()),
        HeadKind::Sigmoid => (0, if class == 1 { T::one() } else { -T::one() }),
    };
    Ok((0..inputs).map(|i| sign * w.data()[i * outputs + col]).collect())
}

/// Heatmap for `class` of `task` on one `[C, H, W]` image; `None` targets the
/// predicted class.
pub fn class_activation_map<T: Scalar>(
    model: &MultiTaskModel<T>,
    image: &Tensor<T>,
    task: Task,
    class: Option<usize>,
    method: CamMethod,
) -> Result<Heatmap> {
    let Some(backbone) = &model.backbone else {
        return Err(Error::UnsupportedMode(
            "heatmaps need a convolutional backbone; this model takes precomputed embeddings".into(),
        ));
    };
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshape(&shape)?;
    model.check_batch(&batch)?;
    let class = match class {
        Some(c) => c,
        None => {
            let probs = model.forward(&batch)?;
            let p = probs.get(&task).ok_or_else(|| Error::UnknownTask(task.to_string()))?;
            let row: Vec<f64> = p.row(0).iter().map(|v| v.as_f64()).collect();
            match model.schema.head_kind(task) {
                HeadKind::Softmax(_) => argmax(&row),
                HeadKind::Sigmoid => argmax(&[1.0 - row[0], row[0]]),
            }
        }
    };
    let direction = logit_direction(model, task, class)?;
    let x = model.normalization.apply(&batch);
    let (_, activation) = backbone.infer_with_activation(&x)?;
    let channels = activation.dim(1);
    let weights: Vec<f64> = match method {
        CamMethod::Cam => direction.iter().map(|v| v.as_f64()).collect(),
        CamMethod::GradCam => {
            let mut bb = backbone.clone();
            bb.forward(&x)?;
            let g_emb = Tensor::new(vec![1, direction.len()], direction)?;
            let g = bb.grad_last_activation(&g_emb)?;
            let per = g.len() / channels;
            g.data().chunks_exact(per).map(|c| c.iter().map(|v| v.as_f64()).sum::<f64>() / per as f64).collect()
        }
    };
    let a = activation.cast::<f64>();
    let a = a.reshape(&[channels, activation.dim(2), activation.dim(3)])?;
    Ok(Heatmap {
        grid: combine_channels(&a, &weights)?,
        task,
        class,
        method,
    })
}

fn ramp(v: f64) -> [f64; 3] {
    [v, 0.0, 1.0 - v]
}

/// Blends the upsampled heatmap onto `image`.
pub fn overlay_image(heatmap: &Heatmap, image: &RgbImage) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    let up = heatmap.upsample([h as usize, w as usize])?;
    let mut out = RgbImage::new(w, h);
    for (x, y, px) in image.enumerate_pixels() {
        let v = up.data()[y as usize * w as usize + x as usize];
        let a = OVERLAY_ALPHA * v;
        let color = ramp(v);
        let mut o = [0u8; 3];
        for c in 0..3 {
            let base = px[c] as f64 / 255.0;
            o[c] = ((base * (1.0 - a) + a * color[c]) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        out.put_pixel(x, y, Rgb(o));
    }
    Ok(out)
}

/// Writes the overlay as PNG, or as binary PPM when the extension is `.ppm`.
pub fn overlay(heatmap: &Heatmap, image: &RgbImage, path: &Path) -> Result<()> {
    let out = overlay_image(heatmap, image)?;
    write_rgb(&out, path)
}

pub fn write_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let mut f = std::fs::File::create(path).at(path)?;
        let (w, h) = image.dimensions();
        write!(f, "P6\n{w} {h}\n255\n").at(path)?;
        f.write_all(image.as_raw()).at(path)?;
        Ok(())
    } else {
        let f = std::fs::File::create(path).at(path)?;
        let encoder = image::codecs::png::PngEncoder::new_with_quality(
            std::io::BufWriter::new(f),
            image::codecs::png::CompressionType::Default,
            image::codecs::png::FilterType::Adaptive,
        );
        image.write_with_encoder(encoder)?;
        Ok(())
    }
}

/// Share of the heatmap's total mass inside `[x0, x1) × [y0, y1)` on a map
/// upsampled to `size`. Returns `(inside, total)`.
pub fn mass_inside(map: &Tensor<f64>, x0: usize, y0: usize, x1: usize, y1: usize) -> (f64, f64) {
    let w = map.dim(1);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (i, &v) in map.data().iter().enumerate() {
        let (y, x) = (i / w, i % w);
        total += v;
        if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
            inside += v;
        }
    }
    (inside, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::{BackboneConfig, BlockSpec, LabelSchema};

    fn toy_model() -> MultiTaskModel<f64> {
        let config = BackboneConfig {
            input_size: [8, 8],
            blocks: vec![BlockSpec::new(4), BlockSpec::new(6)],
            embedding_dim: 6,
            ..BackboneConfig::desk()
        };
        MultiTaskModel::build(&LabelSchema::default(), &config, &[Task::UlcerType, Task::JointNecrosisExposed], 5).unwrap()
    }

    fn toy_image() -> Tensor<f64> {
        Tensor::from_fn(&[3, 8, 8], |i| ((i * 37) % 17) as f64 / 17.0)
    }

    #[test]
    fn hand_toy_example() {
        let a = Tensor::from_f64(&[2, 2, 2], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let map = combine_channels(&a, &[1.0, -1.0]).unwrap();
        assert_eq!(map.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let a = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
        let map = combine_channels(&a, &[0.0, 0.0]).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_activations_give_flat_map() {
        let a = Tensor::from_fn(&[2, 3, 3], |i| if i < 9 { 2.0 } else { 0.5 });
        let map = combine_channels(&a, &[1.0, 3.0]).unwrap();
        assert!(map.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grid_matches_last_conv_and_range() {
        let m = toy_model();
        let h = class_activation_map(&m, &toy_image(), Task::UlcerType, None, CamMethod::GradCam).unwrap();
        assert_eq!(h.grid.shape(), &[4, 4]);
        assert!(h.grid.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn grad_cam_agrees_with_cam() {
        let m = toy_model();
        for (task, class) in [(Task::UlcerType, 2), (Task::JointNecrosisExposed, 0), (Task::JointNecrosisExposed, 1)] {
            let g = class_activation_map(&m, &toy_image(), task, Some(class), CamMethod::GradCam).unwrap();
            let c = class_activation_map(&m, &toy_image(), task, Some(class), CamMethod::Cam).unwrap();
            for (a, b) in g.grid.data().iter().zip(c.grid.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_shift_leaves_map_unchanged() {
        let mut m = toy_model();
        let before = class_activation_map(&m, &toy_image(), Task::UlcerType, Some(1), CamMethod::GradCam).unwrap();
        m.head_mut(Task::UlcerType).unwrap().dense.params.bias.value.data_mut()[1] += 5.0;
        let after = class_activation_map(&m, &toy_image(), Task::UlcerType, Some(1), CamMethod::GradCam).unwrap();
        assert_eq!(before.grid, after.grid);
    }

    #[test]
    fn zero_map_overlay_is_identity() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 40) as u8, (y * 70) as u8, 200]));
        let h = Heatmap {
            grid: Tensor::zeros(&[2, 2]),
            task: Task::UlcerType,
            class: 0,
            method: CamMethod::GradCam,
        };
        let out = overlay_image(&h, &img).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn precomputed_mode_unsupported() {
        let m = MultiTaskModel::<f64>::build(&LabelSchema::default(), &BackboneConfig::precomputed(4), &[Task::UlcerType], 0).unwrap();
        let e = class_activation_map(&m, &Tensor::zeros(&[4]), Task::UlcerType, None, CamMethod::GradCam);
        assert!(matches!(e, Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn bad_class_rejected() {
        let m = toy_model();
        let e = class_activation_map(&m, &toy_image(), Task::UlcerType, Some(9), CamMethod::GradCam);
        assert!(matches!(e, Err(Error::LabelOutsideSchema { .. })));
    }
}
