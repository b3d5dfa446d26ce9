//! Seeded, interpolation-free dihedral augmentation plus random scaling, and
//! minority-class rebalancing for stage-1 training sets. Images are `[C, H, W]`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

fn dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    img.expect_ndim("augment", 3)?;
    Ok((img.dim(0), img.dim(1), img.dim(2)))
}

/// Counterclockwise rotation by `k·90°`: `out[i][j] = in[j][W-1-i]` for `k = 1`.
pub fn rotate90k<T: Scalar>(img: &Tensor<T>, k: u8) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    let src = img.data();
    let (oh, ow) = match k {
        1 | 3 => (w, h),
        2 => (h, w),
        _ => return Err(Error::Invalid(format!("rotation k must be 1, 2 or 3, got {k}"))),
    };
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = match k {
                    1 => (j, w - 1 - i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (h - 1 - j, i),
                };
                out.push(plane[si * w + sj]);
            }
        }
    }
    Ok(Tensor::new(vec![c, oh, ow], out)?)
}

pub fn flip<T: Scalar>(img: &Tensor<T>, axis: FlipAxis) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = match axis {
                    FlipAxis::Horizontal => (i, w - 1 - j),
                    FlipAxis::Vertical => (h - 1 - i, j),
                };
                out.push(src[(ch * h + si) * w + sj]);
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], out)?)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, target: [usize; 2]) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    let [th, tw] = target;
    if th == 0 || tw == 0 {
        return Err(Error::Invalid(format!("resize target must be positive, got {th}x{tw}")));
    }
    if (th, tw) == (h, w) {
        return Ok(img.clone());
    }
    // Source coordinate and blend weight per output index along one axis.
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = axis(th, h);
    let xs = axis(tw, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| plane[y * w + x].as_f64();
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bottom = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                out.push(T::lit(top + (bottom - top) * fy));
            }
        }
    }
    Ok(Tensor::new(vec![c, th, tw], out)?)
}

/// Center crop or pad (replicating edge pixels) to `target`.
pub fn center_fit<T: Scalar>(img: &Tensor<T>, target: [usize; 2]) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    let [th, tw] = target;
    let oy = h as isize / 2 - th as isize / 2;
    let ox = w as isize / 2 - tw as isize / 2;
    let src = img.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        for i in 0..th {
            let si = (i as isize + oy).clamp(0, h as isize - 1) as usize;
            for j in 0..tw {
                let sj = (j as isize + ox).clamp(0, w as isize - 1) as usize;
                out.push(src[(ch * h + si) * w + sj]);
            }
        }
    }
    Ok(Tensor::new(vec![c, th, tw], out)?)
}

/// Zoom by `factor` about the center, keeping `target` dims.
pub fn scale_about_center<T: Scalar>(img: &Tensor<T>, factor: f64, target: [usize; 2]) -> Result<Tensor<T>> {
    let (_, h, w) = dims(img)?;
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let sw = ((w as f64 * factor).round() as usize).max(1);
    center_fit(&resize_bilinear(img, [sh, sw])?, target)
}

/// Rotation (quarter turns, counterclockwise), then optional flip, then optional scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip: Option<FlipAxis>,
    pub scale: Option<f64>,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        flip: None,
        scale: None,
    };

    pub fn apply<T: Scalar>(&self, img: &Tensor<T>, target: [usize; 2]) -> Result<Tensor<T>> {
        let mut out = match self.quarter_turns % 4 {
            0 => img.clone(),
            k => rotate90k(img, k)?,
        };
        if let Some(axis) = self.flip {
            out = flip(&out, axis)?;
        }
        match self.scale {
            Some(s) => scale_about_center(&out, s, target),
            None => resize_bilinear(&out, target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Subset of {90, 180, 270} degrees.
    pub rotations: Vec<u16>,
    pub flips: Vec<FlipAxis>,
    pub scale_range: (f64, f64),
    pub target_size: [usize; 2],
    pub rebalance: bool,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotations: vec![90, 180, 270],
            flips: vec![FlipAxis::Horizontal, FlipAxis::Vertical],
            scale_range: (0.9, 1.1),
            target_size: [32, 32],
            rebalance: true,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut e = Vec::new();
        if let Some(r) = self.rotations.iter().find(|r| ![90, 180, 270].contains(*r)) {
            e.push(format!("augment.rotations: {r} is not one of 90, 180, 270"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            e.push(format!("augment.scale_range must satisfy 0 < lo <= 1 <= hi, got ({lo}, {hi})"));
        }
        if self.target_size.contains(&0) {
            e.push("augment.target_size must be positive".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }

    /// Distinct non-identity dihedral transforms reachable from the policy's
    /// rotations and flips, in (rotation, flip) scan order.
    pub fn dihedral_grid(&self) -> Vec<Transform> {
        let probe = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64);
        let mut turns = vec![0u8];
        turns.extend(self.rotations.iter().map(|r| (r / 90) as u8));
        let mut flips = vec![None];
        flips.extend(self.flips.iter().copied().map(Some));
        let mut seen = vec![probe.clone()];
        let mut grid = Vec::new();
        for &quarter_turns in &turns {
            for &flip in &flips {
                let t = Transform {
                    quarter_turns,
                    flip,
                    scale: None,
                };
                let image = t.apply(&probe, [3, 3]).expect("probe is 3-d");
                if !seen.contains(&image) {
                    seen.push(image);
                    grid.push(t);
                }
            }
        }
        grid
    }
}

/// Independent RNG stream per `(seed, sample id, draw index)`, so results do
/// not depend on processing order.
pub fn sample_rng(seed: u64, sample_id: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((sample_id.len() as u64).to_le_bytes());
    hasher.update(sample_id.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Brings every class up to the largest class count. Class `c` with `n_c`
/// samples draws pair `j` as sample `j mod n_c` under grid transform
/// `j div n_c`, so no (sample, transform) pair repeats until the grid is
/// used up; further draws add a random scale. Samples whose class is `None`
/// are kept but not counted. Originals come first, unchanged.
pub fn rebalance<T: Scalar>(
    samples: &[LabeledSample<T>],
    class_of: impl Fn(&LabeledSample<T>) -> Option<usize>,
    policy: &AugmentPolicy,
) -> Result<Vec<LabeledSample<T>>> {
    policy.validate().map_err(Error::Config)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(c) = class_of(s) {
            by_class.entry(c).or_default().push(i);
        }
    }
    if by_class.is_empty() {
        return Err(Error::EmptySplit("rebalance input".into()));
    }
    let max = by_class.values().map(Vec::len).max().unwrap_or(0);
    let grid = policy.dihedral_grid();
    let (lo, hi) = policy.scale_range;
    let mut out = samples.to_vec();
    for members in by_class.values() {
        let n = members.len();
        for j in 0..max - n {
            let s = &samples[members[j % n]];
            let round = j / n;
            let transform = if round < grid.len() {
                grid[round]
            } else {
                let mut rng = sample_rng(policy.seed, &s.id, round as u64);
                let choice = rng.random_range(0..=grid.len());
                let base = if choice == grid.len() { Transform::IDENTITY } else { grid[choice] };
                Transform {
                    scale: Some(if lo < hi { rng.random_range(lo..=hi) } else { lo }),
                    ..base
                }
            };
            out.push(LabeledSample {
                id: format!("{}#aug{round}", s.id),
                input: transform.apply(&s.input, policy.target_size)?,
                labels: s.labels,
            });
        }
    }
    Ok(out)
}

/// Resizes every sample to `target` (no-op when dims already match).
pub fn fit_to_size<T: Scalar>(samples: &mut [LabeledSample<T>], target: [usize; 2]) -> Result<()> {
    for s in samples {
        s.input = resize_bilinear(&s.input, target)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[1, h, w], vals).unwrap()
    }

    #[test]
    fn rotate_two_by_two_counterclockwise() {
        // [[a,b],[c,d]] -> [[b,d],[a,c]]
        let r = rotate90k(&img(2, 2, &[1., 2., 3., 4.]), 1).unwrap();
        assert_eq!(r.data(), &[2., 4., 1., 3.]);
    }

    #[test]
    fn rotate_rejects_bad_k() {
        assert!(rotate90k(&img(1, 1, &[1.]), 4).is_err());
        assert!(rotate90k(&img(1, 1, &[1.]), 0).is_err());
    }

    #[test]
    fn odd_rotation_transposes_shape() {
        let r = rotate90k(&Tensor::<f64>::zeros(&[3, 2, 5]), 3).unwrap();
        assert_eq!(r.shape(), &[3, 5, 2]);
    }

    #[test]
    fn horizontal_flip_example() {
        let f = flip(&img(2, 2, &[1., 2., 3., 4.]), FlipAxis::Horizontal).unwrap();
        assert_eq!(f.data(), &[2., 1., 4., 3.]);
    }

    #[test]
    fn half_pixel_upsample() {
        let r = resize_bilinear(&img(1, 2, &[0., 1.]), [1, 4]).unwrap();
        assert_eq!(r.data(), &[0., 0.25, 0.75, 1.]);
    }

    #[test]
    fn constant_stays_constant() {
        let c = Tensor::<f64>::full(&[3, 7, 5], 0.37);
        for target in [[1, 1], [3, 9], [14, 10], [7, 5]] {
            let r = resize_bilinear(&c, target).unwrap();
            assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
        assert!(resize_bilinear(&c, [0, 3]).is_err());
    }

    #[test]
    fn identity_resize_is_bit_equal() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 6], |i| (i as f64).sin());
        assert_eq!(resize_bilinear(&x, [4, 6]).unwrap(), x);
    }

    #[test]
    fn default_grid_has_seven_elements() {
        let grid = AugmentPolicy::default().dihedral_grid();
        assert_eq!(grid.len(), 7);
        assert!(!grid.contains(&Transform::IDENTITY));
    }

    #[test]
    fn scaling_keeps_target_dims() {
        let x = Tensor::<f64>::from_fn(&[3, 10, 10], |i| i as f64);
        for s in [0.9, 1.0, 1.1, 0.5, 2.0] {
            assert_eq!(scale_about_center(&x, s, [10, 10]).unwrap().shape(), &[3, 10, 10]);
        }
        assert_eq!(scale_about_center(&x, 1.0, [10, 10]).unwrap(), x);
    }

    #[test]
    fn policy_validation() {
        let p = AugmentPolicy {
            rotations: vec![45],
            scale_range: (1.2, 1.3),
            target_size: [0, 4],
            ..AugmentPolicy::default()
        };
        assert_eq!(p.validate().unwrap_err().len(), 3);
    }
}
