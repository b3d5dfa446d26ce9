//! Procedural stand-in dataset: wound images with a planted patch per ulcer
//! type, clinician variables from fixed parametric families, and outcomes from
//! a logistic model over both.
//!
//! Image encoding (values in `[0, 1]` before noise):
//! - background: neutral grey plus a per-location tint;
//! - patch: ulcer-type color and texture, side length growing with stage;
//! - joint necrosis: dark square at the patch center;
//! - ligament/bone necrosis: white square at the patch's top-left corner.
//!
//! The patch (spots included) is blended over the background with weight
//! `signal_strength`, then i.i.d. Gaussian noise is added and values clamped.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use woundflow_gbm::{sigmoid, Value};

use crate::error::{Error, IoContext, Result};
use crate::pipeline::{largest_remainder, write_manifest, ClinicianSchema, Outcome, WoundRecord};
use crate::vision::{LabelSchema, Task, WoundLabels};

/// Table-1 image counts per ulcer type, used as prior shape.
pub const ULCER_COUNTS: [f64; 5] = [19773.0, 47541.0, 12238.0, 13667.0, 32492.0];

/// Location weights per ulcer type (rows: ulcer type; columns: Lower Leg,
/// Sacral, Foot, Heel, Ankle, GreatToe).
const LOCATION_GIVEN_ULCER: [[f64; 6]; 5] = [
    [0.05, 0.02, 0.45, 0.20, 0.08, 0.20],
    [0.05, 0.55, 0.05, 0.30, 0.03, 0.02],
    [0.40, 0.25, 0.15, 0.05, 0.10, 0.05],
    [0.45, 0.05, 0.25, 0.05, 0.15, 0.05],
    [0.60, 0.02, 0.05, 0.03, 0.28, 0.02],
];

/// Stage weights per ulcer type (columns: Full Thickness, Grade 2, Stage-3,
/// Stage-4, Unstageable).
const STAGE_GIVEN_ULCER: [[f64; 5]; 5] = [
    [0.30, 0.35, 0.15, 0.10, 0.10],
    [0.10, 0.20, 0.30, 0.25, 0.15],
    [0.60, 0.15, 0.10, 0.05, 0.10],
    [0.50, 0.20, 0.15, 0.05, 0.10],
    [0.55, 0.25, 0.10, 0.05, 0.05],
];

/// P(exposed) per stage.
const JOINT_GIVEN_STAGE: [f64; 5] = [0.05, 0.10, 0.25, 0.45, 0.30];
const BONE_GIVEN_STAGE: [f64; 5] = [0.03, 0.05, 0.15, 0.40, 0.25];

const GENDERS: [&str; 2] = ["F", "M"];
const EXUDATE: [&str; 4] = ["none", "low", "moderate", "heavy"];
const EXUDATE_P: [f64; 4] = [0.2, 0.4, 0.3, 0.1];
const DRESSINGS: [&str; 4] = ["foam", "alginate", "hydrocolloid", "gauze"];
const DRESSING_SCORE: [f64; 4] = [-1.0, 0.0, 0.0, 1.0];

/// Background tint per location, added to grey 0.45.
const LOCATION_TINT: [[f64; 3]; 6] = [
    [0.06, 0.0, 0.0],
    [0.0, 0.06, 0.0],
    [0.0, 0.0, 0.06],
    [0.05, 0.05, 0.0],
    [0.0, 0.05, 0.05],
    [0.05, 0.0, 0.05],
];

/// Logistic outcome model. `logit = intercept + Σ clinician[j]·score_j +
/// ulcer_type[u] + location[l] + stage[s] + joint·J + bone·B`, where each
/// `score_j` is the clinician variable standardized by its generating
/// distribution (see [`clinician_scores`]). Positive = hospitalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeModel {
    pub intercept: f64,
    /// One coefficient per clinician variable, in schema order.
    pub clinician: Vec<f64>,
    pub ulcer_type: Vec<f64>,
    pub location: Vec<f64>,
    pub stage: Vec<f64>,
    pub joint: f64,
    pub bone: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        Self {
            intercept: -1.1,
            clinician: vec![
                0.35, 0.5, 0.45, 0.1, 0.5, 0.35, 0.45, 0.4, 0.35, 0.25, -0.4, -0.45, 0.55, 0.45, 0.2, 0.15,
            ],
            ulcer_type: vec![0.9, 0.5, -1.4, -0.8, 0.35],
            location: vec![0.0, 0.3, 0.4, 0.2, -0.2, 0.5],
            stage: vec![-0.7, -0.5, 0.2, 1.0, 0.5],
            joint: 0.9,
            bone: 1.3,
        }
    }
}

impl OutcomeModel {
    pub fn wound_term(&self, labels: &[usize; 5]) -> f64 {
        self.ulcer_type[labels[0]]
            + self.location[labels[1]]
            + self.stage[labels[2]]
            + self.joint * labels[3] as f64
            + self.bone * labels[4] as f64
    }

    pub fn clinician_term(&self, clinician: &[Value]) -> f64 {
        clinician_scores(clinician).iter().zip(&self.clinician).map(|(s, b)| s * b).sum()
    }

    pub fn logit(&self, labels: &[usize; 5], clinician: &[Value]) -> f64 {
        self.intercept + self.wound_term(labels) + self.clinician_term(clinician)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    /// Ulcer-type priors in schema order; must sum to 1.
    pub ulcer_priors: Vec<f64>,
    pub signal_strength: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Probability that any clinician value is blanked.
    pub missing_rate: f64,
    pub outcome: OutcomeModel,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let total: f64 = ULCER_COUNTS.iter().sum();
        Self {
            n_samples: 2000,
            image_size: [32, 32],
            ulcer_priors: ULCER_COUNTS.iter().map(|c| c / total).collect(),
            signal_strength: 0.9,
            noise: 0.05,
            missing_rate: 0.0,
            outcome: OutcomeModel::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut e = Vec::new();
        let s = LabelSchema::default();
        if self.n_samples == 0 {
            e.push("n_samples must be positive".into());
        }
        if self.image_size.iter().any(|&d| d < 8) {
            e.push(format!("image_size must be at least 8x8, got {:?}", self.image_size));
        }
        if self.ulcer_priors.len() != s.ulcer_types.len()
            || self.ulcer_priors.iter().any(|p| !(*p >= 0.0))
            || (self.ulcer_priors.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            e.push(format!(
                "ulcer_priors must be {} non-negative values summing to 1",
                s.ulcer_types.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            e.push("signal_strength must be in [0, 1]".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            e.push("noise must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            e.push("missing_rate must be in [0, 1]".into());
        }
        let o = &self.outcome;
        let lens = [
            ("clinician", o.clinician.len(), ClinicianSchema::default().len()),
            ("ulcer_type", o.ulcer_type.len(), s.ulcer_types.len()),
            ("location", o.location.len(), s.locations.len()),
            ("stage", o.stage.len(), s.stages.len()),
        ];
        for (name, got, want) in lens {
            if got != want {
                e.push(format!("outcome.{name} needs {want} coefficients, got {got}"));
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }
}

/// Axis-aligned box in pixels; `x1`, `y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub record: WoundRecord,
    pub image: RgbImage,
    pub bbox: BBox,
    /// Outcome logit before sampling.
    pub logit: f64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub samples: Vec<SynthSample>,
}

/// Every wound-variable combination with its probability under the generator.
pub fn wound_distribution() -> Vec<([usize; 5], f64)> {
    wound_distribution_with(&SynthConfig::default().ulcer_priors)
}

pub fn wound_distribution_with(ulcer_priors: &[f64]) -> Vec<([usize; 5], f64)> {
    let mut out = Vec::new();
    for (u, pu) in ulcer_priors.iter().enumerate() {
        let lw = &LOCATION_GIVEN_ULCER[u];
        let sw = &STAGE_GIVEN_ULCER[u];
        let (lt, st): (f64, f64) = (lw.iter().sum(), sw.iter().sum());
        for (l, pl) in lw.iter().enumerate() {
            for (s, ps) in sw.iter().enumerate() {
                for j in 0..2 {
                    for b in 0..2 {
                        let pj = if j == 1 { JOINT_GIVEN_STAGE[s] } else { 1.0 - JOINT_GIVEN_STAGE[s] };
                        let pb = if b == 1 { BONE_GIVEN_STAGE[s] } else { 1.0 - BONE_GIVEN_STAGE[s] };
                        out.push(([u, l, s, j, b], pu * pl / lt * ps / st * pj * pb));
                    }
                }
            }
        }
    }
    out
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

/// Draws the 16 clinician values in default-schema order.
pub fn draw_clinician<R: Rng>(rng: &mut R) -> Vec<Value> {
    let normal = |rng: &mut R, m: f64, s: f64| Normal::new(m, s).expect("valid normal").sample(rng);
    let lognormal = |rng: &mut R, m: f64, s: f64| LogNormal::new(m, s).expect("valid lognormal").sample(rng);
    let bern = |rng: &mut R, p: f64| f64::from(u8::from(Bernoulli::new(p).expect("valid p").sample(rng)));
    let poisson = |rng: &mut R, l: f64| Poisson::new(l).expect("valid lambda").sample(rng);
    let round1 = |x: f64| (x * 10.0).round() / 10.0;
    let round2 = |x: f64| (x * 100.0).round() / 100.0;
    let bmi = round1(normal(rng, 28.0, 5.0).clamp(15.0, 50.0));
    let tunneling = bern(rng, 0.2);
    let age = normal(rng, 65.0, 12.0).clamp(18.0, 100.0).round();
    let gender = GENDERS[rng.random_range(0..2)];
    let area = round2(lognormal(rng, 1.5, 0.8));
    let depth = lognormal(rng, -0.5, 0.5);
    let volume = round2(area * depth);
    let duration = lognormal(rng, 3.5, 0.8).round().max(1.0);
    let exudate = EXUDATE[pick(rng, &EXUDATE_P)];
    let diabetic = bern(rng, 0.35);
    let smoking = bern(rng, 0.2);
    let mobility = rng.random_range(0..=10) as f64;
    let albumin = round1(normal(rng, 3.8, 0.5).clamp(1.5, 5.5));
    let infection = bern(rng, 0.15);
    let prior = poisson(rng, 1.0);
    let meds = poisson(rng, 6.0);
    let dressing = DRESSINGS[rng.random_range(0..4)];
    vec![
        Value::Num(bmi),
        Value::Num(tunneling),
        Value::Num(age),
        Value::Cat(gender.into()),
        Value::Num(area),
        Value::Num(volume),
        Value::Num(duration),
        Value::Cat(exudate.into()),
        Value::Num(diabetic),
        Value::Num(smoking),
        Value::Num(mobility),
        Value::Num(albumin),
        Value::Num(infection),
        Value::Num(prior),
        Value::Num(meds),
        Value::Cat(dressing.into()),
    ]
}

/// Standardized score per clinician variable; missing values score 0.
/// Log-normal variables are scored on the log scale; categoricals use fixed
/// level scores (gender ±1, exudate ordinal, dressing foam −1 / gauze +1).
pub fn clinician_scores(values: &[Value]) -> Vec<f64> {
    let num = |j: usize| match &values[j] {
        Value::Num(v) if v.is_finite() => Some(*v),
        _ => None,
    };
    let cat = |j: usize| match &values[j] {
        Value::Cat(c) => Some(c.as_str()),
        _ => None,
    };
    let z = |j: usize, m: f64, s: f64| num(j).map_or(0.0, |v| (v - m) / s);
    let zlog = |j: usize, m: f64, s: f64| num(j).filter(|v| *v > 0.0).map_or(0.0, |v| (v.ln() - m) / s);
    let level = |j: usize, names: &[&str], scores: &[f64]| {
        cat(j).and_then(|c| names.iter().position(|n| *n == c)).map_or(0.0, |i| scores[i])
    };
    let bern_sd = |p: f64| (p * (1.0 - p)).sqrt();
    vec![
        z(0, 28.0, 5.0),
        z(1, 0.2, bern_sd(0.2)),
        z(2, 65.0, 12.0),
        level(3, &GENDERS, &[-1.0, 1.0]),
        zlog(4, 1.5, 0.8),
        zlog(5, 1.0, 0.89f64.sqrt()),
        zlog(6, 3.5, 0.8),
        level(7, &EXUDATE, &[-1.3 / 0.9, -0.3 / 0.9, 0.7 / 0.9, 1.7 / 0.9]),
        z(8, 0.35, bern_sd(0.35)),
        z(9, 0.2, bern_sd(0.2)),
        z(10, 5.0, 10f64.sqrt()),
        z(11, 3.8, 0.5),
        z(12, 0.15, bern_sd(0.15)),
        z(13, 1.0, 1.0),
        z(14, 6.0, 6f64.sqrt()),
        level(15, &DRESSINGS, &DRESSING_SCORE),
    ]
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Texture mask of ulcer type `k` at patch-local `(x, y)` in a patch of side `p`.
fn texture_on(k: usize, x: usize, y: usize, p: usize) -> bool {
    match k % 5 {
        0 => true,
        1 => (y / 2) % 2 == 0,
        2 => (x / 2) % 2 == 0,
        3 => ((x / 3) + (y / 3)) % 2 == 0,
        _ => {
            let c = (p as f64 - 1.0) / 2.0;
            let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            (r as usize / 2) % 2 == 0
        }
    }
}

/// Patch side for a stage index: 3/8 of the shorter image side at the first
/// stage, growing linearly to 5/8 at the last.
pub fn patch_side(stage: usize, n_stages: usize, image_size: [usize; 2]) -> usize {
    let short = image_size[0].min(image_size[1]) as f64;
    let t = if n_stages > 1 { stage as f64 / (n_stages - 1) as f64 } else { 0.0 };
    ((0.375 + 0.25 * t) * short).round().max(4.0) as usize
}

fn render<R: Rng>(labels: &[usize; 5], config: &SynthConfig, n_ulcer: usize, n_stages: usize, rng: &mut R) -> (RgbImage, BBox) {
    let [h, w] = config.image_size;
    let tint = LOCATION_TINT[labels[1] % LOCATION_TINT.len()];
    let background = [0.45 + tint[0], 0.45 + tint[1], 0.45 + tint[2]];
    let p = patch_side(labels[2], n_stages, config.image_size);
    let x0 = rng.random_range(0..=w - p);
    let y0 = rng.random_range(0..=h - p);
    let bbox = BBox { x0, y0, x1: x0 + p, y1: y0 + p };
    let color = hsv(labels[0] as f64 / n_ulcer as f64, 0.85, 0.9);
    let dark = color.map(|c| c * 0.7);
    let spot = (p / 4).max(2);
    let corner = (p / 5).max(2);
    let c0 = (p - spot) / 2;
    let s = config.signal_strength;
    let noise = Normal::new(0.0, config.noise.max(0.0)).expect("valid noise");
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = background;
            if bbox.contains(x, y) {
                let (lx, ly) = (x - x0, y - y0);
                let mut patch = if texture_on(labels[0], lx, ly, p) { color } else { dark };
                if labels[3] == 1 && (c0..c0 + spot).contains(&lx) && (c0..c0 + spot).contains(&ly) {
                    patch = [0.05; 3];
                }
                if labels[4] == 1 && (1..1 + corner).contains(&lx) && (1..1 + corner).contains(&ly) {
                    patch = [0.97; 3];
                }
                for c in 0..3 {
                    px[c] = s * patch[c] + (1.0 - s) * background[c];
                }
            }
            let mut out = [0u8; 3];
            for c in 0..3 {
                let v = if config.noise > 0.0 { px[c] + noise.sample(rng) } else { px[c] };
                out[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(out));
        }
    }
    (img, bbox)
}

pub fn sample_id(i: usize) -> String {
    format!("s{i:05}")
}

/// Generates the dataset. Ulcer-type counts are the largest-remainder
/// apportionment of `n_samples` by the priors; every other draw uses a
/// per-sample RNG stream, so the result is independent of thread count.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate().map_err(Error::Config)?;
    let schema = LabelSchema::default();
    let counts = largest_remainder(config.n_samples, &config.ulcer_priors);
    let mut ulcers: Vec<usize> = counts.iter().enumerate().flat_map(|(u, &c)| std::iter::repeat_n(u, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    ulcers.shuffle(&mut rng);
    let n_ulcer = schema.ulcer_types.len();
    let n_stages = schema.stages.len();
    let samples = ulcers
        .par_iter()
        .enumerate()
        .map(|(i, &u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let l = pick(&mut rng, &LOCATION_GIVEN_ULCER[u]);
            let s = pick(&mut rng, &STAGE_GIVEN_ULCER[u]);
            let j = usize::from(rng.random::<f64>() < JOINT_GIVEN_STAGE[s]);
            let b = usize::from(rng.random::<f64>() < BONE_GIVEN_STAGE[s]);
            let labels = [u, l, s, j, b];
            let clinician = draw_clinician(&mut rng);
            let logit = config.outcome.logit(&labels, &clinician);
            let positive = rng.random::<f64>() < sigmoid(logit);
            let clinician = clinician
                .into_iter()
                .map(|v| if config.missing_rate > 0.0 && rng.random::<f64>() < config.missing_rate { Value::Missing } else { v })
                .collect();
            let (image, bbox) = render(&labels, config, n_ulcer, n_stages, &mut rng);
            let id = sample_id(i);
            let mut wl = WoundLabels::default();
            for t in Task::ALL {
                wl.set(t, Some(labels[t.index()]));
            }
            SynthSample {
                record: WoundRecord {
                    image_path: format!("images/{id}.png"),
                    sample_id: id,
                    labels: wl,
                    clinician,
                    outcome: Some(if positive { Outcome::Hospitalization } else { Outcome::TreatmentComplete }),
                },
                image,
                bbox,
                logit,
            }
        })
        .collect();
    Ok(SynthDataset {
        config: config.clone(),
        samples,
    })
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const BBOX_FILE: &str = "bboxes.csv";
pub const CONFIG_FILE: &str = "synth.toml";

/// Writes `manifest.csv`, `bboxes.csv`, `synth.toml` and `images/*.png` under `dir`.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).at(&images)?;
    dataset.samples.par_iter().try_for_each(|s| -> Result<()> {
        let path = dir.join(&s.record.image_path);
        s.image.save_with_format(&path, image::ImageFormat::Png)?;
        Ok(())
    })?;
    let records: Vec<WoundRecord> = dataset.samples.iter().map(|s| s.record.clone()).collect();
    write_manifest(&dir.join(MANIFEST_FILE), &records, &LabelSchema::default(), &ClinicianSchema::default())?;
    let bbox_path = dir.join(BBOX_FILE);
    let mut w = csv::Writer::from_path(&bbox_path)?;
    w.write_record(["sample_id", "x0", "y0", "x1", "y1"])?;
    for s in &dataset.samples {
        let b = s.bbox;
        w.write_record([s.record.sample_id.clone(), b.x0.to_string(), b.y0.to_string(), b.x1.to_string(), b.y1.to_string()])?;
    }
    w.flush().at(&bbox_path)?;
    let echo = toml::to_string(&dataset.config).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(dir.join(CONFIG_FILE), echo).at(dir.join(CONFIG_FILE))?;
    Ok(())
}

pub fn load_bboxes(path: &Path) -> Result<BTreeMap<String, BBox>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let n = |i: usize| -> Result<usize> {
            row.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Manifest(format!("{}: bad bounding box row", path.display())))
        };
        out.insert(row[0].to_string(), BBox { x0: n(1)?, y0: n(2)?, x1: n(3)?, y1: n(4)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_samples: n,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small(30)).unwrap();
        let b = generate(&small(30)).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.image, y.image);
            assert_eq!(x.bbox, y.bbox);
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let total: f64 = wound_distribution().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(wound_distribution().len(), 5 * 6 * 5 * 2 * 2);
    }

    #[test]
    fn bbox_inside_image() {
        let d = generate(&small(50)).unwrap();
        for s in &d.samples {
            assert!(s.bbox.x1 <= 32 && s.bbox.y1 <= 32);
            let side = patch_side(s.record.labels.get(Task::Stage).unwrap(), 5, [32, 32]);
            assert_eq!(s.bbox.x1 - s.bbox.x0, side);
        }
    }

    #[test]
    fn bad_config_lists_every_problem() {
        let c = SynthConfig {
            n_samples: 0,
            signal_strength: 2.0,
            ..SynthConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().len(), 2);
    }

    #[test]
    fn texture_families_differ() {
        let masks: Vec<Vec<bool>> = (0..5)
            .map(|k| (0..144).map(|i| texture_on(k, i % 12, i / 12, 12)).collect())
            .collect();
        for a in 0..5 {
            for b in a + 1..5 {
                assert_ne!(masks[a], masks[b]);
            }
        }
    }
}
