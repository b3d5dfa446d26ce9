use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Dense};
use crate::optim::{OptimizerConfig, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::backbone::{Backbone, BackboneConfig, BackboneMode};
use super::schema::{HeadKind, LabelSchema, Task};

/// Per-channel (conv mode) or per-dimension (precomputed mode) input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population std per channel over every sample; `std` is floored at 1e-6.
    /// Each sample is `[C, ...]` with `C = channels`.
    pub fn fit<'a, T: Scalar>(samples: impl IntoIterator<Item = &'a Tensor<T>>, channels: usize) -> Result<Self> {
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        let mut count = 0usize;
        for s in samples {
            let per = s.len() / channels;
            for (c, plane) in s.data().chunks_exact(per).enumerate() {
                for &v in plane {
                    let v = v.as_f64();
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += per;
        }
        if count == 0 {
            return Err(Error::EmptySplit("normalization".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, std })
    }

    pub(crate) fn apply<T: Scalar>(&self, batch: &Tensor<T>) -> Tensor<T> {
        let mut out = batch.clone();
        let channels = self.mean.len();
        let per = batch.len() / (batch.dim(0) * channels);
        for (i, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
            let c = i % channels;
            let (m, s) = (T::lit(self.mean[c]), T::lit(1.0 / self.std[c]));
            for v in chunk {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Head<T> {
    pub task: Task,
    pub kind: HeadKind,
    pub dense: Dense<T>,
}

/// Shared backbone with one private head per task. A single-task model is a
/// multi-task model with one head.
#[derive(Debug, Clone)]
pub struct MultiTaskModel<T> {
    pub schema: LabelSchema,
    pub config: BackboneConfig,
    pub backbone: Option<Backbone<T>>,
    pub heads: Vec<Head<T>>,
    pub normalization: Normalization,
}

impl<T: Scalar> MultiTaskModel<T> {
    /// Seeded He-uniform initialization. Heads are ordered as in [`Task::ALL`].
    pub fn build(schema: &LabelSchema, config: &BackboneConfig, tasks: &[Task], seed: u64) -> Result<Self> {
        schema.validate()?;
        config.validate().map_err(Error::Config)?;
        if tasks.is_empty() {
            return Err(Error::Invalid("a model needs at least one task".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = (config.mode == BackboneMode::Conv).then(|| Backbone::new(config, &mut rng));
        let heads = Task::ALL
            .into_iter()
            .filter(|t| tasks.contains(t))
            .map(|task| {
                let kind = schema.head_kind(task);
                Head {
                    task,
                    kind,
                    dense: Dense::new(&format!("head.{task}"), config.embedding_dim, kind.logits(), &mut rng),
                }
            })
            .collect();
        let channels = match config.mode {
            BackboneMode::Conv => config.channels,
            BackboneMode::Precomputed => config.embedding_dim,
        };
        Ok(Self {
            schema: schema.clone(),
            config: config.clone(),
            backbone,
            heads,
            normalization: Normalization::identity(channels),
        })
    }

    pub fn build_by_name(schema: &LabelSchema, config: &BackboneConfig, tasks: &[&str], seed: u64) -> Result<Self> {
        let tasks = tasks.iter().map(|t| Task::from_name(t)).collect::<Result<Vec<_>>>()?;
        Self::build(schema, config, &tasks, seed)
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.heads.iter().map(|h| h.task).collect()
    }

    pub fn head(&self, task: Task) -> Option<&Head<T>> {
        self.heads.iter().find(|h| h.task == task)
    }

    pub fn head_mut(&mut self, task: Task) -> Option<&mut Head<T>> {
        self.heads.iter_mut().find(|h| h.task == task)
    }

    pub fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let expected = self.config.sample_shape();
        if batch.ndim() != expected.len() + 1 || batch.shape()[1..] != expected[..] {
            let mut want = vec![batch.shape().first().copied().unwrap_or(1)];
            want.extend(&expected);
            return Err(Error::InputSize {
                expected: want,
                got: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let x = self.normalization.apply(batch);
        match &self.backbone {
            Some(b) => b.infer(&x),
            None => Ok(x),
        }
    }

    /// Raw head outputs for a batch, without caching.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<BTreeMap<Task, Tensor<T>>> {
        let emb = self.embed(batch)?;
        self.heads
            .iter()
            .map(|h| Ok((h.task, h.dense.infer(&emb)?)))
            .collect()
    }

    /// Class probabilities per head: softmax rows for multiclass heads,
    /// `P(yes)` as an `[N, 1]` column for binary heads.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<BTreeMap<Task, Tensor<T>>> {
        let logits = self.logits(batch)?;
        logits
            .into_iter()
            .map(|(task, z)| {
                let p = match self.schema.head_kind(task) {
                    HeadKind::Softmax(_) => nn::softmax(&z)?,
                    HeadKind::Sigmoid => nn::sigmoid(&z)?,
                };
                Ok((task, p))
            })
            .collect()
    }

    /// Training forward pass; returns logits per head in head order.
    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_batch(batch)?;
        let x = self.normalization.apply(batch);
        let emb = match &mut self.backbone {
            Some(b) => b.forward(&x)?,
            None => x,
        };
        self.heads.iter_mut().map(|h| Ok(h.dense.forward(&emb)?)).collect()
    }

    /// Backpropagates per-head logit gradients (`None` skips a head entirely).
    pub fn backward(&mut self, head_grads: &[Option<Tensor<T>>]) -> Result<()> {
        let mut g_emb: Option<Tensor<T>> = None;
        for (head, g) in self.heads.iter_mut().zip(head_grads) {
            let Some(g) = g else { continue };
            let gi = head.dense.backward(g)?;
            match &mut g_emb {
                Some(acc) => acc.add_assign(&gi)?,
                None => g_emb = Some(gi),
            }
        }
        if let (Some(b), Some(g)) = (&mut self.backbone, g_emb) {
            b.backward(&g)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        if let Some(b) = &self.backbone {
            for c in b.convs() {
                out.extend(c.params.params());
            }
        }
        for h in &self.heads {
            out.extend(h.dense.params.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        if let Some(b) = &mut self.backbone {
            for c in b.convs_mut() {
                out.extend(c.params.params_mut());
            }
        }
        for h in &mut self.heads {
            out.extend(h.dense.params.params_mut());
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        for p in self.params_mut() {
            p.step(config)?;
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        if let Some(b) = &mut self.backbone {
            b.clear_caches();
        }
        for h in &mut self.heads {
            h.dense.clear_cache();
        }
    }

    /// Rounds parameters to `f32`, the precision of saved model files.
    pub fn quantize_f32(&mut self) {
        for p in self.params_mut() {
            p.quantize_f32();
        }
    }

    /// Copy of the parameters converted to another scalar type (optimizer state reset).
    pub fn cast<U: Scalar>(&self) -> MultiTaskModel<U> {
        let backbone = self.backbone.as_ref().map(|b| {
            let convs = b
                .convs()
                .map(|c| {
                    nn::Conv2d::from_params(
                        crate::optim::LayerParams::new(
                            c.params.weights.name.trim_end_matches(".weights"),
                            c.params.weights.value.cast(),
                            c.params.bias.value.cast(),
                        ),
                        c.stride,
                        c.padding,
                    )
                })
                .collect();
            Backbone::from_convs(&self.config, convs).expect("same block count")
        });
        MultiTaskModel {
            schema: self.schema.clone(),
            config: self.config.clone(),
            backbone,
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    task: h.task,
                    kind: h.kind,
                    dense: Dense::from_params(crate::optim::LayerParams::new(
                        &format!("head.{}", h.task),
                        h.dense.params.weights.value.cast(),
                        h.dense.params.bias.value.cast(),
                    )),
                })
                .collect(),
            normalization: self.normalization.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::BlockSpec;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            input_size: [8, 8],
            blocks: vec![BlockSpec::new(4), BlockSpec::new(6)],
            embedding_dim: 6,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn single_task_model_has_one_softmax_head() {
        let m = MultiTaskModel::<f64>::build_by_name(&LabelSchema::default(), &tiny(), &["ulcer_type"], 1).unwrap();
        assert_eq!(m.heads.len(), 1);
        assert_eq!(m.heads[0].kind, HeadKind::Softmax(5));
    }

    #[test]
    fn multi_task_heads() {
        let m = MultiTaskModel::<f64>::build_by_name(
            &LabelSchema::default(),
            &tiny(),
            &["stage", "joint_necrosis_exposed", "ligament_bone_necrosis_exposed"],
            1,
        )
        .unwrap();
        let kinds: Vec<_> = m.heads.iter().map(|h| h.kind).collect();
        assert_eq!(kinds, vec![HeadKind::Softmax(5), HeadKind::Sigmoid, HeadKind::Sigmoid]);
    }

    #[test]
    fn unknown_task_rejected() {
        let err = MultiTaskModel::<f64>::build_by_name(&LabelSchema::default(), &tiny(), &["margin"], 1).unwrap_err();
        assert!(matches!(err, Error::UnknownTask(_)));
    }

    #[test]
    fn same_seed_same_parameters() {
        let s = LabelSchema::default();
        let a = MultiTaskModel::<f64>::build(&s, &tiny(), &Task::ALL, 9).unwrap();
        let b = MultiTaskModel::<f64>::build(&s, &tiny(), &Task::ALL, 9).unwrap();
        let c = MultiTaskModel::<f64>::build(&s, &tiny(), &Task::ALL, 10).unwrap();
        let values = |m: &MultiTaskModel<f64>| m.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
    }

    #[test]
    fn forward_probabilities_are_normalized() {
        let m = MultiTaskModel::<f64>::build(&LabelSchema::default(), &tiny(), &Task::ALL, 3).unwrap();
        let x = Tensor::from_fn(&[3, 3, 8, 8], |i| ((i * 7919) % 101) as f64 / 101.0);
        let out = m.forward(&x).unwrap();
        for i in 0..3 {
            let s: f64 = out[&Task::UlcerType].row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let p = out[&Task::JointNecrosisExposed].row(i)[0];
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn zero_head_gives_uniform_output() {
        let mut m = MultiTaskModel::<f64>::build_by_name(&LabelSchema::default(), &tiny(), &["location"], 3).unwrap();
        m.heads[0].dense.params.weights.value.fill(0.0);
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i % 13) as f64 / 13.0);
        let p = &m.forward(&x).unwrap()[&Task::Location];
        assert!(p.data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn duplicated_image_gives_identical_rows() {
        let m = MultiTaskModel::<f64>::build(&LabelSchema::default(), &tiny(), &Task::ALL, 4).unwrap();
        let img = Tensor::from_fn(&[3, 8, 8], |i| (i % 17) as f64 / 17.0);
        let other = Tensor::from_fn(&[3, 8, 8], |i| (i % 5) as f64 / 5.0);
        let batch = Tensor::stack(&[&img, &other, &img]).unwrap();
        for p in m.forward(&batch).unwrap().values() {
            assert_eq!(p.row(0), p.row(2));
        }
    }

    #[test]
    fn wrong_spatial_size_names_expected_shape() {
        let m = MultiTaskModel::<f64>::build(&LabelSchema::default(), &tiny(), &[Task::Stage], 4).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 3, 9, 8])).unwrap_err();
        assert!(err.to_string().contains("[1, 3, 8, 8]"), "{err}");
    }

    #[test]
    fn normalization_fit_per_channel() {
        let a = Tensor::<f64>::from_f64(&[2, 1, 2], &[1.0, 3.0, 10.0, 10.0]).unwrap();
        let n = Normalization::fit([&a], 2).unwrap();
        assert_eq!(n.mean, vec![2.0, 10.0]);
        assert_eq!(n.std[0], 1.0);
        assert_eq!(n.std[1], 1e-6);
    }

    #[test]
    fn precomputed_mode_skips_backbone() {
        let cfg = BackboneConfig::precomputed(4);
        let m = MultiTaskModel::<f64>::build(&LabelSchema::default(), &cfg, &[Task::UlcerType], 1).unwrap();
        assert!(m.backbone.is_none());
        let p = m.forward(&Tensor::full(&[2, 4], 0.5)).unwrap();
        assert_eq!(p[&Task::UlcerType].shape(), &[2, 5]);
    }
}
