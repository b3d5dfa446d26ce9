use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::optim::OptimizerConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::model::{MultiTaskModel, Normalization};
use super::schema::{HeadKind, Task, WoundLabels};

/// One model input with its (possibly partial) wound-variable labels.
#[derive(Debug, Clone)]
pub struct LabeledSample<T> {
    pub id: String,
    pub input: Tensor<T>,
    pub labels: WoundLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = self.optimizer.validate().err().unwrap_or_default();
        if self.epochs == 0 {
            errors.push("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            errors.push("train.batch_size must be at least 1".into());
        }
        if self.patience == Some(0) {
            errors.push("train.patience must be at least 1 when set".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Per-head loss weights. Heads missing from the map get weight 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub BTreeMap<Task, f64>);

impl LossWeights {
    pub fn uniform() -> Self {
        Self::default()
    }

    /// Weight 1 for `task`, 0 for every other head.
    pub fn only(task: Task) -> Self {
        Self(Task::ALL.into_iter().map(|t| (t, if t == task { 1.0 } else { 0.0 })).collect())
    }

    pub fn get(&self, task: Task) -> f64 {
        self.0.get(&task).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    /// Parameters from the epoch with the lowest validation loss (earliest on ties).
    pub model: MultiTaskModel<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub curve: Vec<EpochLoss>,
}

fn check_labels<T: Scalar>(model: &MultiTaskModel<T>, samples: &[LabeledSample<T>]) -> Result<()> {
    for s in samples {
        for head in &model.heads {
            if let Some(i) = s.labels.get(head.task) {
                let classes = model.schema.class_count(head.task);
                if i >= classes {
                    return Err(Error::LabelOutsideSchema {
                        task: head.task.to_string(),
                        label: format!("index {i} of {classes} (sample {})", s.id),
                    });
                }
            }
        }
    }
    Ok(())
}

fn batch_of<T: Scalar>(samples: &[&LabeledSample<T>]) -> Result<Tensor<T>> {
    let inputs: Vec<&Tensor<T>> = samples.iter().map(|s| &s.input).collect();
    Ok(Tensor::stack(&inputs)?)
}

fn head_loss<T: Scalar>(kind: HeadKind, logits: &Tensor<T>, targets: &[Option<usize>]) -> Result<(T, Tensor<T>)> {
    Ok(match kind {
        HeadKind::Softmax(_) => nn::softmax_cross_entropy(logits, targets)?,
        HeadKind::Sigmoid => nn::binary_cross_entropy_with_logits(logits, targets)?,
    })
}

/// Weighted multi-task loss of a frozen model over a sample set.
/// Each head contributes the mean loss over samples that carry its label.
pub fn evaluate_loss<T: Scalar>(
    model: &MultiTaskModel<T>,
    samples: &[LabeledSample<T>],
    weights: &LossWeights,
    batch_size: usize,
) -> Result<f64> {
    let mut sums: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
    let refs: Vec<&LabeledSample<T>> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let logits = model.logits(&batch_of(chunk)?)?;
        for head in &model.heads {
            let targets: Vec<Option<usize>> = chunk.iter().map(|s| s.labels.get(head.task)).collect();
            let m = targets.iter().flatten().count();
            if m == 0 {
                continue;
            }
            let (loss, _) = head_loss(head.kind, &logits[&head.task], &targets)?;
            let e = sums.entry(head.task).or_default();
            e.0 += loss.as_f64() * m as f64;
            e.1 += m;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(task, (s, m))| weights.get(task) * s / m as f64)
        .sum())
}

/// Mini-batch Adadelta training with per-epoch seeded shuffling. Fits the
/// input normalization on `train` first. Returns the best-validation snapshot.
pub fn train<T: Scalar>(
    mut model: MultiTaskModel<T>,
    train: &[LabeledSample<T>],
    val: &[LabeledSample<T>],
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainedModel<T>> {
    config.validate().map_err(Error::Config)?;
    if train.is_empty() {
        return Err(Error::EmptySplit("training".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let expected = model.config.sample_shape();
    if let Some(s) = train.iter().chain(val).find(|s| s.input.shape() != expected) {
        return Err(Error::InputSize {
            expected,
            got: s.input.shape().to_vec(),
        });
    }
    check_labels(&model, train)?;
    check_labels(&model, val)?;
    let channels = model.normalization.mean.len();
    model.normalization = Normalization::fit(train.iter().map(|s| &s.input), channels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, MultiTaskModel<T>)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let chunk: Vec<&LabeledSample<T>> = idx.iter().map(|&i| &train[i]).collect();
            let x = batch_of(&chunk)?;
            model.zero_grad();
            let logits = model.forward_train(&x)?;
            let mut grads = Vec::with_capacity(logits.len());
            let mut batch_loss = 0.0;
            for (head, z) in model.heads.iter().zip(&logits) {
                let w = weights.get(head.task);
                let targets: Vec<Option<usize>> = chunk.iter().map(|s| s.labels.get(head.task)).collect();
                if w == 0.0 || targets.iter().all(Option::is_none) {
                    grads.push(None);
                    continue;
                }
                let (loss, mut g) = head_loss(head.kind, z, &targets)?;
                batch_loss += w * loss.as_f64();
                g.scale_in_place(T::lit(w));
                grads.push(Some(g));
            }
            model.backward(&grads)?;
            model.step(&config.optimizer)?;
            train_sum += batch_loss * chunk.len() as f64;
        }
        model.clear_caches();
        let train_loss = train_sum / train.len() as f64;
        let val_loss = evaluate_loss(&model, val, weights, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Invalid(format!("validation loss diverged at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (best_epoch, best_val_loss, model) = best.expect("at least one epoch");
    Ok(TrainedModel {
        model,
        best_epoch,
        best_val_loss,
        curve,
    })
}
