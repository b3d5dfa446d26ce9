use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::model::MultiTaskModel;
use super::schema::{HeadKind, Task};

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariablePrediction {
    pub task: Task,
    pub index: usize,
    pub label: String,
    /// Full class distribution. Binary variables are reported as `[P(no), P(yes)]`.
    pub probabilities: Vec<f64>,
}

/// Predictions for all five wound variables, in [`Task::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WoundVariablePrediction {
    pub variables: Vec<VariablePrediction>,
}

impl WoundVariablePrediction {
    pub fn get(&self, task: Task) -> &VariablePrediction {
        &self.variables[task.index()]
    }
}

/// Probability vectors per sample for every head of one model.
pub fn head_distributions<T: Scalar>(model: &MultiTaskModel<T>, batch: &Tensor<T>) -> Result<Vec<Vec<(Task, Vec<f64>)>>> {
    let probs = model.forward(batch)?;
    let n = batch.dim(0);
    Ok((0..n)
        .map(|i| {
            model
                .heads
                .iter()
                .map(|h| {
                    let row = probs[&h.task].row(i);
                    let dist = match h.kind {
                        HeadKind::Softmax(_) => row.iter().map(|v| v.as_f64()).collect(),
                        HeadKind::Sigmoid => {
                            let p = row[0].as_f64();
                            vec![1.0 - p, p]
                        }
                    };
                    (h.task, dist)
                })
                .collect()
        })
        .collect())
}

/// The trained stage-1 model set. Every task must be covered by exactly one head.
#[derive(Debug, Clone)]
pub struct Stage1Models<T> {
    pub models: Vec<MultiTaskModel<T>>,
}

impl<T: Scalar> Stage1Models<T> {
    pub fn from_models(models: Vec<MultiTaskModel<T>>) -> Result<Self> {
        let mut covered = Vec::new();
        for m in &models {
            for t in m.tasks() {
                if covered.contains(&t) {
                    return Err(Error::Invalid(format!("task {t} is predicted by more than one model")));
                }
                covered.push(t);
            }
        }
        let missing: Vec<String> = Task::ALL
            .into_iter()
            .filter(|t| !covered.contains(t))
            .map(|t| t.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingTasks(missing));
        }
        if let Some(first) = models.first() {
            let shape = first.config.sample_shape();
            if let Some(m) = models.iter().find(|m| m.config.sample_shape() != shape) {
                return Err(Error::InputSize {
                    expected: shape,
                    got: m.config.sample_shape(),
                });
            }
            if models.iter().any(|m| m.schema != first.schema) {
                return Err(Error::SchemaMismatch {
                    expected: first.schema.hash(),
                    found: "models trained under different label schemas".into(),
                });
            }
        }
        Ok(Self { models })
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        self.models[0].config.sample_shape()
    }

    pub fn predict_batch(&self, batch: &Tensor<T>) -> Result<Vec<WoundVariablePrediction>> {
        let n = batch.dim(0);
        let mut slots: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; Task::ALL.len()]; n];
        for m in &self.models {
            for (i, dists) in head_distributions(m, batch)?.into_iter().enumerate() {
                for (task, dist) in dists {
                    slots[i][task.index()] = Some(dist);
                }
            }
        }
        let schema = &self.models[0].schema;
        Ok(slots
            .into_iter()
            .map(|row| WoundVariablePrediction {
                variables: Task::ALL
                    .into_iter()
                    .zip(row)
                    .map(|(task, dist)| {
                        let probabilities = dist.expect("coverage checked at construction");
                        let index = argmax(&probabilities);
                        VariablePrediction {
                            task,
                            index,
                            label: schema.label(task, index).to_string(),
                            probabilities,
                        }
                    })
                    .collect(),
            })
            .collect())
    }

    /// Predicts a single `[C, H, W]` input.
    pub fn predict(&self, image: &Tensor<T>) -> Result<WoundVariablePrediction> {
        let batch = Tensor::stack(&[image])?;
        Ok(self.predict_batch(&batch)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::{BackboneConfig, BlockSpec, LabelSchema};

    fn cfg() -> BackboneConfig {
        BackboneConfig {
            input_size: [8, 8],
            blocks: vec![BlockSpec::new(4)],
            embedding_dim: 4,
            ..BackboneConfig::default()
        }
    }

    fn models(seed: u64) -> Vec<MultiTaskModel<f64>> {
        let s = LabelSchema::default();
        vec![
            MultiTaskModel::build(&s, &cfg(), &[Task::UlcerType], seed).unwrap(),
            MultiTaskModel::build(&s, &cfg(), &[Task::Location], seed + 1).unwrap(),
            MultiTaskModel::build(
                &s,
                &cfg(),
                &[Task::Stage, Task::JointNecrosisExposed, Task::LigamentBoneNecrosisExposed],
                seed + 2,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn missing_tasks_listed() {
        let mut ms = models(1);
        ms.remove(2);
        match Stage1Models::from_models(ms).unwrap_err() {
            Error::MissingTasks(t) => {
                assert_eq!(t, ["stage", "joint_necrosis_exposed", "ligament_bone_necrosis_exposed"])
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn five_variables_with_normalized_probabilities() {
        let set = Stage1Models::from_models(models(1)).unwrap();
        let p = set.predict(&Tensor::from_fn(&[3, 8, 8], |i| (i % 9) as f64 / 9.0)).unwrap();
        assert_eq!(p.variables.len(), 5);
        for v in &p.variables {
            assert!((v.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(v.index, argmax(&v.probabilities));
        }
    }

    #[test]
    fn uniform_heads_pick_index_zero() {
        let mut ms = models(2);
        for m in &mut ms {
            for h in &mut m.heads {
                h.dense.params.weights.value.fill(0.0);
            }
        }
        let set = Stage1Models::from_models(ms).unwrap();
        let p = set.predict(&Tensor::full(&[3, 8, 8], 0.3)).unwrap();
        for v in &p.variables {
            assert_eq!(v.index, 0);
        }
        assert_eq!(p.get(Task::UlcerType).label, "Diabetic Ulcer");
        assert_eq!(p.get(Task::JointNecrosisExposed).label, "no");
    }

    #[test]
    fn argmax_invariant_under_logit_shift() {
        let mut ms = models(3);
        let x = Tensor::from_fn(&[3, 8, 8], |i| (i % 7) as f64 / 7.0);
        let before = Stage1Models::from_models(ms.clone()).unwrap().predict(&x).unwrap();
        for h in &mut ms[0].heads {
            h.dense.params.bias.value = h.dense.params.bias.value.map(|b| b + 3.5);
        }
        let after = Stage1Models::from_models(ms).unwrap().predict(&x).unwrap();
        assert_eq!(before.get(Task::UlcerType).index, after.get(Task::UlcerType).index);
    }
}
