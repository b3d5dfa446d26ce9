use log::warn;
use serde::{Deserialize, Serialize};

use crate::binning::{BinnedDataset, Binner, Value};
use crate::error::{GbmError, Result};
use crate::hexfloat;
use crate::split::SplitParams;
use crate::tree::{grow_tree, Tree, TreeParams};

pub const FORMAT_VERSION: u32 = 1;
const PRIOR_CLAMP: f64 = 10.0;
const PROB_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbmConfig {
    pub num_trees: usize,
    #[serde(with = "hexfloat::scalar")]
    pub shrinkage: f64,
    pub max_leaves: usize,
    pub max_depth: usize,
    #[serde(with = "hexfloat::scalar")]
    pub lambda: f64,
    #[serde(with = "hexfloat::scalar")]
    pub gamma: f64,
    #[serde(with = "hexfloat::scalar")]
    pub min_child_weight: f64,
    pub max_bins: usize,
    /// Stop when validation logloss has not improved for this many rounds.
    pub early_stop_rounds: Option<usize>,
    pub one_hot_categoricals: bool,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            shrinkage: 0.1,
            max_leaves: 31,
            max_depth: 6,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1e-3,
            max_bins: 255,
            early_stop_rounds: None,
            one_hot_categoricals: false,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut e = Vec::new();
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            e.push("gbm.shrinkage must be in (0, 1]".to_string());
        }
        if self.max_leaves == 0 {
            e.push("gbm.max_leaves must be at least 1".to_string());
        }
        if self.max_depth == 0 {
            e.push("gbm.max_depth must be at least 1".to_string());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            e.push("gbm.lambda must be non-negative".to_string());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            e.push("gbm.gamma must be non-negative".to_string());
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            e.push("gbm.min_child_weight must be non-negative".to_string());
        }
        if !(1..=crate::binning::MAX_BINS).contains(&self.max_bins) {
            e.push(format!("gbm.max_bins must be in 1..={}", crate::binning::MAX_BINS));
        }
        if self.early_stop_rounds == Some(0) {
            e.push("gbm.early_stop_rounds must be at least 1 when set".to_string());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_leaves: self.max_leaves,
            max_depth: self.max_depth,
            split: SplitParams {
                lambda: self.lambda,
                gamma: self.gamma,
                min_child_weight: self.min_child_weight,
                one_hot_categoricals: self.one_hot_categoricals,
            },
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic-loss derivatives: `g = p − y`, `h = p(1 − p)`.
pub fn gradients_logistic(labels: &[f64], probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| (p - y, p * (1.0 - p)))
        .unzip()
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-15, 1 − 1e-15]`.
pub fn logloss(labels: &[f64], probs: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / labels.len().max(1) as f64
}

fn check_labels(labels: &[f64], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(GbmError::LabelCount {
            expected: rows,
            got: labels.len(),
        });
    }
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(&y) => Err(GbmError::InvalidLabel(y)),
        None => Ok(()),
    }
}

/// Trained ensemble: `P(y=1) = sigmoid(prior + shrinkage · Σ tree outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub version: u32,
    pub binner: Binner,
    #[serde(with = "hexfloat::scalar")]
    pub prior: f64,
    #[serde(with = "hexfloat::scalar")]
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
    pub config: GbmConfig,
    /// Set when training could not learn anything beyond the prior.
    pub warning: Option<String>,
    /// Per-round training logloss (index 0 is the prior alone).
    #[serde(with = "hexfloat::vec")]
    pub train_curve: Vec<f64>,
    /// Per-round validation logloss when a validation set was given.
    #[serde(with = "hexfloat::vec")]
    pub valid_curve: Vec<f64>,
}

impl Ensemble {
    pub fn n_features(&self) -> usize {
        self.binner.n_features()
    }

    fn check_width(&self, data: &BinnedDataset) -> Result<()> {
        if data.n_features() != self.n_features() {
            return Err(GbmError::FeatureCountMismatch {
                expected: self.n_features(),
                got: data.n_features(),
            });
        }
        Ok(())
    }

    /// Raw log-odds per row.
    pub fn predict_margin(&self, data: &BinnedDataset) -> Result<Vec<f64>> {
        self.check_width(data)?;
        Ok((0..data.n_rows)
            .map(|r| {
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(data, r)).sum();
                self.prior + self.shrinkage * sum
            })
            .collect())
    }

    pub fn predict(&self, data: &BinnedDataset) -> Result<Vec<f64>> {
        Ok(self.predict_margin(data)?.into_iter().map(sigmoid).collect())
    }

    /// Bins raw rows with the frozen training binning, then predicts.
    pub fn predict_rows(&self, rows: &[Vec<Value>]) -> Result<Vec<f64>> {
        self.predict(&self.binner.transform(rows)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Ensemble = serde_json::from_str(s)?;
        if e.version != FORMAT_VERSION {
            return Err(GbmError::Format(format!("unsupported version {}", e.version)));
        }
        for (i, t) in e.trees.iter().enumerate() {
            t.validate(e.n_features()).map_err(|m| GbmError::Format(format!("tree {i}: {m}")))?;
        }
        Ok(e)
    }
}

/// Boosts logistic-loss trees on binned rows. `valid` enables early stopping
/// and the validation curve; the returned ensemble keeps the trees up to the
/// best validation round.
pub fn fit(
    binner: &Binner,
    train: &BinnedDataset,
    labels: &[f64],
    valid: Option<(&BinnedDataset, &[f64])>,
    config: &GbmConfig,
) -> Result<Ensemble> {
    config.validate().map_err(GbmError::Config)?;
    if train.n_rows == 0 {
        return Err(GbmError::EmptyDataset);
    }
    if train.n_features() != binner.n_features() {
        return Err(GbmError::FeatureCountMismatch {
            expected: binner.n_features(),
            got: train.n_features(),
        });
    }
    check_labels(labels, train.n_rows)?;
    if let Some((v, vy)) = valid {
        if v.n_features() != binner.n_features() {
            return Err(GbmError::FeatureCountMismatch {
                expected: binner.n_features(),
                got: v.n_features(),
            });
        }
        check_labels(vy, v.n_rows)?;
    }

    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let rate = positives as f64 / labels.len() as f64;
    let prior = (rate / (1.0 - rate)).ln().clamp(-PRIOR_CLAMP, PRIOR_CLAMP);
    let mut ensemble = Ensemble {
        version: FORMAT_VERSION,
        binner: binner.clone(),
        prior,
        shrinkage: config.shrinkage,
        trees: Vec::new(),
        config: config.clone(),
        warning: None,
        train_curve: Vec::new(),
        valid_curve: Vec::new(),
    };
    let mut sums = vec![0.0; train.n_rows];
    let probs_of = |sums: &[f64]| -> Vec<f64> { sums.iter().map(|s| sigmoid(prior + config.shrinkage * s)).collect() };
    let mut probs = probs_of(&sums);
    ensemble.train_curve.push(logloss(labels, &probs));
    let mut valid_sums = valid.map(|(v, _)| vec![0.0; v.n_rows]);
    if let (Some((_, vy)), Some(vs)) = (valid, &valid_sums) {
        ensemble.valid_curve.push(logloss(vy, &probs_of(vs)));
    }

    if positives == 0 || positives == labels.len() {
        let msg = format!("training labels are all {}; ensemble predicts the prior only", labels[0]);
        warn!("{msg}");
        ensemble.warning = Some(msg);
        return Ok(ensemble);
    }

    let params = config.tree_params();
    let rows: Vec<u32> = (0..train.n_rows as u32).collect();
    let mut best_round = 0;
    for round in 1..=config.num_trees {
        let (g, h) = gradients_logistic(labels, &probs);
        let (tree, leaf_rows) = grow_tree(train, &g, &h, rows.clone(), &params);
        let leaf_values: Vec<f64> = tree
            .nodes()
            .iter()
            .filter_map(|n| match n {
                crate::tree::Node::Leaf { value } => Some(*value),
                _ => None,
            })
            .collect();
        for (value, rs) in leaf_values.iter().zip(&leaf_rows) {
            for &r in rs {
                sums[r as usize] += value;
            }
        }
        probs = probs_of(&sums);
        ensemble.train_curve.push(logloss(labels, &probs));
        if let (Some((v, vy)), Some(vs)) = (valid, &mut valid_sums) {
            for (r, s) in vs.iter_mut().enumerate() {
                *s += tree.predict_row(v, r);
            }
            let loss = logloss(vy, &probs_of(vs));
            if loss < ensemble.valid_curve[best_round] {
                best_round = round;
            }
            ensemble.valid_curve.push(loss);
        } else {
            best_round = round;
        }
        ensemble.trees.push(tree);
        if config.early_stop_rounds.is_some_and(|k| round - best_round >= k) {
            break;
        }
    }
    ensemble.trees.truncate(best_round);
    Ok(ensemble)
}
