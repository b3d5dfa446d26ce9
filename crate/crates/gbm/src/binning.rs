use serde::{Deserialize, Serialize};

use crate::error::{GbmError, Result};
use crate::hexfloat;

/// Bin index reserved for missing values and unseen categories.
pub const MISSING_BIN: u8 = 0;
/// Upper limit on non-missing bins per feature.
pub const MAX_BINS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// One raw cell. Numeric NaN is treated as missing.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing) || matches!(self, Value::Num(v) if v.is_nan())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureBins {
    /// Value `v` goes to bin `1 + #{edges < v}`.
    Numeric {
        #[serde(with = "hexfloat::vec")]
        edges: Vec<f64>,
    },
    /// Sorted dictionary; category `i` goes to bin `i + 1`.
    Categorical { categories: Vec<String> },
}

impl FeatureBins {
    /// Number of bins including the missing bin.
    pub fn n_bins(&self) -> usize {
        1 + match self {
            FeatureBins::Numeric { edges } => edges.len() + 1,
            FeatureBins::Categorical { categories } => categories.len(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureBins::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedFeature {
    pub name: String,
    pub bins: FeatureBins,
}

/// Frozen binning tables, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binner {
    pub features: Vec<BinnedFeature>,
}

/// Quantile edges over sorted finite values. Edges sit halfway between
/// adjacent distinct values, so ties never straddle a bin boundary.
pub fn quantile_edges(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let boundaries: Vec<usize> = (1..n).filter(|&i| sorted[i - 1] < sorted[i]).collect();
    let chosen: Vec<usize> = if boundaries.len() < max_bins {
        boundaries
    } else {
        let mut out: Vec<usize> = Vec::new();
        for k in 1..max_bins {
            let target = (k * n + max_bins / 2) / max_bins;
            let pos = boundaries.partition_point(|&b| b < target);
            let Some(&b) = boundaries.get(pos) else { break };
            if out.last() != Some(&b) {
                out.push(b);
            }
        }
        out
    };
    chosen
        .into_iter()
        .map(|i| sorted[i - 1] + (sorted[i] - sorted[i - 1]) / 2.0)
        .collect()
}

impl Binner {
    pub fn fit(specs: &[FeatureSpec], rows: &[Vec<Value>], max_bins: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(GbmError::EmptyDataset);
        }
        if !(1..=MAX_BINS).contains(&max_bins) {
            return Err(GbmError::Config(vec![format!("max_bins must be in 1..={MAX_BINS}")]));
        }
        check_width(specs.len(), rows)?;
        let features = specs
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let bins = match spec.kind {
                    FeatureKind::Numeric => {
                        let mut vals = Vec::new();
                        for r in rows {
                            match &r[j] {
                                Value::Num(v) if !v.is_nan() => vals.push(*v),
                                v if v.is_missing() => {}
                                _ => return Err(kind_error(spec)),
                            }
                        }
                        if vals.is_empty() {
                            return Err(GbmError::EmptyFeature(spec.name.clone()));
                        }
                        vals.sort_by(f64::total_cmp);
                        FeatureBins::Numeric {
                            edges: quantile_edges(&vals, max_bins),
                        }
                    }
                    FeatureKind::Categorical => {
                        let mut cats = Vec::new();
                        for r in rows {
                            match &r[j] {
                                Value::Cat(c) => cats.push(c.clone()),
                                Value::Missing => {}
                                _ => return Err(kind_error(spec)),
                            }
                        }
                        cats.sort();
                        cats.dedup();
                        if cats.is_empty() {
                            return Err(GbmError::EmptyFeature(spec.name.clone()));
                        }
                        if cats.len() > MAX_BINS {
                            return Err(GbmError::Config(vec![format!(
                                "feature `{}` has {} categories (limit {MAX_BINS})",
                                spec.name,
                                cats.len()
                            )]));
                        }
                        FeatureBins::Categorical { categories: cats }
                    }
                };
                Ok(BinnedFeature {
                    name: spec.name.clone(),
                    bins,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { features })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn bin_value(&self, feature: usize, value: &Value) -> Result<u8> {
        let f = &self.features[feature];
        Ok(match (&f.bins, value) {
            (_, v) if v.is_missing() => MISSING_BIN,
            (FeatureBins::Numeric { edges }, Value::Num(v)) => (1 + edges.partition_point(|e| e < v)) as u8,
            (FeatureBins::Categorical { categories }, Value::Cat(c)) => match categories.binary_search(c) {
                Ok(i) => (i + 1) as u8,
                Err(_) => MISSING_BIN,
            },
            (FeatureBins::Numeric { .. }, _) => {
                return Err(GbmError::KindMismatch {
                    feature: f.name.clone(),
                    expected: "numeric",
                })
            }
            (FeatureBins::Categorical { .. }, _) => {
                return Err(GbmError::KindMismatch {
                    feature: f.name.clone(),
                    expected: "categorical",
                })
            }
        })
    }

    pub fn transform(&self, rows: &[Vec<Value>]) -> Result<BinnedDataset> {
        check_width(self.n_features(), rows)?;
        let n = rows.len();
        let mut bins = vec![MISSING_BIN; n * self.n_features()];
        for j in 0..self.n_features() {
            for (i, r) in rows.iter().enumerate() {
                bins[j * n + i] = self.bin_value(j, &r[j])?;
            }
        }
        Ok(BinnedDataset {
            n_rows: n,
            bins,
            n_bins: self.features.iter().map(|f| f.bins.n_bins()).collect(),
            categorical: self.features.iter().map(|f| f.bins.is_categorical()).collect(),
        })
    }
}

fn kind_error(spec: &FeatureSpec) -> GbmError {
    GbmError::KindMismatch {
        feature: spec.name.clone(),
        expected: match spec.kind {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Categorical => "categorical",
        },
    }
}

fn check_width(expected: usize, rows: &[Vec<Value>]) -> Result<()> {
    match rows.iter().find(|r| r.len() != expected) {
        Some(r) => Err(GbmError::FeatureCountMismatch { expected, got: r.len() }),
        None => Ok(()),
    }
}

/// Feature-major matrix of bin indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDataset {
    pub n_rows: usize,
    bins: Vec<u8>,
    /// Bins per feature, including the missing bin.
    pub n_bins: Vec<usize>,
    pub categorical: Vec<bool>,
}

impl BinnedDataset {
    /// Builds a dataset directly from bin indices, one column per feature.
    pub fn from_columns(columns: Vec<Vec<u8>>, n_bins: Vec<usize>, categorical: Vec<bool>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.len() != n_bins.len() || columns.len() != categorical.len() {
            return Err(GbmError::FeatureCountMismatch {
                expected: columns.len(),
                got: n_bins.len().min(categorical.len()),
            });
        }
        for (c, &nb) in columns.iter().zip(&n_bins) {
            if c.len() != n_rows || c.iter().any(|&b| b as usize >= nb) || nb > MAX_BINS + 1 {
                return Err(GbmError::Format("column length or bin index out of range".into()));
            }
        }
        Ok(Self {
            n_rows,
            bins: columns.concat(),
            n_bins,
            categorical,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_bins.len()
    }

    pub fn column(&self, feature: usize) -> &[u8] {
        &self.bins[feature * self.n_rows..(feature + 1) * self.n_rows]
    }

    pub fn bin(&self, row: usize, feature: usize) -> u8 {
        self.bins[feature * self.n_rows + row]
    }
}
