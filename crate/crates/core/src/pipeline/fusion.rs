use serde::{Deserialize, Serialize};
use woundflow_gbm::{FeatureKind, FeatureSpec, Value};

use crate::error::{Error, Result};
use crate::vision::{LabelSchema, Task, WoundVariablePrediction};

use super::records::{ClinicianSchema, Outcome, WoundRecord};

/// Layout version of fused rows; bump when column order or encoding changes.
pub const FUSION_VERSION: u32 = 1;

/// How the five wound-variable predictions enter the stage-2 features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// One column per variable: the predicted class.
    #[default]
    Argmax,
    /// The full class distribution; binary variables contribute P(yes) only.
    Probvec,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(FusionMode::Argmax),
            "probvec" => Ok(FusionMode::Probvec),
            _ => Err(Error::Config(vec![format!("unknown fusion mode `{s}` (expected argmax or probvec)")])),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Argmax => "argmax",
            FusionMode::Probvec => "probvec",
        })
    }
}

/// One stage-2 input row: wound-variable columns followed by the clinician columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRow {
    pub sample_id: String,
    pub features: Vec<Value>,
    pub outcome: Option<Outcome>,
}

/// Column specs of fused rows in order.
pub fn fused_feature_specs(mode: FusionMode, schema: &LabelSchema, clinician: &ClinicianSchema) -> Vec<FeatureSpec> {
    let mut specs = Vec::new();
    for task in Task::ALL {
        match mode {
            FusionMode::Argmax => specs.push(FeatureSpec {
                name: task.name().to_string(),
                kind: if task.is_binary() {
                    FeatureKind::Numeric
                } else {
                    FeatureKind::Categorical
                },
            }),
            FusionMode::Probvec if task.is_binary() => specs.push(FeatureSpec {
                name: format!("{task}.p_yes"),
                kind: FeatureKind::Numeric,
            }),
            FusionMode::Probvec => specs.extend(schema.classes(task).into_iter().map(|c| FeatureSpec {
                name: format!("{task}.p[{c}]"),
                kind: FeatureKind::Numeric,
            })),
        }
    }
    specs.extend(clinician.feature_specs());
    specs
}

fn wound_columns(dists: &[Option<Vec<f64>>], mode: FusionMode, schema: &LabelSchema) -> Vec<Value> {
    let mut out = Vec::new();
    for task in Task::ALL {
        let dist = dists[task.index()].as_deref();
        match mode {
            FusionMode::Argmax => out.push(match dist {
                None => Value::Missing,
                Some(d) => {
                    let k = crate::vision::argmax(d);
                    if task.is_binary() {
                        Value::Num(k as f64)
                    } else {
                        Value::Cat(schema.label(task, k).to_string())
                    }
                }
            }),
            FusionMode::Probvec if task.is_binary() => out.push(dist.map_or(Value::Missing, |d| Value::Num(d[1]))),
            FusionMode::Probvec => {
                let k = schema.class_count(task);
                match dist {
                    None => out.extend(std::iter::repeat_n(Value::Missing, k)),
                    Some(d) => out.extend(d.iter().map(|&p| Value::Num(p))),
                }
            }
        }
    }
    out
}

fn check_prediction(pred: &WoundVariablePrediction, schema: &LabelSchema) -> Result<()> {
    let consistent = pred.variables.len() == Task::ALL.len()
        && Task::ALL.iter().zip(&pred.variables).all(|(&t, v)| {
            v.task == t && v.probabilities.len() == schema.class_count(t) && schema.label(t, v.index) == v.label
        });
    if consistent {
        Ok(())
    } else {
        Err(Error::SchemaMismatch {
            expected: schema.hash(),
            found: "predictions made under a different label schema".into(),
        })
    }
}

fn check_clinician(record: &WoundRecord, clinician: &ClinicianSchema) -> Result<()> {
    if record.clinician.len() != clinician.len() {
        return Err(Error::Invalid(format!(
            "{}: {} clinician values, schema has {}",
            record.sample_id,
            record.clinician.len(),
            clinician.len()
        )));
    }
    Ok(())
}

fn fused(record: &WoundRecord, mut wound: Vec<Value>) -> FusedRow {
    wound.extend(record.clinician.iter().cloned());
    FusedRow {
        sample_id: record.sample_id.clone(),
        features: wound,
        outcome: record.outcome,
    }
}

/// Fuses stage-1 predictions with clinician variables, one prediction per record.
pub fn assemble_fused(
    records: &[WoundRecord],
    predictions: &[WoundVariablePrediction],
    mode: FusionMode,
    schema: &LabelSchema,
    clinician: &ClinicianSchema,
) -> Result<Vec<FusedRow>> {
    if records.len() != predictions.len() {
        return Err(Error::Invalid(format!(
            "{} records but {} predictions",
            records.len(),
            predictions.len()
        )));
    }
    records
        .iter()
        .zip(predictions)
        .map(|(r, p)| {
            check_prediction(p, schema)?;
            check_clinician(r, clinician)?;
            let dists: Vec<Option<Vec<f64>>> = p.variables.iter().map(|v| Some(v.probabilities.clone())).collect();
            Ok(fused(r, wound_columns(&dists, mode, schema)))
        })
        .collect()
}

/// Ablation path: the recorded wound-variable labels replace predictions
/// (one-hot in probvec mode; unlabelled variables become missing).
pub fn assemble_true_labels(
    records: &[WoundRecord],
    mode: FusionMode,
    schema: &LabelSchema,
    clinician: &ClinicianSchema,
) -> Result<Vec<FusedRow>> {
    records
        .iter()
        .map(|r| {
            check_clinician(r, clinician)?;
            let dists: Vec<Option<Vec<f64>>> = Task::ALL
                .iter()
                .map(|&t| {
                    r.labels.get(t).map(|k| {
                        let mut d = vec![0.0; schema.class_count(t)];
                        d[k] = 1.0;
                        d
                    })
                })
                .collect();
            Ok(fused(r, wound_columns(&dists, mode, schema)))
        })
        .collect()
}

/// Clinician columns only, for the tabular baseline.
pub fn clinician_rows(records: &[WoundRecord]) -> Vec<Vec<Value>> {
    records.iter().map(|r| r.clinician.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::{VariablePrediction, WoundLabels};

    fn record(id: &str) -> WoundRecord {
        let clinician = ClinicianSchema::default();
        WoundRecord {
            sample_id: id.into(),
            image_path: format!("{id}.png"),
            labels: WoundLabels([Some(1), Some(2), Some(0), Some(1), None]),
            clinician: (0..clinician.len()).map(|j| Value::Num(j as f64)).collect(),
            outcome: Some(Outcome::Hospitalization),
        }
    }

    fn prediction(schema: &LabelSchema) -> WoundVariablePrediction {
        WoundVariablePrediction {
            variables: Task::ALL
                .iter()
                .map(|&t| {
                    let k = schema.class_count(t);
                    let mut p = vec![0.4 / (k - 1) as f64; k];
                    p[k - 1] = 0.6;
                    VariablePrediction {
                        task: t,
                        index: k - 1,
                        label: schema.label(t, k - 1).to_string(),
                        probabilities: p,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn argmax_width_is_21() {
        let (s, c) = (LabelSchema::default(), ClinicianSchema::default());
        let rows = assemble_fused(&[record("a")], &[prediction(&s)], FusionMode::Argmax, &s, &c).unwrap();
        assert_eq!(rows[0].features.len(), 21);
        assert_eq!(fused_feature_specs(FusionMode::Argmax, &s, &c).len(), 21);
        assert_eq!(rows[0].features[0], Value::Cat("Venous Ulcer".into()));
        assert_eq!(rows[0].features[3], Value::Num(1.0));
    }

    #[test]
    fn probvec_width_is_34() {
        let (s, c) = (LabelSchema::default(), ClinicianSchema::default());
        let rows = assemble_fused(&[record("a")], &[prediction(&s)], FusionMode::Probvec, &s, &c).unwrap();
        assert_eq!(rows[0].features.len(), 34);
        assert_eq!(fused_feature_specs(FusionMode::Probvec, &s, &c).len(), 34);
    }

    #[test]
    fn true_labels_bypass_predictions() {
        let (s, c) = (LabelSchema::default(), ClinicianSchema::default());
        let rows = assemble_true_labels(&[record("a")], FusionMode::Argmax, &s, &c).unwrap();
        let f = &rows[0].features;
        assert_eq!(f[0], Value::Cat("Pressure Ulcer".into()));
        assert_eq!(f[1], Value::Cat("Foot".into()));
        assert_eq!(f[3], Value::Num(1.0));
        assert_eq!(f[4], Value::Missing);
    }

    #[test]
    fn identical_records_identical_rows() {
        let (s, c) = (LabelSchema::default(), ClinicianSchema::default());
        let p = prediction(&s);
        let rows = assemble_fused(&[record("a"), record("a")], &[p.clone(), p], FusionMode::Probvec, &s, &c).unwrap();
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn foreign_schema_rejected() {
        let (s, c) = (LabelSchema::default(), ClinicianSchema::default());
        let mut other = s.clone();
        other.locations.push("Elbow".into());
        let p = prediction(&other);
        assert!(matches!(
            assemble_fused(&[record("a")], &[p], FusionMode::Argmax, &s, &c),
            Err(Error::SchemaMismatch { .. })
        ));
    }
}
