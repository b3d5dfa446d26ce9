use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when any of the three metrics had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

/// One-vs-rest per-class metrics with macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classes: Vec<String>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub n: usize,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize], classes: &[String]) -> Result<EvaluationReport> {
    if truth.len() != predicted.len() {
        return Err(Error::Invalid(format!(
            "{} truth labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::LabelOutsideSchema {
                task: "evaluation".into(),
                label: format!("index {} of {k} classes", t.max(p)),
            });
        }
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
            let (precision, zp) = ratio(tp, predicted_c);
            let (recall, zr) = ratio(tp, support);
            ClassMetrics {
                class: classes[c].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                zero_division: zp || zr || precision + recall == 0.0,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(EvaluationReport {
        classes: classes.to_vec(),
        accuracy: ratio(correct, truth.len()).0,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        n: truth.len(),
        confusion,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single fold.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub class: String,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

/// Per-fold reports with mean ± std of every per-class and macro metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub folds: Vec<EvaluationReport>,
    pub per_class: Vec<ClassAggregate>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
}

pub fn aggregate(folds: Vec<EvaluationReport>) -> Result<AggregateReport> {
    let first = folds.first().ok_or_else(|| Error::Invalid("no folds to aggregate".into()))?;
    if folds.iter().any(|f| f.classes != first.classes) {
        return Err(Error::Invalid("folds disagree on the class list".into()));
    }
    let over = |f: &dyn Fn(&EvaluationReport) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
    let per_class = first
        .classes
        .iter()
        .enumerate()
        .map(|(c, class)| ClassAggregate {
            class: class.clone(),
            precision: over(&|r| r.per_class[c].precision),
            recall: over(&|r| r.per_class[c].recall),
            f1: over(&|r| r.per_class[c].f1),
        })
        .collect();
    Ok(AggregateReport {
        per_class,
        accuracy: over(&|r| r.accuracy),
        macro_f1: over(&|r| r.macro_f1),
        folds,
    })
}

/// Flat per-class rows: `model,split,class,precision,recall,f1,support`.
pub fn metrics_csv_rows(model: &str, split: &str, report: &EvaluationReport) -> Vec<[String; 7]> {
    report
        .per_class
        .iter()
        .map(|m| {
            [
                model.to_string(),
                split.to_string(),
                m.class.clone(),
                format!("{:.6}", m.precision),
                format!("{:.6}", m.recall),
                format!("{:.6}", m.f1),
                m.support.to_string(),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let r = compute_metrics(&y, &y, &names(3)).unwrap();
        assert!(r.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
    }

    #[test]
    fn two_by_two_hand_count() {
        // confusion [[2,1],[1,2]]
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 1, 0, 1, 1];
        let r = compute_metrics(&truth, &pred, &names(2)).unwrap();
        assert_eq!(r.confusion, vec![vec![2, 1], vec![1, 2]]);
        let m = &r.per_class[0];
        assert_eq!((m.precision, m.recall), (2.0 / 3.0, 2.0 / 3.0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_flagged() {
        let r = compute_metrics(&[0, 0], &[0, 0], &names(2)).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(r.per_class[1].zero_division);
        assert!(!r.per_class[0].zero_division);
    }

    #[test]
    fn label_outside_classes() {
        assert!(compute_metrics(&[3], &[0], &names(2)).is_err());
    }

    #[test]
    fn harmonic_mean_matches_reported_heal_row() {
        let f1 = f1_score(0.68, 0.91);
        assert!((f1 - 0.778).abs() < 5e-4);
        assert_eq!((f1 * 100.0).round() / 100.0, 0.78);
    }

    #[test]
    fn aggregate_mean_is_fold_mean() {
        let a = compute_metrics(&[0, 1, 1], &[0, 1, 0], &names(2)).unwrap();
        let b = compute_metrics(&[0, 1, 1], &[1, 1, 1], &names(2)).unwrap();
        let agg = aggregate(vec![a.clone(), b.clone()]).unwrap();
        assert!((agg.macro_f1.mean - (a.macro_f1 + b.macro_f1) / 2.0).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[1.0, 3.0]).std, 2f64.sqrt());
    }
}
