use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::MISSING_BIN;
use crate::histogram::{BinStats, Histogram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Categorical splits isolate one category instead of scanning the
    /// gradient-ratio ordering.
    pub one_hot_categoricals: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// Bins `1..=threshold` go left.
    Numeric { threshold: u8, missing_left: bool },
    /// Listed bins (sorted) go left.
    Categorical { left: Vec<u8>, missing_left: bool },
}

impl SplitRule {
    pub fn goes_left(&self, bin: u8) -> bool {
        match self {
            _ if bin == MISSING_BIN => self.missing_left(),
            SplitRule::Numeric { threshold, .. } => bin <= *threshold,
            SplitRule::Categorical { left, .. } => left.binary_search(&bin).is_ok(),
        }
    }

    pub fn missing_left(&self) -> bool {
        match self {
            SplitRule::Numeric { missing_left, .. } | SplitRule::Categorical { missing_left, .. } => *missing_left,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    pub gain: f64,
    pub left: BinStats,
    pub right: BinStats,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Split gain: `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`.
pub fn split_gain(left: &BinStats, right: &BinStats, lambda: f64, gamma: f64) -> f64 {
    let g = left.g + right.g;
    let h = left.h + right.h;
    0.5 * (score(left.g, left.h, lambda) + score(right.g, right.h, lambda) - score(g, h, lambda)) - gamma
}

fn admissible(left: &BinStats, right: &BinStats, p: &SplitParams) -> bool {
    left.count > 0 && right.count > 0 && left.h >= p.min_child_weight && right.h >= p.min_child_weight
}

/// Evaluates one partition of the non-missing bins with missing values sent
/// right, then left. Replaces `best` only on a strictly larger positive gain.
fn consider(
    best: &mut Option<(f64, bool, BinStats, BinStats)>,
    left_nm: &BinStats,
    right_nm: &BinStats,
    missing: &BinStats,
    p: &SplitParams,
) {
    for missing_left in [false, true] {
        let (mut l, mut r) = (*left_nm, *right_nm);
        if missing_left {
            l.add(missing);
        } else {
            r.add(missing);
        }
        if !admissible(&l, &r, p) {
            continue;
        }
        let gain = split_gain(&l, &r, p.lambda, p.gamma);
        if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.0) {
            *best = Some((gain, missing_left, l, r));
        }
    }
}

fn best_numeric(bins: &[BinStats], p: &SplitParams) -> Option<(SplitRule, f64, BinStats, BinStats)> {
    let missing = bins[MISSING_BIN as usize];
    let mut non_missing = BinStats::default();
    bins[1..].iter().for_each(|b| non_missing.add(b));
    let mut best: Option<(u8, (f64, bool, BinStats, BinStats))> = None;
    let mut left = BinStats::default();
    for t in 1..bins.len() {
        left.add(&bins[t]);
        let right = non_missing.sub(&left);
        let mut cand = None;
        consider(&mut cand, &left, &right, &missing, p);
        if let Some(c) = cand {
            if best.as_ref().map_or(true, |b| c.0 > b.1 .0) {
                best = Some((t as u8, c));
            }
        }
    }
    best.map(|(threshold, (gain, missing_left, l, r))| {
        (SplitRule::Numeric { threshold, missing_left }, gain, l, r)
    })
}

fn best_categorical(bins: &[BinStats], p: &SplitParams) -> Option<(SplitRule, f64, BinStats, BinStats)> {
    let missing = bins[MISSING_BIN as usize];
    let mut present: Vec<u8> = (1..bins.len()).filter(|&b| bins[b].count > 0).map(|b| b as u8).collect();
    let mut total = BinStats::default();
    present.iter().for_each(|&b| total.add(&bins[b as usize]));
    let mut best: Option<(Vec<u8>, (f64, bool, BinStats, BinStats))> = None;
    let mut offer = |left_set: Vec<u8>, left: &BinStats| {
        let right = total.sub(left);
        let mut cand = None;
        consider(&mut cand, left, &right, &missing, p);
        if let Some(c) = cand {
            if best.as_ref().map_or(true, |b| c.0 > b.1 .0) {
                best = Some((left_set, c));
            }
        }
    };
    if p.one_hot_categoricals {
        for &b in &present {
            offer(vec![b], &bins[b as usize]);
        }
    } else {
        // Stable sort keeps bin order among equal ratios.
        present.sort_by(|&a, &b| {
            let (a, b) = (&bins[a as usize], &bins[b as usize]);
            (a.g / a.h).total_cmp(&(b.g / b.h))
        });
        let mut left = BinStats::default();
        for k in 1..=present.len() {
            left.add(&bins[present[k - 1] as usize]);
            let mut set = present[..k].to_vec();
            set.sort_unstable();
            offer(set, &left);
        }
    }
    best.map(|(left, (gain, missing_left, l, r))| (SplitRule::Categorical { left, missing_left }, gain, l, r))
}

/// Best split over all features, or `None` when no admissible split has a
/// positive gain after γ. Ties go to the lowest feature, then the first
/// threshold in scan order.
pub fn find_best_split(hist: &Histogram, categorical: &[bool], params: &SplitParams) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> = hist
        .features
        .par_iter()
        .enumerate()
        .map(|(feature, bins)| {
            let found = if categorical[feature] {
                best_categorical(bins, params)
            } else {
                best_numeric(bins, params)
            };
            found.map(|(rule, gain, left, right)| SplitCandidate {
                feature,
                rule,
                gain,
                left,
                right,
            })
        })
        .collect();
    per_feature.into_iter().flatten().fold(None, |best: Option<SplitCandidate>, c| match best {
        Some(b) if b.gain >= c.gain => Some(b),
        _ => Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::BinnedDataset;

    fn params(lambda: f64) -> SplitParams {
        SplitParams {
            lambda,
            gamma: 0.0,
            min_child_weight: 0.0,
            one_hot_categoricals: false,
        }
    }

    #[test]
    fn toy_split_has_gain_two() {
        let d = BinnedDataset::from_columns(vec![vec![1, 1, 2, 2]], vec![3], vec![false]).unwrap();
        let g = [-1.0, -1.0, 1.0, 1.0];
        let h = [1.0; 4];
        let hist = Histogram::build(&d, &g, &h, &[0, 1, 2, 3]);
        let s = find_best_split(&hist, &[false], &params(0.0)).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.rule, SplitRule::Numeric { threshold: 1, missing_left: false });
        assert_eq!(s.gain, 2.0);
    }

    #[test]
    fn single_occupied_bin_has_no_split() {
        let d = BinnedDataset::from_columns(vec![vec![2, 2, 2]], vec![4], vec![false]).unwrap();
        let hist = Histogram::build(&d, &[0.5; 3], &[0.25; 3], &[0, 1, 2]);
        assert_eq!(find_best_split(&hist, &[false], &params(1.0)), None);
    }

    #[test]
    fn gamma_suppresses_weak_splits() {
        let d = BinnedDataset::from_columns(vec![vec![1, 1, 2, 2]], vec![3], vec![false]).unwrap();
        let hist = Histogram::build(&d, &[-1.0, -1.0, 1.0, 1.0], &[1.0; 4], &[0, 1, 2, 3]);
        let p = SplitParams { gamma: 2.0, ..params(0.0) };
        assert_eq!(find_best_split(&hist, &[false], &p), None);
    }

    #[test]
    fn min_child_weight_enforced() {
        let d = BinnedDataset::from_columns(vec![vec![1, 2, 2, 2]], vec![3], vec![false]).unwrap();
        let hist = Histogram::build(&d, &[-1.0, 1.0, 1.0, 1.0], &[0.25; 4], &[0, 1, 2, 3]);
        let p = SplitParams {
            min_child_weight: 0.5,
            ..params(0.0)
        };
        assert_eq!(find_best_split(&hist, &[false], &p), None);
    }

    #[test]
    fn missing_direction_is_learned() {
        // Missing rows behave like the high bin; they should follow it right.
        let d = BinnedDataset::from_columns(vec![vec![1, 1, 2, 2, 0, 0]], vec![3], vec![false]).unwrap();
        let g = [-1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
        let hist = Histogram::build(&d, &g, &[1.0; 6], &[0, 1, 2, 3, 4, 5]);
        let s = find_best_split(&hist, &[false], &params(0.0)).unwrap();
        assert_eq!(s.rule, SplitRule::Numeric { threshold: 1, missing_left: false });
        let g2 = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let hist = Histogram::build(&d, &g2, &[1.0; 6], &[0, 1, 2, 3, 4, 5]);
        let s = find_best_split(&hist, &[false], &params(0.0)).unwrap();
        assert!(s.rule.missing_left());
    }

    #[test]
    fn categorical_groups_by_gradient_ratio() {
        // Categories 1 and 3 pull down, 2 and 4 pull up.
        let d = BinnedDataset::from_columns(vec![vec![1, 2, 3, 4, 1, 3]], vec![5], vec![true]).unwrap();
        let g = [-1.0, 1.0, -1.0, 1.0, -1.0, -1.0];
        let hist = Histogram::build(&d, &g, &[1.0; 6], &[0, 1, 2, 3, 4, 5]);
        let s = find_best_split(&hist, &[true], &params(0.0)).unwrap();
        assert_eq!(s.rule, SplitRule::Categorical { left: vec![1, 3], missing_left: false });
        assert!(s.rule.goes_left(3) && !s.rule.goes_left(4) && !s.rule.goes_left(0));
    }

    #[test]
    fn lowest_feature_wins_ties() {
        let col = vec![1, 1, 2, 2];
        let d = BinnedDataset::from_columns(vec![col.clone(), col.clone(), col], vec![3; 3], vec![false; 3]).unwrap();
        let hist = Histogram::build(&d, &[-1.0, -1.0, 1.0, 1.0], &[1.0; 4], &[0, 1, 2, 3]);
        assert_eq!(find_best_split(&hist, &[false; 3], &params(1.0)).unwrap().feature, 0);
    }
}
