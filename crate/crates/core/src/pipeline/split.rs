use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer counts proportional to `fractions` summing to `total`: floors
/// first, then the remaining units go to the largest fractional parts (ties to
/// the earlier part).
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    // Quotas and remainders are compared on a 1e-9 grid so products like
    // 0.7·15 = 10.499999999999998 tie with 0.1·15 = 1.5 as they do exactly.
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let remainder = |i: usize| ((quotas[i] - counts[i] as f64) * 1e9).round() as i64;
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(remainder(i)), i));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Train, validation, test.
    pub fractions: [f64; 3],
    /// Wound variable name or `outcome`.
    pub stratify_on: String,
    pub folds: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.70, 0.10, 0.20],
            stratify_on: "ulcer_type".into(),
            folds: 5,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut e = Vec::new();
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            e.push(format!("split.fractions must be in [0, 1] and sum to 1, got {:?}", self.fractions));
        }
        if self.folds < 2 {
            e.push("split.folds must be at least 2".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }
}

fn group_by_stratum(strata: &[Option<usize>]) -> BTreeMap<Option<usize>, Vec<usize>> {
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(*s).or_default().push(i);
    }
    groups
}

/// Partition of indices into `(train, val, test)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// False when a stratum was too small and the split fell back to unstratified.
    pub stratified: bool,
}

/// Stratified three-way split. Each stratum is shuffled with the seed and cut
/// by largest-remainder counts. Falls back to an unstratified split when any
/// stratum has fewer than 3 members. Each part is returned in ascending order.
pub fn stratified_split(strata: &[Option<usize>], fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(vec![format!("split fractions sum to {sum}, expected 1")]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = group_by_stratum(strata);
    let stratified = groups.values().all(|g| g.len() >= 3);
    if !stratified {
        warn!("a stratum has fewer than 3 samples; using an unstratified split");
        groups = BTreeMap::from([(None, (0..strata.len()).collect())]);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &fractions);
        let mut start = 0;
        for (part, &c) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitIndices {
        train,
        val,
        test,
        stratified,
    })
}

/// Stratified k-fold: each stratum is shuffled and dealt round-robin, with the
/// dealing offset carried across strata so fold sizes stay balanced overall.
/// Returns `(train, test)` index pairs, each sorted.
pub fn kfold(strata: &[Option<usize>], folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::Config(vec!["folds must be at least 2".into()]));
    }
    if strata.len() < folds {
        return Err(Error::Invalid(format!("{} samples cannot fill {folds} folds", strata.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; strata.len()];
    let mut offset = 0;
    for members in group_by_stratum(strata).values_mut() {
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = (offset + k) % folds;
        }
        offset = (offset + members.len()) % folds;
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..strata.len()).partition(|&i| assignment[i] == f);
            (train, test)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_examples() {
        assert_eq!(largest_remainder(60, &[0.7, 0.1, 0.2]), vec![42, 6, 12]);
        assert_eq!(largest_remainder(40, &[0.7, 0.1, 0.2]), vec![28, 4, 8]);
        assert_eq!(largest_remainder(10, &[0.7, 0.1, 0.2]), vec![7, 1, 2]);
        assert_eq!(largest_remainder(7, &[0.7, 0.1, 0.2]), vec![5, 1, 1]);
        assert_eq!(largest_remainder(3, &[0.5, 0.5]), vec![2, 1]);
        assert_eq!(largest_remainder(15, &[0.7, 0.1, 0.2]), vec![11, 1, 3]);
        assert_eq!(largest_remainder(5, &[0.7, 0.1, 0.2]), vec![4, 0, 1]);
    }

    #[test]
    fn sixty_forty_split() {
        let strata: Vec<Option<usize>> = (0..100).map(|i| Some(usize::from(i >= 60))).collect();
        let s = stratified_split(&strata, [0.7, 0.1, 0.2], 1).unwrap();
        let count = |part: &[usize], c: usize| part.iter().filter(|&&i| strata[i] == Some(c)).count();
        assert_eq!((count(&s.train, 0), count(&s.train, 1)), (42, 28));
        assert_eq!((count(&s.val, 0), count(&s.val, 1)), (6, 4));
        assert_eq!((count(&s.test, 0), count(&s.test, 1)), (12, 8));
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(stratified_split(&[Some(0); 10], [0.7, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn tiny_stratum_falls_back() {
        let mut strata = vec![Some(0); 20];
        strata[3] = Some(1);
        let s = stratified_split(&strata, [0.7, 0.1, 0.2], 1).unwrap();
        assert!(!s.stratified);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 2, 4));
    }

    #[test]
    fn kfold_balanced_classes() {
        let strata: Vec<Option<usize>> = (0..50).map(|i| Some(i % 2)).collect();
        for (_, test) in kfold(&strata, 5, 3).unwrap() {
            let ones = test.iter().filter(|&&i| strata[i] == Some(1)).count();
            assert_eq!((test.len() - ones, ones), (5, 5));
        }
    }

    #[test]
    fn kfold_too_few_samples() {
        assert!(kfold(&[Some(0); 4], 5, 1).is_err());
    }
}
