use std::collections::BTreeMap;

use proptest::prelude::*;
use woundflow_core::augment::*;
use woundflow_core::vision::{LabeledSample, Task, WoundLabels};
use woundflow_core::Tensor64;

fn asymmetric(c: usize, h: usize, w: usize) -> Tensor64 {
    Tensor64::from_fn(&[c, h, w], |i| (i * i % 97) as f64 + i as f64 / 1000.0)
}

fn r(x: &Tensor64, k: u8) -> Tensor64 {
    if k % 4 == 0 {
        x.clone()
    } else {
        rotate90k(x, k % 4).unwrap()
    }
}

fn h(x: &Tensor64) -> Tensor64 {
    flip(x, FlipAxis::Horizontal).unwrap()
}

fn v(x: &Tensor64) -> Tensor64 {
    flip(x, FlipAxis::Vertical).unwrap()
}

/// Group element `r^k` followed by `h^f`.
fn element(x: &Tensor64, k: u8, f: bool) -> Tensor64 {
    let y = r(x, k);
    if f {
        h(&y)
    } else {
        y
    }
}

#[test]
fn dihedral_group_laws() {
    for (hh, ww) in [(4, 4), (3, 5)] {
        let x = asymmetric(2, hh, ww);
        // r^4 = e, r^1∘r^3 = e, h∘h = e, v∘v = e
        assert_eq!(r(&r(&r(&r(&x, 1), 1), 1), 1), x);
        assert_eq!(r(&r(&x, 1), 3), x);
        assert_eq!(h(&h(&x)), x);
        assert_eq!(v(&v(&x)), x);
        // r^2 = h∘v = v∘h
        assert_eq!(r(&x, 2), h(&v(&x)));
        assert_eq!(r(&x, 2), v(&h(&x)));
        // h∘r∘h = r^-1
        assert_eq!(h(&r(&h(&x), 1)), r(&x, 3));
        // v = h∘r^2
        assert_eq!(v(&x), h(&r(&x, 2)));
    }
}

#[test]
fn composition_table_closes_on_eight_elements() {
    let x = asymmetric(1, 4, 4);
    let elems: Vec<(u8, bool)> = (0..4).flat_map(|k| [(k, false), (k, true)]).collect();
    let images: Vec<Tensor64> = elems.iter().map(|&(k, f)| element(&x, k, f)).collect();
    for (i, a) in images.iter().enumerate() {
        for b in &images[i + 1..] {
            assert_ne!(a, b);
        }
    }
    for &(k1, f1) in &elems {
        for &(k2, f2) in &elems {
            // Apply (k1,f1) then (k2,f2). Closed form: r^k2 h^f2 applied after
            // r^k1 h^f1 equals r^(k1 ± k2) h^(f1 xor f2) via h r = r^-1 h.
            let composed = element(&element(&x, k1, f1), k2, f2);
            let k = if f1 { (k1 + 4 - k2) % 4 } else { (k1 + k2) % 4 };
            let expected = element(&x, k, f1 ^ f2);
            assert_eq!(composed, expected, "({k1},{f1}) then ({k2},{f2})");
        }
    }
}

#[test]
fn symmetric_image_fixed_by_its_flip() {
    let x = Tensor64::from_f64(&[1, 2, 3], &[1., 2., 1., 5., 7., 5.]).unwrap();
    assert_eq!(h(&x), x);
}

fn dataset(counts: &[(usize, usize)]) -> Vec<LabeledSample<f64>> {
    let mut out = Vec::new();
    for &(class, n) in counts {
        for i in 0..n {
            let mut labels = WoundLabels::default();
            labels.set(Task::UlcerType, Some(class));
            labels.set(Task::Stage, Some(i % 5));
            out.push(LabeledSample {
                id: format!("c{class}-{i}"),
                input: Tensor64::from_fn(&[3, 8, 8], |k| ((k + 13 * i + 7 * class) % 19) as f64 / 19.0),
                labels,
            });
        }
    }
    out
}

fn policy(seed: u64) -> AugmentPolicy {
    AugmentPolicy {
        target_size: [8, 8],
        seed,
        ..AugmentPolicy::default()
    }
}

fn class_counts(samples: &[LabeledSample<f64>]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.labels.get(Task::UlcerType).unwrap()).or_default() += 1;
    }
    m
}

#[test]
fn balanced_dataset_unchanged() {
    let d = dataset(&[(0, 3), (1, 3), (2, 3)]);
    let out = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(1)).unwrap();
    assert_eq!(out.len(), d.len());
    for (a, b) in out.iter().zip(&d) {
        assert_eq!((&a.id, &a.input), (&b.id, &b.input));
    }
}

#[test]
fn minority_of_one_augmented_to_four() {
    let d = dataset(&[(0, 4), (1, 1)]);
    let out = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(1)).unwrap();
    assert_eq!(class_counts(&out), BTreeMap::from([(0, 4), (1, 4)]));
    // The three new records are distinct grid transforms of the single image.
    let new: Vec<_> = out[5..].iter().map(|s| &s.input).collect();
    assert_eq!(new.len(), 3);
    assert!(new[0] != new[1] && new[1] != new[2] && new[0] != new[2]);
    assert!(new.iter().all(|x| **x != d[4].input));
}

#[test]
fn labels_and_dims_preserved() {
    let d = dataset(&[(0, 20), (1, 2), (2, 1)]);
    let out = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(5)).unwrap();
    for s in &out[d.len()..] {
        let base = s.id.split('#').next().unwrap();
        let orig = d.iter().find(|o| o.id == base).unwrap();
        assert_eq!(s.labels, orig.labels);
        assert_eq!(s.input.shape(), &[3, 8, 8]);
    }
    // No (sample, transform) repeats while the 7-element grid lasts.
    let mut ids: Vec<&str> = out.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), out.len());
}

#[test]
fn deterministic_under_seed() {
    let d = dataset(&[(0, 30), (1, 2)]);
    let a = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(9)).unwrap();
    let b = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(9)).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.id == y.id && x.input == y.input));
    let c = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(10)).unwrap();
    assert!(a.iter().zip(&c).any(|(x, y)| x.input != y.input));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn rebalanced_spread_bound(counts in prop::collection::vec(1usize..12, 2..5)) {
        let spec: Vec<(usize, usize)> = counts.iter().copied().enumerate().collect();
        let d = dataset(&spec);
        let out = rebalance(&d, |s| s.labels.get(Task::UlcerType), &policy(3)).unwrap();
        let c = class_counts(&out);
        let max = *c.values().max().unwrap() as f64;
        let min = *c.values().min().unwrap() as f64;
        let min_orig = *counts.iter().min().unwrap() as f64;
        prop_assert!(max / min <= 1.0 + 1.0 / min_orig);
    }
}
