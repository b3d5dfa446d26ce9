use rayon::prelude::*;

use crate::binning::BinnedDataset;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStats {
    pub g: f64,
    pub h: f64,
    pub count: u32,
}

impl BinStats {
    pub fn add(&mut self, other: &BinStats) {
        self.g += other.g;
        self.h += other.h;
        self.count += other.count;
    }

    pub fn sub(&self, other: &BinStats) -> BinStats {
        BinStats {
            g: self.g - other.g,
            h: self.h - other.h,
            count: self.count - other.count,
        }
    }
}

/// Per-feature gradient statistics for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub features: Vec<Vec<BinStats>>,
}

impl Histogram {
    /// Sums `(g, h, count)` per bin over `rows`, in row order, in parallel over features.
    pub fn build(data: &BinnedDataset, g: &[f64], h: &[f64], rows: &[u32]) -> Self {
        let features = (0..data.n_features())
            .into_par_iter()
            .map(|j| {
                let col = data.column(j);
                let mut bins = vec![BinStats::default(); data.n_bins[j]];
                for &r in rows {
                    let r = r as usize;
                    let b = &mut bins[col[r] as usize];
                    b.g += g[r];
                    b.h += h[r];
                    b.count += 1;
                }
                bins
            })
            .collect();
        Self { features }
    }

    /// Sibling histogram: `self - child`, bin-wise.
    pub fn subtract(&self, child: &Histogram) -> Histogram {
        Histogram {
            features: self
                .features
                .iter()
                .zip(&child.features)
                .map(|(p, c)| p.iter().zip(c).map(|(a, b)| a.sub(b)).collect())
                .collect(),
        }
    }

    /// Node totals taken from the first feature.
    pub fn totals(&self) -> BinStats {
        let mut t = BinStats::default();
        for b in self.features.first().into_iter().flatten() {
            t.add(b);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> BinnedDataset {
        BinnedDataset::from_columns(
            vec![vec![0, 1, 2, 1, 2, 2], vec![1, 1, 1, 2, 2, 0]],
            vec![3, 3],
            vec![false, true],
        )
        .unwrap()
    }

    const G: [f64; 6] = [0.5, -1.0, 0.25, 2.0, -0.75, 1.5];
    const H: [f64; 6] = [0.25, 0.125, 0.25, 0.0625, 0.25, 0.125];

    #[test]
    fn hand_summed_histogram() {
        let hist = Histogram::build(&data(), &G, &H, &[0, 1, 2, 3, 4, 5]);
        let f0: Vec<(f64, f64, u32)> = hist.features[0].iter().map(|b| (b.g, b.h, b.count)).collect();
        assert_eq!(f0, vec![(0.5, 0.25, 1), (1.0, 0.1875, 2), (1.0, 0.625, 3)]);
        let f1: Vec<(f64, f64, u32)> = hist.features[1].iter().map(|b| (b.g, b.h, b.count)).collect();
        assert_eq!(f1, vec![(1.5, 0.125, 1), (-0.25, 0.625, 3), (1.25, 0.3125, 2)]);
    }

    #[test]
    fn single_row_fills_one_bin_per_feature() {
        let hist = Histogram::build(&data(), &G, &H, &[3]);
        for f in &hist.features {
            assert_eq!(f.iter().filter(|b| b.count > 0).count(), 1);
        }
    }

    #[test]
    fn conservation_and_subtraction() {
        let d = data();
        let parent = Histogram::build(&d, &G, &H, &[0, 1, 2, 3, 4, 5]);
        let left = Histogram::build(&d, &G, &H, &[0, 2, 5]);
        let right = Histogram::build(&d, &G, &H, &[1, 3, 4]);
        let sibling = parent.subtract(&left);
        for (s, r) in sibling.features.iter().zip(&right.features) {
            for (a, b) in s.iter().zip(r) {
                assert_eq!(a.count, b.count);
                assert!((a.g - b.g).abs() < 1e-12 && (a.h - b.h).abs() < 1e-12);
            }
        }
        let total = parent.totals();
        for f in &parent.features {
            let mut t = BinStats::default();
            f.iter().for_each(|b| t.add(b));
            assert_eq!(t, total);
        }
        assert_eq!(total.g, G.iter().sum::<f64>());
    }
}
