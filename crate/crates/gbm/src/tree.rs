use serde::{Deserialize, Serialize};

use crate::binning::BinnedDataset;
use crate::hexfloat;
use crate::histogram::{BinStats, Histogram};
use crate::split::{find_best_split, SplitCandidate, SplitParams, SplitRule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_leaves: usize,
    pub max_depth: usize,
    pub split: SplitParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        #[serde(with = "hexfloat::scalar")]
        value: f64,
    },
    Split {
        feature: usize,
        rule: SplitRule,
        /// Index of the right child; the left child follows immediately (pre-order).
        #[serde(skip)]
        right: usize,
    },
}

/// Binary tree stored in pre-order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Node>", into = "Vec<Node>")]
pub struct Tree {
    nodes: Vec<Node>,
}

impl From<Tree> for Vec<Node> {
    fn from(t: Tree) -> Self {
        t.nodes
    }
}

impl From<Vec<Node>> for Tree {
    /// Recomputes right-child links. Malformed input is caught by [`Tree::validate`].
    fn from(mut nodes: Vec<Node>) -> Self {
        fn link(nodes: &mut [Node], i: usize) -> usize {
            if i >= nodes.len() {
                return i;
            }
            if let Node::Split { .. } = nodes[i] {
                let right = link(nodes, i + 1);
                if let Node::Split { right: r, .. } = &mut nodes[i] {
                    *r = right;
                }
                link(nodes, right)
            } else {
                i + 1
            }
        }
        link(&mut nodes, 0);
        Tree { nodes }
    }
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Checks that the pre-order list encodes exactly one complete binary tree
    /// with finite leaves and in-range features.
    pub fn validate(&self, n_features: usize) -> Result<(), String> {
        fn walk(nodes: &[Node], i: usize, n_features: usize) -> Result<usize, String> {
            match nodes.get(i) {
                None => Err("truncated tree".into()),
                Some(Node::Leaf { value }) if !value.is_finite() => Err("non-finite leaf value".into()),
                Some(Node::Leaf { .. }) => Ok(i + 1),
                Some(Node::Split { feature, right, .. }) => {
                    if *feature >= n_features {
                        return Err(format!("split feature {feature} out of range"));
                    }
                    let after_left = walk(nodes, i + 1, n_features)?;
                    if after_left != *right {
                        return Err("inconsistent child layout".into());
                    }
                    walk(nodes, after_left, n_features)
                }
            }
        }
        match walk(&self.nodes, 0, n_features)? {
            end if end == self.nodes.len() => Ok(()),
            _ => Err("trailing nodes after tree".into()),
        }
    }

    /// Leaf value reached by `row`.
    pub fn predict_row(&self, data: &BinnedDataset, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, rule, right } => {
                    i = if rule.goes_left(data.bin(row, *feature)) { i + 1 } else { *right };
                }
            }
        }
    }
}

enum Grown {
    Leaf(f64),
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
    },
}

struct OpenLeaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Histogram,
    best: Option<SplitCandidate>,
}

pub fn leaf_value(totals: &BinStats, lambda: f64) -> f64 {
    let v = -totals.g / (totals.h + lambda);
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Leaf-wise growth: repeatedly splits the open leaf with the largest gain
/// (earliest-created leaf on ties) until `max_leaves`, `max_depth`, or no
/// positive gain remains. Returns the tree and the row set of every leaf.
pub fn grow_tree(data: &BinnedDataset, g: &[f64], h: &[f64], rows: Vec<u32>, params: &TreeParams) -> (Tree, Vec<Vec<u32>>) {
    let lambda = params.split.lambda;
    let search = |hist: &Histogram, depth: usize| {
        if depth >= params.max_depth {
            None
        } else {
            find_best_split(hist, &data.categorical, &params.split)
        }
    };
    let hist = Histogram::build(data, g, h, &rows);
    let totals = hist.totals();
    let mut arena = vec![Grown::Leaf(leaf_value(&totals, lambda))];
    let mut open = vec![OpenLeaf {
        node: 0,
        depth: 0,
        best: search(&hist, 0),
        rows,
        hist,
    }];
    let mut leaves = 1;

    while leaves < params.max_leaves.max(1) {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.as_ref().map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, gain)| match acc {
                Some((_, best)) if best >= gain => acc,
                _ => Some((i, gain)),
            });
        let Some((idx, _)) = pick else { break };
        let leaf = open.remove(idx);
        let split = leaf.best.expect("picked leaves have a split");
        let col = data.column(split.feature);
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.iter().partition(|&&r| split.rule.goes_left(col[r as usize]));
        let (small_rows, left_is_small) = if left_rows.len() <= right_rows.len() {
            (&left_rows, true)
        } else {
            (&right_rows, false)
        };
        let small = Histogram::build(data, g, h, small_rows);
        let large = leaf.hist.subtract(&small);
        let (left_hist, right_hist) = if left_is_small { (small, large) } else { (large, small) };

        let left_node = arena.len();
        arena.push(Grown::Leaf(leaf_value(&split.left, lambda)));
        arena.push(Grown::Leaf(leaf_value(&split.right, lambda)));
        arena[leaf.node] = Grown::Split {
            feature: split.feature,
            rule: split.rule.clone(),
            left: left_node,
            right: left_node + 1,
        };
        let depth = leaf.depth + 1;
        for (node, rows, hist) in [(left_node, left_rows, left_hist), (left_node + 1, right_rows, right_hist)] {
            open.push(OpenLeaf {
                node,
                depth,
                best: search(&hist, depth),
                rows,
                hist,
            });
        }
        leaves += 1;
    }
    let mut closed: Vec<(usize, Vec<u32>)> = open.into_iter().map(|l| (l.node, l.rows)).collect();

    let mut nodes = Vec::with_capacity(arena.len());
    let mut leaf_rows = Vec::with_capacity(leaves);
    fn emit(arena: &[Grown], i: usize, nodes: &mut Vec<Node>, order: &mut Vec<usize>) {
        match &arena[i] {
            Grown::Leaf(v) => {
                order.push(i);
                nodes.push(Node::Leaf { value: *v });
            }
            Grown::Split {
                feature,
                rule,
                left,
                right,
            } => {
                let at = nodes.len();
                nodes.push(Node::Split {
                    feature: *feature,
                    rule: rule.clone(),
                    right: 0,
                });
                emit(arena, *left, nodes, order);
                let r = nodes.len();
                if let Node::Split { right: slot, .. } = &mut nodes[at] {
                    *slot = r;
                }
                emit(arena, *right, nodes, order);
            }
        }
    }
    let mut order = Vec::new();
    emit(&arena, 0, &mut nodes, &mut order);
    for i in order {
        let pos = closed.iter().position(|c| c.0 == i).expect("every leaf is closed");
        leaf_rows.push(std::mem::take(&mut closed[pos].1));
    }
    (Tree { nodes }, leaf_rows)
}
