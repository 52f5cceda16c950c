//! Multiclass gradient-boosted regression trees on the softmax loss.
//!
//! Each round fits one depth-limited regression tree per class to the
//! current gradients and Hessians, with leaf values set by a single Newton
//! step `-G / (H + lambda)`. Split search runs over per-feature histograms
//! of at most `max_bins` bins; features with few distinct values get one
//! bin per value, so splits on them are exact.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::tree::{split_point, DecisionTree, TreeNode};
use crate::data::{FeatureMatrix, LabelVector};

#[derive(Debug, Clone, PartialEq)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 regularization on leaf values.
    pub lambda: f64,
    /// Minimum Hessian sum in each child of a split.
    pub min_child_weight: f64,
    pub max_bins: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 3,
            learning_rate: 1.0,
            lambda: 1.0,
            min_child_weight: 1.0,
            max_bins: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTreesModel {
    pub n_classes: usize,
    /// Round-major: tree `r * n_classes + c` adds to class `c`'s score.
    /// Leaf values already include the learning rate.
    pub trees: Vec<DecisionTree>,
}

/// Split thresholds for one feature; bin `b` holds `cuts[b-1] < v <= cuts[b]`.
fn feature_cuts(column: &mut [f64], max_bins: usize) -> Vec<f64> {
    column.sort_unstable_by(f64::total_cmp);
    let mut unique = column.to_vec();
    unique.dedup();
    if unique.len() <= max_bins {
        return unique.windows(2).map(|w| split_point(w[0], w[1])).collect();
    }
    let n = column.len();
    let max = column[n - 1];
    let mut cuts: Vec<f64> = (1..max_bins)
        .map(|k| column[k * n / max_bins])
        .filter(|&v| v < max)
        .collect();
    cuts.dedup();
    cuts
}

struct BinnedData {
    n_rows: usize,
    /// Column-major bin indices.
    bins: Vec<u8>,
    cuts: Vec<Vec<f64>>,
    /// Offset of each feature's block in a histogram.
    offsets: Vec<usize>,
    total_bins: usize,
    /// Features with at least one cut.
    active: Vec<usize>,
}

impl BinnedData {
    fn build(x: ArrayView2<'_, f64>, max_bins: usize) -> Self {
        let (n, l) = x.dim();
        let cuts: Vec<Vec<f64>> = (0..l)
            .into_par_iter()
            .map(|f| feature_cuts(&mut x.column(f).to_vec(), max_bins))
            .collect();
        let mut bins = vec![0u8; n * l];
        bins.par_chunks_mut(n).enumerate().for_each(|(f, col)| {
            for (i, b) in col.iter_mut().enumerate() {
                let v = x[[i, f]];
                *b = cuts[f].partition_point(|&c| c < v) as u8;
            }
        });
        let mut offsets = Vec::with_capacity(l);
        let mut total = 0;
        for c in &cuts {
            offsets.push(total);
            total += c.len() + 1;
        }
        let active = (0..l).filter(|&f| !cuts[f].is_empty()).collect();
        Self {
            n_rows: n,
            bins,
            cuts,
            offsets,
            total_bins: total,
            active,
        }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }
}

struct SplitChoice {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct GrowNode {
    id: usize,
    rows: Vec<usize>,
    grad: f64,
    hess: f64,
    hist: Option<Vec<[f64; 2]>>,
}

struct RegressionGrower<'a> {
    data: &'a BinnedData,
    params: &'a GbtParams,
    grad: &'a [f64],
    hess: &'a [f64],
}

impl RegressionGrower<'_> {
    fn histogram(&self, rows: &[usize]) -> Vec<[f64; 2]> {
        let mut hist = vec![[0.0; 2]; self.data.total_bins];
        for &f in &self.data.active {
            let col = self.data.column(f);
            let block = &mut hist[self.data.offsets[f]..];
            for &i in rows {
                let cell = &mut block[col[i] as usize];
                cell[0] += self.grad[i];
                cell[1] += self.hess[i];
            }
        }
        hist
    }

    fn leaf_score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn best_split(&self, node: &GrowNode, hist: &[[f64; 2]]) -> Option<SplitChoice> {
        let parent = self.leaf_score(node.grad, node.hess);
        let mcw = self.params.min_child_weight;
        let mut best: Option<SplitChoice> = None;
        for &f in &self.data.active {
            let block =
                &hist[self.data.offsets[f]..self.data.offsets[f] + self.data.cuts[f].len() + 1];
            let (mut gl, mut hl) = (0.0, 0.0);
            for (b, cell) in block[..block.len() - 1].iter().enumerate() {
                gl += cell[0];
                hl += cell[1];
                let (gr, hr) = (node.grad - gl, node.hess - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let gain = self.leaf_score(gl, hl) + self.leaf_score(gr, hr) - parent;
                if gain > 0.0 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        bin: b,
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Grows one tree and returns it with the leaf index of every row.
    fn grow(&self, n_rows: usize) -> (DecisionTree, Vec<usize>) {
        let rows: Vec<usize> = (0..n_rows).collect();
        let grad: f64 = self.grad.iter().sum();
        let hess: f64 = self.hess.iter().sum();
        let mut tree = DecisionTree {
            nodes: vec![TreeNode::Leaf(0)],
            leaf_values: Vec::new(),
            leaf_width: 1,
        };
        let mut leaf_of = vec![0; n_rows];
        let hist = (self.params.max_depth > 0).then(|| self.histogram(&rows));
        let mut level = vec![GrowNode {
            id: 0,
            rows,
            grad,
            hess,
            hist,
        }];
        for depth in 0..=self.params.max_depth {
            let mut next = Vec::new();
            for node in level {
                let split = node.hist.as_ref().and_then(|h| self.best_split(&node, h));
                let Some(split) = split else {
                    let leaf = tree.leaf_values.len();
                    let value =
                        -node.grad / (node.hess + self.params.lambda) * self.params.learning_rate;
                    tree.leaf_values.push(value);
                    tree.nodes[node.id] = TreeNode::Leaf(leaf);
                    for &i in &node.rows {
                        leaf_of[i] = leaf;
                    }
                    continue;
                };
                let col = self.data.column(split.feature);
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = node
                    .rows
                    .iter()
                    .partition(|&&i| col[i] as usize <= split.bin);
                let left_id = tree.nodes.len();
                tree.nodes.push(TreeNode::Leaf(0));
                tree.nodes.push(TreeNode::Leaf(0));
                tree.nodes[node.id] = TreeNode::Split {
                    feature: split.feature,
                    threshold: self.data.cuts[split.feature][split.bin],
                    left: left_id,
                    right: left_id + 1,
                };
                let sum = |rows: &[usize]| -> (f64, f64) {
                    rows.iter().fold((0.0, 0.0), |(g, h), &i| {
                        (g + self.grad[i], h + self.hess[i])
                    })
                };
                let (lg, lh) = sum(&left_rows);
                let (rg, rh) = sum(&right_rows);
                let (left_hist, right_hist) = if depth + 1 < self.params.max_depth {
                    let parent = node.hist.expect("split nodes carry a histogram");
                    let small_left = left_rows.len() <= right_rows.len();
                    let small = self.histogram(if small_left { &left_rows } else { &right_rows });
                    let large: Vec<[f64; 2]> = parent
                        .iter()
                        .zip(&small)
                        .map(|(p, s)| [p[0] - s[0], p[1] - s[1]])
                        .collect();
                    if small_left {
                        (Some(small), Some(large))
                    } else {
                        (Some(large), Some(small))
                    }
                } else {
                    (None, None)
                };
                next.push(GrowNode {
                    id: left_id,
                    rows: left_rows,
                    grad: lg,
                    hess: lh,
                    hist: left_hist,
                });
                next.push(GrowNode {
                    id: left_id + 1,
                    rows: right_rows,
                    grad: rg,
                    hess: rh,
                    hist: right_hist,
                });
            }
            level = next;
            if level.is_empty() {
                break;
            }
        }
        (tree, leaf_of)
    }
}

pub(crate) fn fit(
    params: &GbtParams,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> BoostedTreesModel {
    let x = features.values();
    let n = x.nrows();
    let j = labels.n_classes();
    let y = labels.as_slice();
    let data = BinnedData::build(x, params.max_bins);
    let mut scores = Array2::<f64>::zeros((n, j));
    let mut trees = Vec::with_capacity(params.n_rounds * j);

    for _ in 0..params.n_rounds {
        let mut probs = scores.clone();
        super::softmax_rows(&mut probs);
        let round: Vec<(DecisionTree, Vec<usize>)> = (0..j)
            .into_par_iter()
            .map(|c| {
                let p = probs.column(c);
                let grad: Vec<f64> = (0..n)
                    .map(|i| p[i] - f64::from(u8::from(y[i] == c)))
                    .collect();
                let hess: Vec<f64> = (0..n)
                    .map(|i| (2.0 * p[i] * (1.0 - p[i])).max(1e-16))
                    .collect();
                let grower = RegressionGrower {
                    data: &data,
                    params,
                    grad: &grad,
                    hess: &hess,
                };
                grower.grow(n)
            })
            .collect();
        for (c, (tree, leaf_of)) in round.into_iter().enumerate() {
            for (i, &leaf) in leaf_of.iter().enumerate() {
                scores[[i, c]] += tree.leaf_values[leaf];
            }
            trees.push(tree);
        }
    }
    BoostedTreesModel {
        n_classes: j,
        trees,
    }
}

impl BoostedTreesModel {
    pub fn raw_scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, l) = x.dim();
        let j = self.n_classes;
        let x = x.as_standard_layout();
        let rows = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * j];
        out.par_chunks_mut(j)
            .zip(rows.par_chunks(l))
            .for_each(|(acc, row)| {
                for (t, tree) in self.trees.iter().enumerate() {
                    acc[t % j] += tree.leaf_for(row)[0];
                }
            });
        Array2::from_shape_vec((n, j), out).expect("shape")
    }

    pub(crate) fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut scores = self.raw_scores(x);
        super::softmax_rows(&mut scores);
        scores
    }
}
