//! Binary decision trees and the CART classification-tree grower shared by
//! the random forest and extra-trees learners.

use rand::Rng;

use crate::seed::DslRng;

/// Columns with at most this many distinct values are pre-binned so split
/// search can use counting instead of sorting.
const MAX_EXACT_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Index of this leaf's block in `leaf_values`.
    Leaf(usize),
}

/// A tree whose leaves each hold `leaf_width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub leaf_values: Vec<f64>,
    pub leaf_width: usize,
}

impl DecisionTree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
                TreeNode::Leaf(leaf) => return leaf,
            }
        }
    }

    pub fn leaf_for(&self, row: &[f64]) -> &[f64] {
        let leaf = self.leaf_index(row);
        &self.leaf_values[leaf * self.leaf_width..(leaf + 1) * self.leaf_width]
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_values.len() / self.leaf_width.max(1)
    }

    /// Checks child links and leaf references; used when loading archives.
    pub fn is_well_formed(&self, n_features: usize) -> bool {
        if self.leaf_width == 0
            || self.nodes.is_empty()
            || !self.leaf_values.len().is_multiple_of(self.leaf_width)
        {
            return false;
        }
        let n_leaves = self.n_leaves();
        self.nodes.iter().enumerate().all(|(i, node)| match *node {
            TreeNode::Split {
                feature,
                left,
                right,
                threshold,
            } => {
                feature < n_features
                    && !threshold.is_nan()
                    && left > i
                    && right > i
                    && left < self.nodes.len()
                    && right < self.nodes.len()
            }
            TreeNode::Leaf(leaf) => leaf < n_leaves,
        })
    }
}

/// Midpoint between two adjacent distinct values that still separates them.
pub(crate) fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

struct BinnedColumn {
    bins: Vec<u8>,
    values: Vec<f64>,
}

/// Per-column view of the training matrix used during split search.
pub(crate) struct ColumnCache {
    n_rows: usize,
    columns: Vec<Option<BinnedColumn>>,
}

impl ColumnCache {
    pub(crate) fn build(x: &[f64], n_rows: usize, n_cols: usize) -> Self {
        let columns = (0..n_cols)
            .map(|f| {
                let mut values: Vec<f64> = (0..n_rows).map(|i| x[i * n_cols + f]).collect();
                values.sort_unstable_by(f64::total_cmp);
                values.dedup();
                if values.len() > MAX_EXACT_BINS {
                    return None;
                }
                let bins = (0..n_rows)
                    .map(|i| values.partition_point(|&v| v < x[i * n_cols + f]) as u8)
                    .collect();
                Some(BinnedColumn { bins, values })
            })
            .collect();
        Self { n_rows, columns }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowthRule {
    /// Random single threshold per candidate feature instead of the best one.
    pub randomized: bool,
    /// Number of non-constant candidate features examined per node.
    pub max_features: usize,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Sum over both children of `sum(count^2) / size`; larger is a purer split.
fn purity_score(left: &[f64], right: &[f64]) -> f64 {
    let nl: f64 = left.iter().sum();
    let nr: f64 = right.iter().sum();
    let sl: f64 = left.iter().map(|c| c * c).sum();
    let sr: f64 = right.iter().map(|c| c * c).sum();
    sl / nl + sr / nr
}

pub(crate) struct ClassificationGrower<'a> {
    pub x: &'a [f64],
    pub n_cols: usize,
    pub labels: &'a [usize],
    pub n_classes: usize,
    pub cache: &'a ColumnCache,
    pub rule: GrowthRule,
}

impl ClassificationGrower<'_> {
    /// Grows one tree over `samples` (indices may repeat, as in a bootstrap).
    pub(crate) fn grow(&self, mut samples: Vec<usize>, rng: &mut DslRng) -> DecisionTree {
        let j = self.n_classes;
        let mut tree = DecisionTree {
            nodes: vec![TreeNode::Leaf(0)],
            leaf_values: Vec::new(),
            leaf_width: j,
        };
        let mut feature_order: Vec<usize> = (0..self.n_cols).collect();
        let mut hist = vec![0.0; MAX_EXACT_BINS * j];
        let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];

        while let Some((node, start, end, depth)) = stack.pop() {
            let counts = self.class_counts(&samples[start..end]);
            let size = end - start;
            let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
            let depth_capped = self.rule.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || depth_capped || size < self.rule.min_samples_split {
                None
            } else {
                self.find_split(
                    &samples[start..end],
                    &counts,
                    &mut feature_order,
                    &mut hist,
                    rng,
                )
            };
            match split {
                None => {
                    let leaf = tree.leaf_values.len() / j;
                    tree.leaf_values
                        .extend(counts.iter().map(|c| c / size as f64));
                    tree.nodes[node] = TreeNode::Leaf(leaf);
                }
                Some(c) => {
                    let mid =
                        start + self.partition(&mut samples[start..end], c.feature, c.threshold);
                    let left = tree.nodes.len();
                    tree.nodes.push(TreeNode::Leaf(0));
                    tree.nodes.push(TreeNode::Leaf(0));
                    tree.nodes[node] = TreeNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, mid, end, depth + 1));
                    stack.push((left, start, mid, depth + 1));
                }
            }
        }
        tree
    }

    fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.n_cols + f]
    }

    fn class_counts(&self, samples: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in samples {
            counts[self.labels[i]] += 1.0;
        }
        counts
    }

    fn partition(&self, samples: &mut [usize], f: usize, threshold: f64) -> usize {
        let mut mid = 0;
        for k in 0..samples.len() {
            if self.value(samples[k], f) <= threshold {
                samples.swap(k, mid);
                mid += 1;
            }
        }
        mid
    }

    fn find_split(
        &self,
        samples: &[usize],
        counts: &[f64],
        feature_order: &mut [usize],
        hist: &mut [f64],
        rng: &mut DslRng,
    ) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        let mut examined = 0;
        let l = feature_order.len();
        // partial Fisher-Yates: features are drawn without replacement and
        // constant ones do not count toward the candidate budget
        for t in 0..l {
            if examined >= self.rule.max_features {
                break;
            }
            let pick = rng.random_range(t..l);
            feature_order.swap(t, pick);
            let f = feature_order[t];
            let candidate = if self.rule.randomized {
                self.random_split(samples, f, rng)
            } else {
                self.best_split(samples, counts, f, hist)
            };
            if let Some(c) = candidate {
                examined += 1;
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_split(
        &self,
        samples: &[usize],
        counts: &[f64],
        f: usize,
        hist: &mut [f64],
    ) -> Option<Candidate> {
        let j = self.n_classes;
        // counting only pays off when the node is large relative to the bin count
        let binned = self.cache.columns[f]
            .as_ref()
            .filter(|col| samples.len() >= col.values.len() / 2);
        match binned {
            Some(col) => {
                debug_assert_eq!(col.bins.len(), self.cache.n_rows);
                let nb = col.values.len();
                let hist = &mut hist[..nb * j];
                hist.fill(0.0);
                for &i in samples {
                    hist[col.bins[i] as usize * j + self.labels[i]] += 1.0;
                }
                let occupied: Vec<usize> = (0..nb)
                    .filter(|&b| hist[b * j..(b + 1) * j].iter().any(|&c| c > 0.0))
                    .collect();
                if occupied.len() < 2 {
                    return None;
                }
                let mut left = vec![0.0; j];
                let mut right = counts.to_vec();
                let mut best: Option<Candidate> = None;
                for w in occupied.windows(2) {
                    let b = w[0];
                    for c in 0..j {
                        left[c] += hist[b * j + c];
                        right[c] -= hist[b * j + c];
                    }
                    let score = purity_score(&left, &right);
                    if best.as_ref().is_none_or(|x| score > x.score) {
                        best = Some(Candidate {
                            feature: f,
                            threshold: split_point(col.values[b], col.values[w[1]]),
                            score,
                        });
                    }
                }
                best
            }
            None => {
                let mut pairs: Vec<(f64, usize)> = samples
                    .iter()
                    .map(|&i| (self.value(i, f), self.labels[i]))
                    .collect();
                pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if pairs[0].0 == pairs[pairs.len() - 1].0 {
                    return None;
                }
                let mut left = vec![0.0; j];
                let mut right = counts.to_vec();
                let mut best: Option<Candidate> = None;
                for k in 0..pairs.len() - 1 {
                    left[pairs[k].1] += 1.0;
                    right[pairs[k].1] -= 1.0;
                    if pairs[k].0 == pairs[k + 1].0 {
                        continue;
                    }
                    let score = purity_score(&left, &right);
                    if best.as_ref().is_none_or(|x| score > x.score) {
                        best = Some(Candidate {
                            feature: f,
                            threshold: split_point(pairs[k].0, pairs[k + 1].0),
                            score,
                        });
                    }
                }
                best
            }
        }
    }

    fn random_split(&self, samples: &[usize], f: usize, rng: &mut DslRng) -> Option<Candidate> {
        let (lo, hi) = match &self.cache.columns[f] {
            Some(col) => {
                let (mut lo, mut hi) = (u8::MAX, u8::MIN);
                for &i in samples {
                    lo = lo.min(col.bins[i]);
                    hi = hi.max(col.bins[i]);
                }
                (col.values[lo as usize], col.values[hi as usize])
            }
            None => samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.value(i, f);
                    (lo.min(v), hi.max(v))
                }),
        };
        if lo >= hi {
            return None;
        }
        let mut threshold = lo + rng.random::<f64>() * (hi - lo);
        if threshold >= hi {
            threshold = lo;
        }
        let score = if self.rule.max_features > 1 {
            let mut left = vec![0.0; self.n_classes];
            let mut right = vec![0.0; self.n_classes];
            for &i in samples {
                if self.value(i, f) <= threshold {
                    left[self.labels[i]] += 1.0;
                } else {
                    right[self.labels[i]] += 1.0;
                }
            }
            purity_score(&left, &right)
        } else {
            0.0
        };
        Some(Candidate {
            feature: f,
            threshold,
            score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn split_point_separates_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = split_point(a, b);
        assert!(a <= t && t < b);
        assert_eq!(split_point(1.0, 3.0), 2.0);
    }

    fn grow(x: &[f64], l: usize, y: &[usize], rule: GrowthRule) -> DecisionTree {
        let n = y.len();
        let cache = ColumnCache::build(x, n, l);
        let grower = ClassificationGrower {
            x,
            n_cols: l,
            labels: y,
            n_classes: 2,
            cache: &cache,
            rule,
        };
        grower.grow((0..n).collect(), &mut rng_from_seed(1))
    }

    #[test]
    fn best_split_isolates_a_threshold_concept() {
        let x = [0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let y = [0, 0, 0, 0, 1, 1, 1];
        let rule = GrowthRule {
            randomized: false,
            max_features: 1,
            min_samples_split: 2,
            max_depth: None,
        };
        let tree = grow(&x, 1, &y, rule);
        assert_eq!(tree.nodes.len(), 3);
        assert_eq!(
            tree.nodes[0],
            TreeNode::Split {
                feature: 0,
                threshold: 6.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(tree.leaf_for(&[2.5]), &[1.0, 0.0]);
        assert_eq!(tree.leaf_for(&[6.6]), &[0.0, 1.0]);
        assert!(tree.is_well_formed(1));
    }

    #[test]
    fn fully_grown_trees_fit_distinct_points() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 40) as f64).collect();
        let y: Vec<usize> = (0..40).map(|i| (i * 7 % 3) % 2).collect();
        for randomized in [false, true] {
            let rule = GrowthRule {
                randomized,
                max_features: 1,
                min_samples_split: 2,
                max_depth: None,
            };
            let tree = grow(&x, 1, &y, rule);
            for (i, &label) in y.iter().enumerate() {
                assert_eq!(tree.leaf_for(&[x[i]])[label], 1.0);
            }
        }
    }

    #[test]
    fn depth_limit_produces_mixed_leaves() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0, 1, 0, 1];
        let rule = GrowthRule {
            randomized: false,
            max_features: 1,
            min_samples_split: 2,
            max_depth: Some(0),
        };
        let tree = grow(&x, 1, &y, rule);
        assert_eq!(tree.nodes, vec![TreeNode::Leaf(0)]);
        assert_eq!(tree.leaf_values, vec![0.5, 0.5]);
    }

    #[test]
    fn unbinned_columns_split_by_sorting() {
        // more distinct values than the bin cap forces the sorting path
        let n = 600;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 7.0).collect();
        let y: Vec<usize> = (0..n).map(|i| usize::from(i >= 250)).collect();
        let rule = GrowthRule {
            randomized: false,
            max_features: 1,
            min_samples_split: 2,
            max_depth: None,
        };
        let tree = grow(&x, 1, &y, rule);
        assert_eq!(tree.nodes.len(), 3);
        if let TreeNode::Split { threshold, .. } = tree.nodes[0] {
            assert!(threshold > 249.0 / 7.0 && threshold < 250.0 / 7.0);
        } else {
            panic!("expected a split");
        }
    }
}
