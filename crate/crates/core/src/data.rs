//! Dense containers shared by every stage of the cascade.
//!
//! All containers validate their invariants on construction and are
//! immutable afterwards, so they can be shared freely across worker threads.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{DslError, Result};
use crate::seed::rng_from_seed;

/// Rows sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// An `n x l` matrix of finite feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(DslError::Dimension(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(DslError::NonFinite { row, col });
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(DslError::Dimension("ragged feature rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values =
            Array2::from_shape_vec((n, l), flat).map_err(|e| DslError::Dimension(e.to_string()))?;
        Self::new(values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), indices),
        }
    }
}

/// Integer class labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(DslError::InvalidLabels(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if labels.is_empty() {
            return Err(DslError::InvalidLabels("empty label vector".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(DslError::InvalidLabels(format!(
                "label {y} at record {i} is outside [0, {n_classes})"
            )));
        }
        Ok(Self { labels, n_classes })
    }

    /// Builds a label vector whose class count is one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(labels, n_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Training sets must contain every class at least once.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(c) => Err(DslError::InvalidLabels(format!(
                "class {c} does not appear in the training labels"
            ))),
            None => Ok(()),
        }
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// An `n x j` matrix whose rows are probability distributions over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    probs: Array2<f64>,
}

impl ProbabilityMatrix {
    pub fn new(mut probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(DslError::Dimension("empty probability matrix".into()));
        }
        for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let mut sum = 0.0;
            for p in row.iter_mut() {
                if !p.is_finite() || *p < -ROW_SUM_TOLERANCE || *p > 1.0 + ROW_SUM_TOLERANCE {
                    return Err(DslError::InvalidProbabilities(format!(
                        "entry {p} in row {i} is outside [0, 1]"
                    )));
                }
                // round-off from sums can land a hair outside the unit interval
                *p = p.clamp(0.0, 1.0);
                sum += *p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(DslError::InvalidProbabilities(format!(
                    "row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self { probs })
    }

    /// The same distribution repeated on every row.
    pub fn constant(n_rows: usize, dist: &[f64]) -> Result<Self> {
        let mut probs = Array2::zeros((n_rows, dist.len()));
        for mut row in probs.axis_iter_mut(Axis(0)) {
            row.iter_mut().zip(dist).for_each(|(p, &d)| *p = d);
        }
        Self::new(probs)
    }

    pub fn n_rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.probs.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    pub fn select_rows(&self, indices: &[usize]) -> ProbabilityMatrix {
        ProbabilityMatrix {
            probs: self.probs.select(Axis(0), indices),
        }
    }
}

/// Features plus, for training and evaluation inputs, their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Option<LabelVector>,
    /// Display names for classes, indexed by class id.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn labeled(features: FeatureMatrix, labels: LabelVector) -> Result<Self> {
        if features.n_rows() != labels.len() {
            return Err(DslError::Dimension(format!(
                "{} feature rows but {} labels",
                features.n_rows(),
                labels.len()
            )));
        }
        let class_names = (0..labels.n_classes()).map(|c| c.to_string()).collect();
        Ok(Self {
            features,
            labels: Some(labels),
            class_names,
        })
    }

    pub fn unlabeled(features: FeatureMatrix) -> Self {
        Self {
            features,
            labels: None,
            class_names: Vec::new(),
        }
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = names;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn require_labels(&self) -> Result<&LabelVector> {
        self.labels
            .as_ref()
            .ok_or_else(|| DslError::InvalidLabels("dataset has no labels".into()))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self.labels.as_ref().map(|l| l.select(indices)),
            class_names: self.class_names.clone(),
        }
    }

    /// Draws disjoint, class-stratified train and test subsets.
    ///
    /// Each class contributes to both subsets in proportion to its share of
    /// the data (largest-remainder rounding). Selected records keep their
    /// original relative order.
    pub fn stratified_split(
        &self,
        train_size: usize,
        test_size: usize,
        seed: u64,
    ) -> Result<(Dataset, Dataset)> {
        let labels = self.require_labels()?;
        let n = labels.len();
        if train_size + test_size > n || train_size == 0 {
            return Err(DslError::InvalidParameter(format!(
                "cannot draw {train_size} + {test_size} records from {n}"
            )));
        }
        let counts = labels.class_counts();
        let mut rng = rng_from_seed(seed);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.n_classes()];
        for (i, &y) in labels.as_slice().iter().enumerate() {
            members[y].push(i);
        }
        for m in &mut members {
            m.shuffle(&mut rng);
        }
        let train_quota = proportional_quota(&counts, train_size);
        let remaining: Vec<usize> = counts
            .iter()
            .zip(&train_quota)
            .map(|(c, q)| c - q)
            .collect();
        let test_quota = proportional_quota(&remaining, test_size);

        let mut train_idx = Vec::with_capacity(train_size);
        let mut test_idx = Vec::with_capacity(test_size);
        for (c, m) in members.iter().enumerate() {
            train_idx.extend_from_slice(&m[..train_quota[c]]);
            test_idx.extend_from_slice(&m[train_quota[c]..train_quota[c] + test_quota[c]]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok((self.select_rows(&train_idx), self.select_rows(&test_idx)))
    }
}

/// Splits `total` across buckets proportionally to `weights`, never exceeding
/// a bucket's weight. Leftovers go to the largest fractional remainders,
/// ties to the lower bucket index.
fn proportional_quota(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut quota: Vec<usize> = weights.iter().map(|&w| w * total / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse((weights[c] * total) % sum));
    let mut left = total.saturating_sub(quota.iter().sum());
    while left > 0 {
        let before = left;
        for &c in &order {
            if left == 0 {
                break;
            }
            if quota[c] < weights[c] {
                quota[c] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    quota
}

/// Appends class probabilities to the original (unaugmented) features,
/// producing an `n x (l + j)` matrix.
pub fn augment_features(
    original: &FeatureMatrix,
    probs: &ProbabilityMatrix,
) -> Result<FeatureMatrix> {
    let (n, l) = (original.n_rows(), original.n_cols());
    if probs.n_rows() != n {
        return Err(DslError::Dimension(format!(
            "cannot augment {n} feature rows with {} probability rows",
            probs.n_rows()
        )));
    }
    let j = probs.n_classes();
    let mut values = Array2::zeros((n, l + j));
    values.slice_mut(s![.., ..l]).assign(&original.values());
    values.slice_mut(s![.., l..]).assign(&probs.values());
    Ok(FeatureMatrix { values })
}
