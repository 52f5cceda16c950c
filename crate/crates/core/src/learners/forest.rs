//! Random forest and extremely randomized trees.
//!
//! Both grow unpruned Gini trees whose leaves store class proportions and
//! average the per-tree distributions. The random forest trains each tree
//! on a bootstrap sample and searches the best threshold over a random
//! subset of features; extra-trees use the full training set and draw a
//! single uniform threshold per candidate feature.
//!
//! Training records are first put in a canonical order (lexicographic by
//! feature values, then label) so that the seeded bootstrap and threshold
//! draws, and therefore the fitted forest, do not depend on the order in
//! which records were supplied.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::tree::{ClassificationGrower, ColumnCache, DecisionTree, GrowthRule};
use crate::data::{FeatureMatrix, LabelVector};
use crate::seed::{derive_seed, rng_from_seed};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    /// `ceil(sqrt(l))` candidate features per split.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().ceil() as usize).max(1),
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k.clamp(1, n_features),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
}

impl ForestParams {
    pub fn random_forest() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
        }
    }

    pub fn extra_trees() -> Self {
        Self {
            max_features: MaxFeatures::Fixed(1),
            ..Self::random_forest()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub n_classes: usize,
    pub trees: Vec<DecisionTree>,
}

/// Record indices sorted lexicographically by feature row, then label.
fn canonical_order(x: &[f64], l: usize, labels: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&x[a * l..(a + 1) * l], &x[b * l..(b + 1) * l]);
        ra.iter()
            .zip(rb)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(labels[a].cmp(&labels[b]))
    });
    order
}

pub(crate) fn fit(
    params: &ForestParams,
    randomized: bool,
    seed: u64,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> ForestModel {
    let values = features.values();
    let x = values.as_standard_layout();
    let x = x.as_slice().expect("standard layout");
    let (n, l) = (features.n_rows(), features.n_cols());
    let y = labels.as_slice();
    let order = canonical_order(x, l, y);
    let cache = ColumnCache::build(x, n, l);
    let grower = ClassificationGrower {
        x,
        n_cols: l,
        labels: y,
        n_classes: labels.n_classes(),
        cache: &cache,
        rule: GrowthRule {
            randomized,
            max_features: params.max_features.resolve(l),
            min_samples_split: params.min_samples_split,
            max_depth: params.max_depth,
        },
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(&[seed, t as u64]));
            let samples = if randomized {
                order.clone()
            } else {
                (0..n).map(|_| order[rng.random_range(0..n)]).collect()
            };
            grower.grow(samples, &mut rng)
        })
        .collect();
    ForestModel {
        n_classes: labels.n_classes(),
        trees,
    }
}

impl ForestModel {
    pub(crate) fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, l) = x.dim();
        let j = self.n_classes;
        let x = x.as_standard_layout();
        let rows = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * j];
        let n_trees = self.trees.len() as f64;
        out.par_chunks_mut(j)
            .zip(rows.par_chunks(l))
            .for_each(|(acc, row)| {
                for tree in &self.trees {
                    for (a, p) in acc.iter_mut().zip(tree.leaf_for(row)) {
                        *a += p;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n_trees);
            });
        Array2::from_shape_vec((n, j), out).expect("shape")
    }
}
