//! Brute-force k-nearest-neighbors with unweighted votes.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{DslError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    pub neighbors: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { neighbors: 11 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub neighbors: usize,
    pub n_classes: usize,
    /// The stored training matrix.
    pub train: Array2<f64>,
    pub labels: Vec<usize>,
}

pub(crate) fn fit(
    params: &KnnParams,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<KnnModel> {
    if features.n_rows() < params.neighbors {
        return Err(DslError::TooFewRecords {
            needed: params.neighbors,
            got: features.n_rows(),
        });
    }
    Ok(KnnModel {
        neighbors: params.neighbors,
        n_classes: labels.n_classes(),
        train: features.values().to_owned(),
        labels: labels.as_slice().to_vec(),
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// distance ties resolve to the lower training index
fn closer(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl KnnModel {
    /// Indices of the `neighbors` closest training records, nearest first.
    pub fn nearest(&self, query: &[f64]) -> Vec<usize> {
        let train = self.train.as_slice().expect("standard layout");
        let l = self.train.ncols();
        let mut dist: Vec<(f64, usize)> = train
            .chunks_exact(l)
            .enumerate()
            .map(|(i, row)| (squared_distance(query, row), i))
            .collect();
        let k = self.neighbors;
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, closer);
            dist.truncate(k);
        }
        dist.sort_unstable_by(closer);
        dist.into_iter().map(|(_, i)| i).collect()
    }

    pub(crate) fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, j) = (x.nrows(), self.n_classes);
        let x = x.as_standard_layout();
        let queries = x.as_slice().expect("standard layout");
        let l = x.ncols();
        let mut out = vec![0.0; n * j];
        out.par_chunks_mut(j)
            .zip(queries.par_chunks(l))
            .for_each(|(votes, q)| {
                for i in self.nearest(q) {
                    votes[self.labels[i]] += 1.0;
                }
                let k = self.neighbors as f64;
                votes.iter_mut().for_each(|v| *v /= k);
            });
        Array2::from_shape_vec((n, j), out).expect("shape")
    }
}
