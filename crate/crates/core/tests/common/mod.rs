#![allow(dead_code)]

use dsl_core::learners::{LearnerKind, LearnerParams, LearnerSpec};
use dsl_core::seed::rng_from_seed;
use dsl_core::{Dataset, FeatureMatrix, LabelVector};
use rand::Rng;

/// Gaussian-ish blobs: class `c` centred at `c * spread` on every axis.
pub fn blobs(n: usize, l: usize, j: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % j;
        let row: Vec<f64> = (0..l)
            .map(|d| {
                let noise: f64 = (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() / 2.0;
                spread * ((c + d) % j) as f64 + noise
            })
            .collect();
        rows.push(row);
        labels.push(c);
    }
    Dataset::labeled(
        FeatureMatrix::from_rows(&rows).unwrap(),
        LabelVector::new(labels, j).unwrap(),
    )
    .unwrap()
}

/// Every learner kind with sizes small enough for quick tests.
pub fn small_roster() -> Vec<LearnerSpec> {
    LearnerKind::DEFAULT_ROSTER
        .iter()
        .map(|&k| {
            let mut spec = LearnerSpec::default_for(k);
            match &mut spec.params {
                LearnerParams::RandomForest(p) | LearnerParams::ExtraTrees(p) => p.n_trees = 15,
                LearnerParams::GradientBoostedTrees(p) => p.n_rounds = 15,
                LearnerParams::Knn(p) => p.neighbors = 5,
                LearnerParams::LogisticRegression(p) => p.max_epochs = 100,
                _ => {}
            }
            spec
        })
        .collect()
}
