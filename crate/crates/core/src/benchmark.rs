//! Side-by-side comparison of the cascade, its one-layer and equal-weight
//! variants, and every base learner trained alone, on one train/test split.

use std::time::{Duration, Instant};

use crate::data::{Dataset, LabelVector};
use crate::ensemble::{
    predict, simple_average_of_first_layer, train, DslModel, EnsembleMode, TrainConfig,
};
use crate::error::{DslError, Result};
use crate::learners::fit;
use crate::metrics::{evaluate_predictions, MetricsRecord};
use crate::seed::derive_seed;

/// Seed slot for the standalone learners, distinct from any layer index.
const STANDALONE_SLOT: u64 = u64::MAX - 1;

pub const DSL_NAME: &str = "Deep Super Learner";
pub const SINGLE_LAYER_NAME: &str = "Super Learner (single layer)";
pub const SIMPLE_AVERAGE_NAME: &str = "Simple average";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    /// Sorted by held-out log loss, best first.
    pub rows: Vec<BenchmarkRow>,
    pub dsl: DslModel,
    pub elapsed: Duration,
}

impl BenchmarkReport {
    pub fn row(&self, method: &str) -> Option<&MetricsRecord> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| &r.metrics)
    }
}

/// Re-encodes a test set's labels with the training set's class count.
pub fn align_classes(test: &Dataset, n_classes: usize) -> Result<Dataset> {
    let labels = test.require_labels()?;
    if labels.n_classes() > n_classes {
        return Err(DslError::InvalidLabels(format!(
            "test labels use {} classes, the training set only {n_classes}",
            labels.n_classes()
        )));
    }
    let mut out = test.clone();
    out.labels = Some(LabelVector::new(labels.as_slice().to_vec(), n_classes)?);
    Ok(out)
}

/// Trains the cascade and the baselines on `train` and scores them on `test`.
///
/// The single-layer super learner is the cascade's first layer and the
/// simple average reuses that layer's fold models with equal weights, so all
/// three share identical base models. Both equal what training in the
/// corresponding mode with the same seed produces.
pub fn run_benchmark(
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<BenchmarkReport> {
    let start = Instant::now();
    let config = TrainConfig {
        mode: EnsembleMode::Deep,
        ..config.clone()
    };
    let train_labels = train_set.require_labels()?;
    let test_set = align_classes(test_set, train_labels.n_classes())?;
    let test_labels = test_set.require_labels()?;
    let score =
        |model: &DslModel| evaluate_predictions(&predict(model, &test_set.features)?, test_labels);

    let dsl = train(train_set, &config)?;
    let mut rows = vec![
        BenchmarkRow {
            method: DSL_NAME.into(),
            metrics: score(&dsl)?,
        },
        BenchmarkRow {
            method: SINGLE_LAYER_NAME.into(),
            metrics: score(&dsl.truncated(1)?)?,
        },
    ];
    let simple = if config.retrain_full {
        train(
            train_set,
            &TrainConfig {
                mode: EnsembleMode::SimpleAverage,
                ..config.clone()
            },
        )?
    } else {
        simple_average_of_first_layer(&dsl, train_set)?
    };
    rows.push(BenchmarkRow {
        method: SIMPLE_AVERAGE_NAME.into(),
        metrics: score(&simple)?,
    });

    for (q, spec) in config.roster.iter().enumerate() {
        let seed = derive_seed(&[config.seed, STANDALONE_SLOT, q as u64]);
        let model = fit(&spec.with_seed(seed), &train_set.features, train_labels)?;
        let probs = model.predict_proba(&test_set.features)?;
        rows.push(BenchmarkRow {
            method: spec.kind().display_name().into(),
            metrics: evaluate_predictions(&probs, test_labels)?,
        });
    }
    rows.sort_by(|a, b| a.metrics.log_loss.total_cmp(&b.metrics.log_loss));
    Ok(BenchmarkReport {
        rows,
        dsl,
        elapsed: start.elapsed(),
    })
}
