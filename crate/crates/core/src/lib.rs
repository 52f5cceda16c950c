//! Deep super learner: a cascade of cross-validated, convexly weighted
//! ensembles of classifiers.
//!
//! Each layer trains a roster of base learners on stratified folds, finds
//! the simplex weights that minimize the out-of-fold log loss, and feeds the
//! weighted class probabilities, appended to the original features, to the
//! next layer. Layers are added while the optimized loss keeps falling.
//!
//! ```no_run
//! use dsl_core::{io, predict, train, TrainConfig};
//!
//! let data = io::load_csv("train.csv", io::LabelColumn::parse("label"), true)?;
//! let model = train(&data, &TrainConfig { seed: 42, ..Default::default() })?;
//! let probs = predict(&model, &data.features)?;
//! # Ok::<(), dsl_core::DslError>(())
//! ```

pub mod benchmark;
pub mod cv;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod learners;
pub mod metrics;
pub mod seed;
pub mod weights;

pub use data::{augment_features, Dataset, FeatureMatrix, LabelVector, ProbabilityMatrix};
pub use ensemble::{
    evaluate, predict, predict_layers, simple_average_of_first_layer, train, DslModel,
    EnsembleMode, LayerModel, TrainConfig,
};
pub use error::{DslError, Result};
pub use learners::{fit, LearnerKind, LearnerParams, LearnerSpec, TrainedModel};
pub use metrics::{accuracy, log_loss, MetricsRecord};
pub use weights::{combine, optimize_weights, StackedPredictions, WeightVector};

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool
/// when `None`. Results do not depend on the worker count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(DslError::InvalidParameter(
            "worker count must be at least 1".into(),
        )),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| DslError::InvalidParameter(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
