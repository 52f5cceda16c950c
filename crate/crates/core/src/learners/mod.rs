//! Base learners behind a single fit / predict-probabilities interface.
//!
//! Defaults follow the hyper-parameters used for the original experiments:
//! k-NN with 11 neighbors, 200-tree random forest and extra-trees with
//! unlimited depth (extra-trees splitting on one random feature), and
//! 200 rounds of depth-3 gradient boosting at learning rate 1 with no
//! subsampling. Logistic regression has no published settings; see
//! [`LogisticParams`] for the defaults used here.

pub mod forest;
pub mod gbt;
pub mod knn;
pub mod logistic;
pub mod tree;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::data::{FeatureMatrix, LabelVector, ProbabilityMatrix};
use crate::error::{DslError, Result};

pub use forest::{ForestModel, ForestParams, MaxFeatures};
pub use gbt::{BoostedTreesModel, GbtParams};
pub use knn::{KnnModel, KnnParams};
pub use logistic::{LogisticModel, LogisticParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    LogisticRegression,
    Knn,
    RandomForest,
    ExtraTrees,
    GradientBoostedTrees,
    DummyUniform,
    DummyPrior,
}

impl LearnerKind {
    /// The five learners of the default roster, in roster order.
    pub const DEFAULT_ROSTER: [LearnerKind; 5] = [
        LearnerKind::LogisticRegression,
        LearnerKind::Knn,
        LearnerKind::RandomForest,
        LearnerKind::ExtraTrees,
        LearnerKind::GradientBoostedTrees,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            LearnerKind::LogisticRegression => "lr",
            LearnerKind::Knn => "knn",
            LearnerKind::RandomForest => "rf",
            LearnerKind::ExtraTrees => "et",
            LearnerKind::GradientBoostedTrees => "gbt",
            LearnerKind::DummyUniform => "uniform",
            LearnerKind::DummyPrior => "prior",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            LearnerKind::LogisticRegression => "Logistic regression",
            LearnerKind::Knn => "k-Nearest neighbors",
            LearnerKind::RandomForest => "Random forest",
            LearnerKind::ExtraTrees => "Extremely randomized trees",
            LearnerKind::GradientBoostedTrees => "Gradient-boosted trees",
            LearnerKind::DummyUniform => "Uniform baseline",
            LearnerKind::DummyPrior => "Class-prior baseline",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LearnerKind {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lr" => Ok(LearnerKind::LogisticRegression),
            "knn" => Ok(LearnerKind::Knn),
            "rf" => Ok(LearnerKind::RandomForest),
            "et" => Ok(LearnerKind::ExtraTrees),
            "gbt" => Ok(LearnerKind::GradientBoostedTrees),
            "uniform" => Ok(LearnerKind::DummyUniform),
            "prior" => Ok(LearnerKind::DummyPrior),
            other => Err(DslError::InvalidParameter(format!(
                "unknown learner '{other}'"
            ))),
        }
    }
}

/// Kind-specific hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerParams {
    LogisticRegression(LogisticParams),
    Knn(KnnParams),
    RandomForest(ForestParams),
    ExtraTrees(ForestParams),
    GradientBoostedTrees(GbtParams),
    DummyUniform,
    DummyPrior,
}

impl LearnerParams {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerParams::LogisticRegression(_) => LearnerKind::LogisticRegression,
            LearnerParams::Knn(_) => LearnerKind::Knn,
            LearnerParams::RandomForest(_) => LearnerKind::RandomForest,
            LearnerParams::ExtraTrees(_) => LearnerKind::ExtraTrees,
            LearnerParams::GradientBoostedTrees(_) => LearnerKind::GradientBoostedTrees,
            LearnerParams::DummyUniform => LearnerKind::DummyUniform,
            LearnerParams::DummyPrior => LearnerKind::DummyPrior,
        }
    }

    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::LogisticRegression => {
                LearnerParams::LogisticRegression(Default::default())
            }
            LearnerKind::Knn => LearnerParams::Knn(Default::default()),
            LearnerKind::RandomForest => LearnerParams::RandomForest(ForestParams::random_forest()),
            LearnerKind::ExtraTrees => LearnerParams::ExtraTrees(ForestParams::extra_trees()),
            LearnerKind::GradientBoostedTrees => {
                LearnerParams::GradientBoostedTrees(Default::default())
            }
            LearnerKind::DummyUniform => LearnerParams::DummyUniform,
            LearnerKind::DummyPrior => LearnerParams::DummyPrior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DslError::InvalidParameter(msg));
        match self {
            LearnerParams::LogisticRegression(p) => {
                if p.learning_rate.partial_cmp(&0.0) != Some(Ordering::Greater)
                    || p.l2_penalty < 0.0
                    || p.max_epochs == 0
                {
                    return bad(format!("invalid logistic regression parameters {p:?}"));
                }
            }
            LearnerParams::Knn(p) => {
                if p.neighbors == 0 {
                    return bad("k-NN needs at least one neighbor".into());
                }
            }
            LearnerParams::RandomForest(p) | LearnerParams::ExtraTrees(p) => {
                if p.n_trees == 0 || p.min_samples_split < 2 || p.max_depth == Some(0) {
                    return bad(format!("invalid forest parameters {p:?}"));
                }
                if p.max_features == MaxFeatures::Fixed(0) {
                    return bad("max features must be at least 1".into());
                }
            }
            LearnerParams::GradientBoostedTrees(p) => {
                if p.n_rounds == 0
                    || p.max_depth == 0
                    || p.learning_rate.partial_cmp(&0.0) != Some(Ordering::Greater)
                    || p.lambda < 0.0
                    || p.min_child_weight < 0.0
                    || !(2..=256).contains(&p.max_bins)
                {
                    return bad(format!("invalid boosting parameters {p:?}"));
                }
            }
            LearnerParams::DummyUniform | LearnerParams::DummyPrior => {}
        }
        Ok(())
    }
}

/// What to train: the algorithm, its hyper-parameters, and its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub params: LearnerParams,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(params: LearnerParams, seed: u64) -> Self {
        Self { params, seed }
    }

    pub fn default_for(kind: LearnerKind) -> Self {
        Self::new(LearnerParams::default_for(kind), 0)
    }

    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            params: self.params.clone(),
            seed,
        }
    }
}

/// Fitted parameters, one variant per algorithm family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    /// The same distribution for every input (the dummy learners).
    Constant(Vec<f64>),
    Logistic(LogisticModel),
    Knn(KnnModel),
    Forest(ForestModel),
    Boosted(BoostedTreesModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub n_classes: usize,
    pub feature_count: usize,
    pub body: ModelBody,
}

/// Fits a learner. Deterministic in `(spec, features, labels)`.
pub fn fit(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> Result<TrainedModel> {
    spec.params.validate()?;
    if features.n_rows() != labels.len() {
        return Err(DslError::Dimension(format!(
            "{} feature rows but {} labels",
            features.n_rows(),
            labels.len()
        )));
    }
    let counts = labels.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(DslError::SingleClass);
    }
    let j = labels.n_classes();
    let n = labels.len() as f64;
    let body = match &spec.params {
        LearnerParams::DummyUniform => ModelBody::Constant(vec![1.0 / j as f64; j]),
        LearnerParams::DummyPrior => {
            ModelBody::Constant(counts.iter().map(|&c| c as f64 / n).collect())
        }
        LearnerParams::LogisticRegression(p) => {
            ModelBody::Logistic(logistic::fit(p, features, labels))
        }
        LearnerParams::Knn(p) => ModelBody::Knn(knn::fit(p, features, labels)?),
        LearnerParams::RandomForest(p) | LearnerParams::ExtraTrees(p) => {
            let randomized = spec.kind() == LearnerKind::ExtraTrees;
            ModelBody::Forest(forest::fit(p, randomized, spec.seed, features, labels))
        }
        LearnerParams::GradientBoostedTrees(p) => ModelBody::Boosted(gbt::fit(p, features, labels)),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        n_classes: j,
        feature_count: features.n_cols(),
        body,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> LearnerKind {
        self.spec.kind()
    }

    pub fn predict_proba(&self, features: &FeatureMatrix) -> Result<ProbabilityMatrix> {
        if features.n_cols() != self.feature_count {
            return Err(DslError::Dimension(format!(
                "model expects {} features, input has {}",
                self.feature_count,
                features.n_cols()
            )));
        }
        let probs = match &self.body {
            ModelBody::Constant(dist) => {
                return ProbabilityMatrix::constant(features.n_rows(), dist)
            }
            ModelBody::Logistic(m) => m.predict_proba(features.values()),
            ModelBody::Knn(m) => m.predict_proba(features.values()),
            ModelBody::Forest(m) => m.predict_proba(features.values()),
            ModelBody::Boosted(m) => m.predict_proba(features.values()),
        };
        ProbabilityMatrix::new(probs)
    }
}

/// In-place numerically stable softmax over each row of `scores`.
pub(crate) fn softmax_rows(scores: &mut ndarray::Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
