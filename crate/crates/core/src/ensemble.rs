//! The layered super-learner cascade.
//!
//! Each layer draws fresh stratified folds, collects every learner's
//! out-of-fold class probabilities, finds the log-loss-optimal convex
//! weights, and appends the weighted probabilities to the *original*
//! features for the next layer. Training stops as soon as a layer fails to
//! lower the optimized loss; that layer is discarded. Prediction replays
//! the kept layers, averaging each learner's fold models.

use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;

use crate::cv::{fit_fold, stratified_folds};
use crate::data::{augment_features, Dataset, FeatureMatrix, LabelVector, ProbabilityMatrix};
use crate::error::{DslError, Result};
use crate::learners::{fit, LearnerKind, LearnerSpec, TrainedModel};
use crate::metrics::{evaluate_predictions, log_loss, MetricsRecord};
use crate::seed::derive_seed;
use crate::weights::{combine, optimize_weights, StackedPredictions, WeightVector};

/// Marks a full-training-set model in the seed derivation (fold slot).
const FULL_DATA_SLOT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Add layers until the optimized loss stops decreasing.
    Deep,
    /// One layer with optimized weights: the classic super learner.
    SingleLayer,
    /// One layer with equal weights.
    SimpleAverage,
}

impl std::str::FromStr for EnsembleMode {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep" => Ok(EnsembleMode::Deep),
            "single_layer" | "single-layer" => Ok(EnsembleMode::SingleLayer),
            "simple_average" | "simple-average" => Ok(EnsembleMode::SimpleAverage),
            other => Err(DslError::InvalidParameter(format!(
                "unknown mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub folds: usize,
    pub roster: Vec<LearnerSpec>,
    pub max_iterations: usize,
    /// Refit every learner on the whole training set for prediction.
    pub retrain_full: bool,
    pub seed: u64,
    pub mode: EnsembleMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            roster: LearnerKind::DEFAULT_ROSTER
                .iter()
                .map(|&k| LearnerSpec::default_for(k))
                .collect(),
            max_iterations: 20,
            retrain_full: false,
            seed: 0,
            mode: EnsembleMode::Deep,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(DslError::InvalidParameter(
                "max iterations must be at least 1".into(),
            ));
        }
        if self.roster.is_empty() {
            return Err(DslError::InvalidParameter("learner roster is empty".into()));
        }
        if self.folds < 2 {
            return Err(DslError::InvalidParameter(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        self.roster.iter().try_for_each(|s| s.params.validate())
    }

    fn iterations(&self) -> usize {
        match self.mode {
            EnsembleMode::Deep => self.max_iterations,
            EnsembleMode::SingleLayer | EnsembleMode::SimpleAverage => 1,
        }
    }
}

/// One kept layer of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    /// `models[q]` holds learner `q`'s fold models, or its single
    /// full-data model when trained with `retrain_full`.
    pub models: Vec<Vec<TrainedModel>>,
    pub weights: WeightVector,
    /// Log loss of the weighted out-of-fold predictions.
    pub train_loss: f64,
    /// Each learner's own out-of-fold log loss.
    pub learner_losses: Vec<f64>,
    pub fold_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DslModel {
    layers: Vec<LayerModel>,
    n_classes: usize,
    n_features: usize,
    config: TrainConfig,
    class_names: Vec<String>,
}

impl DslModel {
    pub fn new(
        layers: Vec<LayerModel>,
        n_classes: usize,
        n_features: usize,
        config: TrainConfig,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(DslError::EmptyModel);
        }
        if layers
            .windows(2)
            .any(|w| w[1].train_loss.partial_cmp(&w[0].train_loss) != Some(Ordering::Less))
        {
            return Err(DslError::InvalidParameter(
                "layer training losses must be strictly decreasing".into(),
            ));
        }
        for (t, layer) in layers.iter().enumerate() {
            let width = if t == 0 {
                n_features
            } else {
                n_features + n_classes
            };
            if layer.weights.len() != layer.models.len() {
                return Err(DslError::Dimension(format!(
                    "layer {t}: weight count differs from learner count"
                )));
            }
            let consistent = layer
                .models
                .iter()
                .flatten()
                .all(|m| m.feature_count == width && m.n_classes == n_classes);
            if !consistent || layer.models.iter().any(Vec::is_empty) {
                return Err(DslError::Dimension(format!(
                    "layer {t}: models do not match the cascade shape"
                )));
            }
        }
        if !class_names.is_empty() && class_names.len() != n_classes {
            return Err(DslError::Dimension(
                "class name count differs from class count".into(),
            ));
        }
        Ok(Self {
            layers,
            n_classes,
            n_features,
            config,
            class_names,
        })
    }

    pub fn layers(&self) -> &[LayerModel] {
        &self.layers
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.train_loss).collect()
    }

    /// The cascade cut after its first `depth` layers.
    pub fn truncated(&self, depth: usize) -> Result<DslModel> {
        let depth = depth.min(self.layers.len());
        DslModel::new(
            self.layers[..depth].to_vec(),
            self.n_classes,
            self.n_features,
            self.config.clone(),
            self.class_names.clone(),
        )
    }
}

/// Trains the cascade on a labeled dataset.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<DslModel> {
    config.validate()?;
    let labels = dataset.require_labels()?;
    labels.require_all_classes()?;
    let original = &dataset.features;
    let (m, k) = (config.roster.len(), config.folds);

    let mut current = original.clone();
    let mut best_loss = f64::INFINITY;
    let mut layers = Vec::new();
    for t in 0..config.iterations() {
        let fold_seed = derive_seed(&[config.seed, t as u64]);
        let folds = stratified_folds(labels, k, fold_seed)?;
        let tasks: Vec<(usize, usize)> = (0..m).flat_map(|q| (0..k).map(move |f| (q, f))).collect();
        let fitted = tasks
            .par_iter()
            .map(|&(q, f)| {
                let seed = derive_seed(&[config.seed, t as u64, f as u64, q as u64]);
                fit_fold(
                    config.roster[q].with_seed(seed),
                    &current,
                    labels,
                    &folds,
                    f,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut oof = vec![Array2::<f64>::zeros((labels.len(), labels.n_classes())); m];
        let mut models: Vec<Vec<TrainedModel>> = vec![Vec::with_capacity(k); m];
        for ((q, _), (rows, probs, model)) in tasks.iter().zip(fitted) {
            for (r, &i) in rows.iter().enumerate() {
                oof[*q].row_mut(i).assign(&probs.row(r));
            }
            models[*q].push(model);
        }
        let per_learner = oof
            .into_iter()
            .map(ProbabilityMatrix::new)
            .collect::<Result<Vec<_>>>()?;
        let learner_losses = per_learner
            .iter()
            .map(|p| log_loss(p, labels))
            .collect::<Result<Vec<_>>>()?;
        let stacked = StackedPredictions::new(per_learner)?;

        let (weights, loss) = match config.mode {
            EnsembleMode::SimpleAverage => {
                let w = WeightVector::uniform(m)?;
                let loss = log_loss(&combine(&stacked, &w)?, labels)?;
                (w, loss)
            }
            EnsembleMode::Deep | EnsembleMode::SingleLayer => optimize_weights(&stacked, labels)?,
        };
        if loss.partial_cmp(&best_loss) != Some(Ordering::Less) {
            break;
        }
        let combined = combine(&stacked, &weights)?;
        if config.retrain_full {
            models = (0..m)
                .into_par_iter()
                .map(|q| {
                    let seed = derive_seed(&[config.seed, t as u64, FULL_DATA_SLOT, q as u64]);
                    fit(&config.roster[q].with_seed(seed), &current, labels)
                        .map(|model| vec![model])
                })
                .collect::<Result<_>>()?;
        }
        layers.push(LayerModel {
            models,
            weights,
            train_loss: loss,
            learner_losses,
            fold_seed,
        });
        best_loss = loss;
        current = augment_features(original, &combined)?;
    }

    DslModel::new(
        layers,
        labels.n_classes(),
        original.n_cols(),
        config.clone(),
        dataset.class_names.clone(),
    )
}

/// Each learner's prediction, averaged over its models, for one layer.
fn layer_learner_predictions(
    layer: &LayerModel,
    features: &FeatureMatrix,
) -> Result<StackedPredictions> {
    let tasks: Vec<(usize, usize)> = layer
        .models
        .iter()
        .enumerate()
        .flat_map(|(q, ms)| (0..ms.len()).map(move |f| (q, f)))
        .collect();
    let outputs = tasks
        .par_iter()
        .map(|&(q, f)| layer.models[q][f].predict_proba(features))
        .collect::<Result<Vec<_>>>()?;
    let mut outputs = outputs.into_iter();
    let per_learner = layer
        .models
        .iter()
        .map(|ms| {
            let mut sum = outputs.next().expect("one output per model").into_inner();
            for p in outputs.by_ref().take(ms.len() - 1) {
                sum += &p.values();
            }
            sum /= ms.len() as f64;
            ProbabilityMatrix::new(sum)
        })
        .collect::<Result<Vec<_>>>()?;
    StackedPredictions::new(per_learner)
}

/// The combined output after every layer of the cascade.
pub fn predict_layers(
    model: &DslModel,
    features: &FeatureMatrix,
) -> Result<Vec<ProbabilityMatrix>> {
    if features.n_cols() != model.n_features {
        return Err(DslError::Dimension(format!(
            "model expects {} features, input has {}",
            model.n_features,
            features.n_cols()
        )));
    }
    let mut outputs: Vec<ProbabilityMatrix> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let input = match outputs.last() {
            None => features.clone(),
            Some(prev) => augment_features(features, prev)?,
        };
        let stacked = layer_learner_predictions(layer, &input)?;
        outputs.push(combine(&stacked, &layer.weights)?);
    }
    Ok(outputs)
}

/// Runs inputs through every kept layer and returns the final probabilities.
pub fn predict(model: &DslModel, features: &FeatureMatrix) -> Result<ProbabilityMatrix> {
    predict_layers(model, features)?
        .pop()
        .ok_or(DslError::EmptyModel)
}

/// Metrics of the cascade truncated after each layer.
pub fn evaluate(model: &DslModel, dataset: &Dataset) -> Result<Vec<MetricsRecord>> {
    let labels: &LabelVector = dataset.require_labels()?;
    predict_layers(model, &dataset.features)?
        .iter()
        .map(|p| evaluate_predictions(p, labels))
        .collect()
}

/// The equal-weight ensemble over the first layer's models: exactly what
/// [`EnsembleMode::SimpleAverage`] training with the same seed produces.
pub fn simple_average_of_first_layer(model: &DslModel, train: &Dataset) -> Result<DslModel> {
    let labels = train.require_labels()?;
    let first = &model.layers[0];
    let m = first.models.len();
    let weights = WeightVector::uniform(m)?;
    if model.config.retrain_full {
        return Err(DslError::InvalidParameter(
            "the equal-weight baseline needs the fold models, which retrain_full replaces".into(),
        ));
    }
    // recompute the out-of-fold loss under equal weights
    let folds = stratified_folds(labels, model.config.folds, first.fold_seed)?;
    let mut oof = vec![Array2::<f64>::zeros((labels.len(), labels.n_classes())); m];
    for (q, ms) in first.models.iter().enumerate() {
        for (f, fold_model) in ms.iter().enumerate() {
            let rows = folds.validation_indices(f);
            let p = fold_model.predict_proba(&train.features.select_rows(&rows))?;
            for (r, &i) in rows.iter().enumerate() {
                oof[q].row_mut(i).assign(&p.row(r));
            }
        }
    }
    let stacked = StackedPredictions::new(
        oof.into_iter()
            .map(ProbabilityMatrix::new)
            .collect::<Result<_>>()?,
    )?;
    let train_loss = log_loss(&combine(&stacked, &weights)?, labels)?;
    let layer = LayerModel {
        weights,
        train_loss,
        ..first.clone()
    };
    let config = TrainConfig {
        mode: EnsembleMode::SimpleAverage,
        ..model.config.clone()
    };
    DslModel::new(
        vec![layer],
        model.n_classes,
        model.n_features,
        config,
        model.class_names.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ForestParams, GbtParams, KnnParams, LearnerParams, LogisticParams};
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            rows.push(vec![
                c as f64 + rng.random_range(-1.2..1.2),
                rng.random_range(-1.0..1.0),
                (c as f64 * 1.3).sin() + rng.random_range(-1.0..1.0),
            ]);
            labels.push(c);
        }
        Dataset::labeled(
            FeatureMatrix::from_rows(&rows).unwrap(),
            LabelVector::new(labels, 3).unwrap(),
        )
        .unwrap()
    }

    fn quick_roster() -> Vec<LearnerSpec> {
        vec![
            LearnerSpec::new(
                LearnerParams::LogisticRegression(LogisticParams {
                    max_epochs: 50,
                    ..Default::default()
                }),
                0,
            ),
            LearnerSpec::new(LearnerParams::Knn(KnnParams { neighbors: 5 }), 0),
            LearnerSpec::new(
                LearnerParams::RandomForest(ForestParams {
                    n_trees: 10,
                    ..ForestParams::random_forest()
                }),
                0,
            ),
            LearnerSpec::new(
                LearnerParams::GradientBoostedTrees(GbtParams {
                    n_rounds: 5,
                    ..Default::default()
                }),
                0,
            ),
        ]
    }

    fn quick_config(mode: EnsembleMode) -> TrainConfig {
        TrainConfig {
            roster: quick_roster(),
            max_iterations: 4,
            seed: 99,
            mode,
            ..Default::default()
        }
    }

    #[test]
    fn single_layer_mode_builds_one_layer() {
        let ds = blobs(60, 1);
        let model = train(&ds, &quick_config(EnsembleMode::SingleLayer)).unwrap();
        assert_eq!(model.layers().len(), 1);
        let layer = &model.layers()[0];
        assert_eq!(layer.models.len(), 4);
        assert!(layer.models.iter().all(|ms| ms.len() == 3));
        for &l in &layer.learner_losses {
            assert!(layer.train_loss <= l + 1e-6);
        }
    }

    #[test]
    fn simple_average_uses_equal_weights() {
        let ds = blobs(60, 2);
        let model = train(&ds, &quick_config(EnsembleMode::SimpleAverage)).unwrap();
        assert_eq!(model.layers().len(), 1);
        assert_eq!(model.layers()[0].weights.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn derived_baselines_match_trained_ones() {
        let ds = blobs(60, 3);
        let deep = train(&ds, &quick_config(EnsembleMode::Deep)).unwrap();
        let single = train(&ds, &quick_config(EnsembleMode::SingleLayer)).unwrap();
        let average = train(&ds, &quick_config(EnsembleMode::SimpleAverage)).unwrap();
        let test = blobs(30, 4);
        let truncated = deep.truncated(1).unwrap();
        assert_eq!(
            predict(&truncated, &test.features).unwrap(),
            predict(&single, &test.features).unwrap()
        );
        assert_eq!(truncated.layers(), single.layers());
        let derived = simple_average_of_first_layer(&deep, &ds).unwrap();
        assert_eq!(derived.layers(), average.layers());
    }

    #[test]
    fn deep_with_one_iteration_equals_single_layer() {
        let ds = blobs(45, 5);
        let mut cfg = quick_config(EnsembleMode::Deep);
        cfg.max_iterations = 1;
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &quick_config(EnsembleMode::SingleLayer)).unwrap();
        assert_eq!(
            predict(&a, &ds.features).unwrap(),
            predict(&b, &ds.features).unwrap()
        );
    }

    #[test]
    fn losses_strictly_decrease_and_evaluate_matches_predict() {
        let ds = blobs(90, 6);
        let model = train(&ds, &quick_config(EnsembleMode::Deep)).unwrap();
        let losses = model.train_losses();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        let test = blobs(30, 7);
        let per_layer = evaluate(&model, &test).unwrap();
        assert_eq!(per_layer.len(), model.layers().len());
        let full = evaluate_predictions(
            &predict(&model, &test.features).unwrap(),
            test.require_labels().unwrap(),
        )
        .unwrap();
        assert_eq!(*per_layer.last().unwrap(), full);
    }

    #[test]
    fn uniform_roster_predicts_uniform() {
        let ds = blobs(30, 8);
        let cfg = TrainConfig {
            roster: vec![LearnerSpec::default_for(LearnerKind::DummyUniform)],
            mode: EnsembleMode::SingleLayer,
            ..Default::default()
        };
        let model = train(&ds, &cfg).unwrap();
        let p = predict(&model, &ds.features).unwrap();
        assert!(p.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn vertex_weight_returns_that_learners_fold_average() {
        let ds = blobs(60, 9);
        let model = train(&ds, &quick_config(EnsembleMode::SingleLayer)).unwrap();
        let mut layer = model.layers()[0].clone();
        layer.weights = WeightVector::vertex(4, 0).unwrap();
        let edited = DslModel::new(
            vec![layer.clone()],
            3,
            3,
            model.config().clone(),
            Vec::new(),
        )
        .unwrap();
        let p = predict(&edited, &ds.features).unwrap();
        let fold_avg = layer_learner_predictions(&layer, &ds.features).unwrap();
        assert_eq!(&p, fold_avg.learner(0));
    }

    #[test]
    fn retrain_full_keeps_one_model_per_learner() {
        let ds = blobs(60, 10);
        let mut cfg = quick_config(EnsembleMode::Deep);
        cfg.retrain_full = true;
        let model = train(&ds, &cfg).unwrap();
        assert!(model
            .layers()
            .iter()
            .all(|l| l.models.iter().all(|ms| ms.len() == 1)));
        let p = predict(&model, &ds.features).unwrap();
        assert_eq!(p.n_rows(), 60);
    }

    #[test]
    fn model_construction_enforces_invariants() {
        let ds = blobs(45, 11);
        let model = train(&ds, &quick_config(EnsembleMode::SingleLayer)).unwrap();
        let layer = model.layers()[0].clone();
        assert!(matches!(
            DslModel::new(Vec::new(), 3, 3, model.config().clone(), Vec::new()),
            Err(DslError::EmptyModel)
        ));
        // a second layer must have l + j inputs and a lower loss
        let twice = vec![layer.clone(), layer.clone()];
        assert!(DslModel::new(twice, 3, 3, model.config().clone(), Vec::new()).is_err());
        assert!(predict(&model, &FeatureMatrix::new(Array2::zeros((2, 4))).unwrap()).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            roster: Vec::new(),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(
            "single-layer".parse::<EnsembleMode>().unwrap(),
            EnsembleMode::SingleLayer
        );
    }
}
