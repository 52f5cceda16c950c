//! Stratified k-fold assignment and out-of-fold prediction.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{Dataset, FeatureMatrix, LabelVector, ProbabilityMatrix};
use crate::error::{DslError, Result};
use crate::learners::{fit, LearnerSpec, TrainedModel};
use crate::seed::rng_from_seed;

/// Which validation fold each record belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn new(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(DslError::InvalidParameter(format!(
                "need at least 2 folds, got {k}"
            )));
        }
        if fold_of.iter().any(|&f| f >= k) {
            return Err(DslError::InvalidParameter("fold index out of range".into()));
        }
        Ok(Self { fold_of, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Records held out in fold `f`, ascending.
    pub fn validation_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == f)
            .collect()
    }

    /// Records used to train the model for fold `f`, ascending.
    pub fn training_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != f)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class with a seeded generator, then deals its members to
/// folds round-robin. The dealing continues across classes, so fold sizes
/// differ by at most one both per class and overall.
pub fn stratified_folds(labels: &LabelVector, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(DslError::InvalidParameter(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if k > labels.len() {
        return Err(DslError::TooFewRecords {
            needed: k,
            got: labels.len(),
        });
    }
    let counts = labels.class_counts();
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < k) {
        return Err(DslError::ClassTooSmall {
            class,
            count,
            folds: k,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..labels.n_classes() {
        let mut members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels.as_slice()[i] == class)
            .collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    FoldAssignment::new(fold_of, k)
}

/// Out-of-fold class probabilities for one learner plus the `k` models that
/// produced them.
#[derive(Debug, Clone)]
pub struct OutOfFold {
    pub predictions: ProbabilityMatrix,
    pub fold_models: Vec<TrainedModel>,
}

/// Fits one model per fold on the other folds' records and predicts the
/// held-out records. `seed_for_fold` supplies each fold model's seed.
pub fn out_of_fold_predictions_seeded(
    spec: &LearnerSpec,
    dataset: &Dataset,
    folds: &FoldAssignment,
    seed_for_fold: impl Fn(usize) -> u64 + Sync,
) -> Result<OutOfFold> {
    let labels = dataset.require_labels()?;
    if folds.len() != dataset.n_rows() {
        return Err(DslError::Dimension(format!(
            "fold assignment covers {} records, dataset has {}",
            folds.len(),
            dataset.n_rows()
        )));
    }
    let results: Vec<(Vec<usize>, ProbabilityMatrix, TrainedModel)> = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            fit_fold(
                spec.with_seed(seed_for_fold(f)),
                &dataset.features,
                labels,
                folds,
                f,
            )
        })
        .collect::<Result<_>>()?;
    let (n, j) = (dataset.n_rows(), labels.n_classes());
    let mut oof = Array2::zeros((n, j));
    let mut fold_models = Vec::with_capacity(folds.k());
    for (rows, probs, model) in results {
        for (r, &i) in rows.iter().enumerate() {
            oof.row_mut(i).assign(&probs.row(r));
        }
        fold_models.push(model);
    }
    Ok(OutOfFold {
        predictions: ProbabilityMatrix::new(oof)?,
        fold_models,
    })
}

/// As [`out_of_fold_predictions_seeded`], every fold model using `spec.seed`.
pub fn out_of_fold_predictions(
    spec: &LearnerSpec,
    dataset: &Dataset,
    folds: &FoldAssignment,
) -> Result<OutOfFold> {
    out_of_fold_predictions_seeded(spec, dataset, folds, |_| spec.seed)
}

pub(crate) fn fit_fold(
    spec: LearnerSpec,
    features: &FeatureMatrix,
    labels: &LabelVector,
    folds: &FoldAssignment,
    f: usize,
) -> Result<(Vec<usize>, ProbabilityMatrix, TrainedModel)> {
    let train = folds.training_indices(f);
    let valid = folds.validation_indices(f);
    let model = fit(&spec, &features.select_rows(&train), &labels.select(&train))?;
    let probs = model.predict_proba(&features.select_rows(&valid))?;
    Ok((valid, probs, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{KnnParams, LearnerKind, LearnerParams};
    use proptest::prelude::*;

    fn labels(v: &[usize], j: usize) -> LabelVector {
        LabelVector::new(v.to_vec(), j).unwrap()
    }

    #[test]
    fn balanced_classes_spread_one_per_fold() {
        let y = labels(&[0, 0, 0, 1, 1, 1], 2);
        let folds = stratified_folds(&y, 3, 17).unwrap();
        for f in 0..3 {
            let members = folds.validation_indices(f);
            let classes: Vec<usize> = members.iter().map(|&i| y.as_slice()[i]).collect();
            assert_eq!(classes.iter().filter(|&&c| c == 0).count(), 1);
            assert_eq!(classes.iter().filter(|&&c| c == 1).count(), 1);
        }
    }

    #[test]
    fn too_small_class_is_rejected() {
        let y = labels(&[0, 0, 0, 1, 1], 2);
        assert!(matches!(
            stratified_folds(&y, 3, 0),
            Err(DslError::ClassTooSmall {
                class: 1,
                count: 2,
                folds: 3
            })
        ));
        assert!(stratified_folds(&labels(&[0, 1], 2), 3, 0).is_err());
        assert!(stratified_folds(&labels(&[0, 1, 0, 1], 2), 1, 0).is_err());
    }

    #[test]
    fn prior_learner_sees_only_the_complement() {
        let y = labels(&[0, 0, 1, 1, 0, 1], 2);
        let x =
            FeatureMatrix::from_rows(&(0..6).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let ds = Dataset::labeled(x, y.clone()).unwrap();
        let folds = stratified_folds(&y, 3, 5).unwrap();
        let out = out_of_fold_predictions(
            &LearnerSpec::default_for(LearnerKind::DummyPrior),
            &ds,
            &folds,
        )
        .unwrap();
        for i in 0..6 {
            let complement = folds.training_indices(folds.fold_of()[i]);
            let zeros = complement.iter().filter(|&&r| y.as_slice()[r] == 0).count() as f64;
            let expected = [
                zeros / complement.len() as f64,
                1.0 - zeros / complement.len() as f64,
            ];
            assert_eq!(out.predictions.row(i).to_vec(), expected.to_vec());
        }
        assert_eq!(out.fold_models.len(), 3);
    }

    #[test]
    fn memorizing_learner_predicts_the_other_copy() {
        // two clusters, each record duplicated; with k=2 the duplicates land
        // in different folds, so 1-NN answers from the twin in the other fold
        let base = [(0.0, 0usize), (0.1, 0), (5.0, 1), (5.1, 1)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..2 {
            for &(v, c) in &base {
                rows.push(vec![v]);
                y.push(c);
            }
        }
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y = labels(&y, 2);
        let ds = Dataset::labeled(x, y.clone()).unwrap();
        let folds = FoldAssignment::new(vec![0, 0, 0, 0, 1, 1, 1, 1], 2).unwrap();
        let spec = LearnerSpec::new(LearnerParams::Knn(KnnParams { neighbors: 1 }), 0);
        let out = out_of_fold_predictions(&spec, &ds, &folds).unwrap();
        for i in 0..8 {
            assert_eq!(out.predictions.row(i)[y.as_slice()[i]], 1.0);
        }
        // the model for fold 0 was trained on records 4..8 only
        let crate::learners::ModelBody::Knn(m) = &out.fold_models[0].body else {
            panic!()
        };
        assert_eq!(m.train.column(0).to_vec(), vec![0.0, 0.1, 5.0, 5.1]);
    }

    fn label_strategy() -> impl Strategy<Value = (Vec<usize>, usize, usize)> {
        (2usize..5, 2usize..5).prop_flat_map(|(j, k)| {
            proptest::collection::vec(0..j, (j * k)..80).prop_map(move |mut v| {
                // guarantee every class has at least k members
                for c in 0..j {
                    for r in 0..k {
                        v[c * k + r] = c;
                    }
                }
                (v, j, k)
            })
        })
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance((y, j, k) in label_strategy(), seed in any::<u64>()) {
            let y = labels(&y, j);
            let folds = stratified_folds(&y, k, seed).unwrap();
            prop_assert_eq!(folds.len(), y.len());
            let sizes = folds.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), y.len());
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for c in 0..j {
                let mut per = vec![0usize; k];
                for (i, &f) in folds.fold_of().iter().enumerate() {
                    if y.as_slice()[i] == c { per[f] += 1; }
                }
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            prop_assert_eq!(&folds, &stratified_folds(&y, k, seed).unwrap());
        }
    }
}
