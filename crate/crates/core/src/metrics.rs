//! Multiclass log loss and accuracy.
//!
//! Log loss is both the reporting metric and the objective the weight
//! optimizer minimizes, so the clipping rule lives here and is shared.

use crate::data::{LabelVector, ProbabilityMatrix};
use crate::error::{DslError, Result};

/// Probabilities are clipped into `[EPS, 1 - EPS]` before taking logs.
pub const CLIP_EPS: f64 = 1e-15;

#[inline]
pub fn clip_probability(p: f64) -> f64 {
    p.clamp(CLIP_EPS, 1.0 - CLIP_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub log_loss: f64,
    pub accuracy: f64,
    pub n: usize,
}

fn check_shapes(probs: &ProbabilityMatrix, labels: &LabelVector) -> Result<()> {
    if probs.n_rows() != labels.len() {
        return Err(DslError::Dimension(format!(
            "{} prediction rows but {} labels",
            probs.n_rows(),
            labels.len()
        )));
    }
    if probs.n_classes() != labels.n_classes() {
        return Err(DslError::Dimension(format!(
            "{} probability columns but {} classes",
            probs.n_classes(),
            labels.n_classes()
        )));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn log_loss(probs: &ProbabilityMatrix, labels: &LabelVector) -> Result<f64> {
    check_shapes(probs, labels)?;
    let values = probs.values();
    let total: f64 = labels
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &y)| -clip_probability(values[[i, y]]).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Per-row argmax; ties go to the lowest class index.
pub fn argmax_labels(probs: &ProbabilityMatrix) -> Vec<usize> {
    probs
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Fraction of records whose argmax class equals the true label.
pub fn accuracy(probs: &ProbabilityMatrix, labels: &LabelVector) -> Result<f64> {
    check_shapes(probs, labels)?;
    let correct = argmax_labels(probs)
        .iter()
        .zip(labels.as_slice())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn evaluate_predictions(
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
) -> Result<MetricsRecord> {
    Ok(MetricsRecord {
        log_loss: log_loss(probs, labels)?,
        accuracy: accuracy(probs, labels)?,
        n: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn pm(a: Array2<f64>) -> ProbabilityMatrix {
        ProbabilityMatrix::new(a).unwrap()
    }

    #[test]
    fn perfect_prediction_is_clipped_not_zero() {
        let p = pm(array![[1.0, 0.0], [0.0, 1.0]]);
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let ll = log_loss(&p, &y).unwrap();
        assert_eq!(ll, -(1.0 - CLIP_EPS).ln());
        assert!(ll < 1e-14);
    }

    #[test]
    fn uniform_gives_ln_j() {
        let p = pm(Array2::from_elem((4, 10), 0.1));
        let y = LabelVector::new(vec![0, 3, 9, 5], 10).unwrap();
        assert!((log_loss(&p, &y).unwrap() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_by_two() {
        let p = pm(array![[0.8, 0.2], [0.4, 0.6]]);
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let expected = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((log_loss(&p, &y).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.366_984_6).abs() < 1e-6);
    }

    #[test]
    fn accuracy_examples() {
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        assert_eq!(
            accuracy(&pm(array![[0.9, 0.1], [0.2, 0.8]]), &y).unwrap(),
            1.0
        );
        assert_eq!(
            accuracy(&pm(array![[0.9, 0.1], [0.7, 0.3]]), &y).unwrap(),
            0.5
        );
        let tie = LabelVector::new(vec![0], 2).unwrap();
        assert_eq!(accuracy(&pm(array![[0.5, 0.5]]), &tie).unwrap(), 1.0);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_labels(&pm(array![[0.1, 0.9]])), vec![1]);
        assert_eq!(argmax_labels(&pm(array![[0.5, 0.5]])), vec![0]);
        assert_eq!(
            argmax_labels(&pm(array![[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]])),
            vec![2, 0]
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = pm(array![[0.5, 0.5]]);
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        assert!(log_loss(&p, &y).is_err());
        assert!(accuracy(&p, &y).is_err());
    }

    fn instance() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, usize)> {
        (2usize..5, 1usize..12).prop_flat_map(|(j, n)| {
            (
                proptest::collection::vec(0.01f64..1.0, n * j),
                proptest::collection::vec(0..j, n),
                Just(j),
            )
                .prop_map(move |(raw, y, j)| {
                    let mut a = Array2::from_shape_vec((n, j), raw).unwrap();
                    for mut r in a.rows_mut() {
                        let s = r.sum();
                        r.mapv_inplace(|v| v / s);
                    }
                    (a, y, j)
                })
        })
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant((a, y, j) in instance(), rot in 0usize..12) {
            let n = y.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let p = pm(a.clone());
            let labels = LabelVector::new(y.clone(), j).unwrap();
            let pp = p.select_rows(&perm);
            let yp = labels.select(&perm);
            let (l1, l2) = (log_loss(&p, &labels).unwrap(), log_loss(&pp, &yp).unwrap());
            prop_assert!((l1 - l2).abs() < 1e-12);
            prop_assert!(l1 >= 0.0);
            prop_assert_eq!(accuracy(&p, &labels).unwrap(), accuracy(&pp, &yp).unwrap());
        }

        #[test]
        fn accuracy_agrees_with_argmax((a, y, j) in instance()) {
            let p = pm(a);
            let labels = LabelVector::new(y.clone(), j).unwrap();
            let hits = argmax_labels(&p).iter().zip(&y).filter(|(a, b)| a == b).count();
            prop_assert_eq!(accuracy(&p, &labels).unwrap(), hits as f64 / y.len() as f64);
        }
    }
}
