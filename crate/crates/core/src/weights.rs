//! Convex combination weights over learners, chosen to minimize log loss.
//!
//! The objective `w -> log_loss(sum_q w_q P_q, y)` is convex on the
//! probability simplex. It is minimized by exponentiated-gradient (entropic
//! mirror) descent, which keeps every iterate strictly on the simplex.

use ndarray::Array2;

use crate::data::{LabelVector, ProbabilityMatrix, ROW_SUM_TOLERANCE};
use crate::error::{DslError, Result};
use crate::metrics::clip_probability;

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(DslError::InvalidParameter("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DslError::InvalidParameter(format!(
                "negative or non-finite weight in {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(DslError::InvalidParameter(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    /// All mass on learner `q`.
    pub fn vertex(m: usize, q: usize) -> Result<Self> {
        let mut w = vec![0.0; m];
        *w.get_mut(q)
            .ok_or_else(|| DslError::InvalidParameter(format!("vertex {q} of {m}")))? = 1.0;
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The `m` learners' predictions over the same records and classes.
#[derive(Debug, Clone)]
pub struct StackedPredictions {
    per_learner: Vec<ProbabilityMatrix>,
}

impl StackedPredictions {
    pub fn new(per_learner: Vec<ProbabilityMatrix>) -> Result<Self> {
        let first = per_learner.first().ok_or_else(|| {
            DslError::InvalidParameter("no learner predictions to combine".into())
        })?;
        let shape = (first.n_rows(), first.n_classes());
        if per_learner
            .iter()
            .any(|p| (p.n_rows(), p.n_classes()) != shape)
        {
            return Err(DslError::Dimension(
                "learner predictions differ in shape".into(),
            ));
        }
        Ok(Self { per_learner })
    }

    pub fn n_learners(&self) -> usize {
        self.per_learner.len()
    }

    pub fn learner(&self, q: usize) -> &ProbabilityMatrix {
        &self.per_learner[q]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProbabilityMatrix> {
        self.per_learner.iter()
    }
}

/// Weighted average of the learners' probability matrices.
pub fn combine(stacked: &StackedPredictions, weights: &WeightVector) -> Result<ProbabilityMatrix> {
    if weights.len() != stacked.n_learners() {
        return Err(DslError::Dimension(format!(
            "{} weights for {} learners",
            weights.len(),
            stacked.n_learners()
        )));
    }
    let first = stacked.learner(0);
    let mut out = Array2::zeros((first.n_rows(), first.n_classes()));
    for (p, &w) in stacked.iter().zip(weights.as_slice()) {
        out.scaled_add(w, &p.values());
    }
    ProbabilityMatrix::new(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub step_size: f64,
    pub max_iterations: usize,
    /// Stop once an iteration improves the loss by less than this.
    pub tolerance: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_iterations: 1000,
            tolerance: 1e-8,
        }
    }
}

/// The objective only needs each learner's probability of the true class.
struct TrueClassColumns {
    /// `m x n`, learner-major.
    cols: Vec<Vec<f64>>,
}

impl TrueClassColumns {
    fn new(stacked: &StackedPredictions, labels: &LabelVector) -> Self {
        let cols = stacked
            .iter()
            .map(|p| {
                let v = p.values();
                labels
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| v[[i, y]])
                    .collect()
            })
            .collect();
        Self { cols }
    }

    fn combined(&self, w: &[f64]) -> Vec<f64> {
        let n = self.cols[0].len();
        let mut out = vec![0.0; n];
        for (col, &wq) in self.cols.iter().zip(w) {
            for (o, &p) in out.iter_mut().zip(col) {
                *o += wq * p;
            }
        }
        out
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let pc = self.combined(w);
        -pc.iter().map(|&p| clip_probability(p).ln()).sum::<f64>() / pc.len() as f64
    }

    fn loss_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let pc: Vec<f64> = self.combined(w).into_iter().map(clip_probability).collect();
        let n = pc.len() as f64;
        let loss = -pc.iter().map(|p| p.ln()).sum::<f64>() / n;
        let grad = self
            .cols
            .iter()
            .map(|col| -col.iter().zip(&pc).map(|(p, c)| p / c).sum::<f64>() / n)
            .collect();
        (loss, grad)
    }
}

/// Minimizes log loss of the combined predictions over the simplex.
/// Returns the weights and the loss they achieve.
pub fn optimize_weights(
    stacked: &StackedPredictions,
    labels: &LabelVector,
) -> Result<(WeightVector, f64)> {
    optimize_weights_with(stacked, labels, &OptimizerSettings::default())
}

pub fn optimize_weights_with(
    stacked: &StackedPredictions,
    labels: &LabelVector,
    settings: &OptimizerSettings,
) -> Result<(WeightVector, f64)> {
    let first = stacked.learner(0);
    if first.n_rows() != labels.len() || first.n_classes() != labels.n_classes() {
        return Err(DslError::Dimension(
            "predictions do not match labels".into(),
        ));
    }
    let m = stacked.n_learners();
    let columns = TrueClassColumns::new(stacked, labels);
    let mut w = vec![1.0 / m as f64; m];
    if m == 1 {
        let loss = columns.loss(&w);
        return Ok((WeightVector::new(w)?, loss));
    }

    let (mut loss, mut grad) = columns.loss_and_gradient(&w);
    let mut best = (w.clone(), loss);
    for _ in 0..settings.max_iterations {
        // multiplicative update in log space; subtracting the max keeps exp finite
        let logits: Vec<f64> = w
            .iter()
            .zip(&grad)
            .map(|(&wq, &g)| {
                if wq > 0.0 {
                    wq.ln() - settings.step_size * g
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        w = unnorm.iter().map(|u| u / total).collect();

        let (next_loss, next_grad) = columns.loss_and_gradient(&w);
        let improvement = loss - next_loss;
        if next_loss < best.1 {
            best = (w.clone(), next_loss);
        }
        loss = next_loss;
        grad = next_grad;
        if improvement < settings.tolerance {
            break;
        }
    }

    // the objective is convex and vertices are feasible, so never return
    // anything worse than the best single learner
    let (mut weights, mut loss) = best;
    for q in 0..m {
        let mut vertex = vec![0.0; m];
        vertex[q] = 1.0;
        let vertex_loss = columns.loss(&vertex);
        if vertex_loss < loss {
            weights = vertex;
            loss = vertex_loss;
        }
    }
    renormalize(&mut weights);
    // report the loss the returned weights achieve on the combined matrix
    let loss_exact = columns.loss(&weights);
    debug_assert!((loss_exact - loss).abs() < 1e-12);
    Ok((WeightVector::new(weights)?, loss_exact))
}

fn renormalize(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::log_loss;
    use ndarray::array;

    fn pm(a: Array2<f64>) -> ProbabilityMatrix {
        ProbabilityMatrix::new(a).unwrap()
    }

    #[test]
    fn combine_examples() {
        let a = pm(array![[0.8, 0.2]]);
        let b = pm(array![[0.5, 0.5]]);
        let single = StackedPredictions::new(vec![a.clone()]).unwrap();
        assert_eq!(
            combine(&single, &WeightVector::new(vec![1.0]).unwrap()).unwrap(),
            a
        );

        let one_hot =
            StackedPredictions::new(vec![pm(array![[1.0, 0.0]]), pm(array![[0.0, 1.0]])]).unwrap();
        let out = combine(&one_hot, &WeightVector::uniform(2).unwrap()).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.5, 0.5]);

        let pair = StackedPredictions::new(vec![a, b]).unwrap();
        let out = combine(&pair, &WeightVector::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert!((out.values()[[0, 0]] - 0.59).abs() < 1e-15);
        assert!((out.values()[[0, 1]] - 0.41).abs() < 1e-15);
    }

    #[test]
    fn combine_rejects_wrong_length() {
        let s = StackedPredictions::new(vec![pm(array![[1.0, 0.0]])]).unwrap();
        assert!(combine(&s, &WeightVector::uniform(2).unwrap()).is_err());
    }

    #[test]
    fn single_learner_gets_all_weight() {
        let p = pm(array![[0.7, 0.3], [0.4, 0.6]]);
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let (w, loss) =
            optimize_weights(&StackedPredictions::new(vec![p.clone()]).unwrap(), &y).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(loss, log_loss(&p, &y).unwrap());
    }

    #[test]
    fn perfect_learner_dominates_uniform_one() {
        let y = LabelVector::new(vec![0, 1, 1, 0, 1], 2).unwrap();
        let perfect = pm(Array2::from_shape_fn((5, 2), |(i, c)| {
            f64::from(u8::from(y.as_slice()[i] == c))
        }));
        let uniform = pm(Array2::from_elem((5, 2), 0.5));
        let (w, loss) = optimize_weights(
            &StackedPredictions::new(vec![perfect, uniform]).unwrap(),
            &y,
        )
        .unwrap();
        assert!((w.as_slice()[0] - 1.0).abs() < 1e-3, "{w:?}");
        assert!(loss < 1e-3);
    }

    #[test]
    fn identical_learners_give_their_own_loss() {
        let p = pm(array![[0.7, 0.3], [0.4, 0.6], [0.1, 0.9]]);
        let y = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let (w, loss) = optimize_weights(
            &StackedPredictions::new(vec![p.clone(), p.clone()]).unwrap(),
            &y,
        )
        .unwrap();
        assert_eq!(w.len(), 2);
        assert!((loss - log_loss(&p, &y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn empty_stack_is_an_error() {
        assert!(StackedPredictions::new(Vec::new()).is_err());
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![1.5, -0.5]).is_err());
        assert_eq!(
            WeightVector::vertex(3, 1).unwrap().as_slice(),
            &[0.0, 1.0, 0.0]
        );
    }
}
