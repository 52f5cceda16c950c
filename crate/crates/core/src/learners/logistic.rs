//! Multinomial logistic regression trained by full-batch gradient descent
//! on standardized features.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::data::{FeatureMatrix, LabelVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub learning_rate: f64,
    /// Coefficient of `0.5 * ||W||^2` added to the mean cross-entropy.
    /// Intercepts are not penalized.
    pub l2_penalty: f64,
    pub max_epochs: usize,
    /// Stop once the largest absolute gradient entry falls below this.
    pub tolerance: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            max_epochs: 500,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Per-column mean used for centering.
    pub mean: Vec<f64>,
    /// Per-column divisor; 1 for zero-variance columns.
    pub scale: Vec<f64>,
    /// `l x j` coefficients on standardized features.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Mean softmax cross-entropy plus the L2 term, and its gradient with
/// respect to the coefficients and intercepts.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    l2_penalty: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut probs = x.dot(weights) + bias;
    let mut loss = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_norm = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss -= row[y] - log_norm;
        row.mapv_inplace(|v| (v - log_norm).exp());
    }
    loss = loss / n + 0.5 * l2_penalty * weights.iter().map(|w| w * w).sum::<f64>();

    // probs now holds (P - Y) after subtracting the one-hot targets
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    let grad_w = x.t().dot(&probs) / n + weights * l2_penalty;
    let grad_b = probs.sum_axis(Axis(0)) / n;
    (loss, grad_w, grad_b)
}

fn standardize(x: ArrayView2<'_, f64>, mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut z = x.to_owned();
    for mut row in z.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    z
}

pub(crate) fn fit(
    params: &LogisticParams,
    features: &FeatureMatrix,
    labels: &LabelVector,
) -> LogisticModel {
    let x = features.values();
    let (n, l) = x.dim();
    let j = labels.n_classes();
    let mean: Vec<f64> = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let scale: Vec<f64> = (0..l)
        .map(|c| {
            let var = x
                .column(c)
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>()
                / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z = standardize(x, &mean, &scale);

    let mut weights = Array2::zeros((l, j));
    let mut bias = Array1::zeros(j);
    for _ in 0..params.max_epochs {
        let (_, gw, gb) = loss_and_gradient(
            &weights,
            &bias,
            z.view(),
            labels.as_slice(),
            params.l2_penalty,
        );
        let max_grad = gw
            .iter()
            .chain(gb.iter())
            .fold(0.0f64, |a, g| a.max(g.abs()));
        if max_grad < params.tolerance {
            break;
        }
        weights.scaled_add(-params.learning_rate, &gw);
        bias.scaled_add(-params.learning_rate, &gb);
    }
    LogisticModel {
        mean,
        scale,
        weights,
        bias,
    }
}

impl LogisticModel {
    pub(crate) fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let z = standardize(x, &self.mean, &self.scale);
        let mut scores = z.dot(&self.weights) + &self.bias;
        super::softmax_rows(&mut scores);
        scores
    }
}
