//! Training losses (mean-reduced) and the numerically stable softmax.

use super::matrix::{Matrix, Scalar};
use super::NnError;

/// Probabilities inside cross-entropy are clamped to [CLAMP, 1 - CLAMP].
pub const PROBABILITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    BinaryCe,
    CategoricalCe,
}

/// Loss value and gradient with respect to the prediction.
///
/// mse and binary_ce average over every element; categorical_ce sums over
/// classes within a row (target rows are one-hot) and averages over rows.
pub fn loss<F: Scalar>(
    kind: LossKind,
    prediction: &Matrix<F>,
    target: &Matrix<F>,
) -> Result<(F, Matrix<F>), NnError> {
    if prediction.shape() != target.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "loss prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let clamp_lo = F::from_f64(PROBABILITY_CLAMP);
    let clamp_hi = F::ONE - clamp_lo;
    let n_elems = F::from_f64(prediction.len() as f64);
    let n_rows = F::from_f64(prediction.rows() as f64);

    let mut grad = Matrix::zeros(prediction.rows(), prediction.cols());
    let mut total = F::ZERO;
    match kind {
        LossKind::Mse => {
            for i in 0..prediction.len() {
                let d = prediction.data()[i] - target.data()[i];
                total += d * d;
                grad.data_mut()[i] = F::from_f64(2.0) * d / n_elems;
            }
            total = total / n_elems;
        }
        LossKind::BinaryCe => {
            for i in 0..prediction.len() {
                let p = prediction.data()[i].maximum(clamp_lo).minimum(clamp_hi);
                let y = target.data()[i];
                total += -(y * p.ln() + (F::ONE - y) * (F::ONE - p).ln());
                grad.data_mut()[i] = (-y / p + (F::ONE - y) / (F::ONE - p)) / n_elems;
            }
            total = total / n_elems;
        }
        LossKind::CategoricalCe => {
            for i in 0..prediction.len() {
                let p = prediction.data()[i].maximum(clamp_lo).minimum(clamp_hi);
                let y = target.data()[i];
                total += -(y * p.ln());
                grad.data_mut()[i] = -y / p / n_rows;
            }
            total = total / n_rows;
        }
    }
    Ok((total, grad))
}

/// Max-subtracted softmax of one logit vector.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |a, b| a.maximum(b));
    let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(F::ZERO, |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows<F: Scalar>(logits: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        out.row_mut(r).copy_from_slice(&softmax(logits.row(r)));
    }
    out
}

/// Gradient through softmax: given probabilities p and dL/dp, return dL/dz
/// where z are the logits. Row-wise: dz = p ⊙ (dp − Σ dp·p).
pub fn softmax_backward<F: Scalar>(probs: &Matrix<F>, upstream: &Matrix<F>) -> Matrix<F> {
    assert_eq!(probs.shape(), upstream.shape());
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let mut dot = F::ZERO;
        for c in 0..probs.cols() {
            dot += upstream[(r, c)] * probs[(r, c)];
        }
        for c in 0..probs.cols() {
            out[(r, c)] = probs[(r, c)] * (upstream[(r, c)] - dot);
        }
    }
    out
}
