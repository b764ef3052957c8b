//! Trainable parameter blocks and the Adam update.

use super::matrix::{Matrix, Scalar};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One named weight matrix with its gradient accumulator and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<F: Scalar> {
    pub name: String,
    pub value: Matrix<F>,
    pub grad: Matrix<F>,
    pub adam_m: Matrix<F>,
    pub adam_v: Matrix<F>,
    pub step_count: u64,
}

impl<F: Scalar> ParamBlock<F> {
    pub fn new(name: impl Into<String>, value: Matrix<F>) -> Self {
        let (rows, cols) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(rows, cols),
            adam_m: Matrix::zeros(rows, cols),
            adam_v: Matrix::zeros(rows, cols),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::ZERO);
    }

    pub fn param_count(&self) -> usize {
        self.value.len()
    }
}

/// Glorot-uniform sample: U(-limit, limit) with limit = sqrt(6/(fan_in+fan_out)),
/// fans taken from the matrix shape. Values are drawn in f64 so f32 and f64
/// instantiations of one seed agree up to rounding.
pub fn glorot_uniform<F: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| F::from_f64(rng.gen_range(-limit..limit)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam update in place. The gradient is consumed (zeroed)
/// and the step count advances even when the gradient is zero.
pub fn adam_step<F: Scalar>(block: &mut ParamBlock<F>, cfg: &AdamConfig) {
    block.step_count += 1;
    let t = block.step_count as i32;
    let lr = F::from_f64(cfg.learning_rate);
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let eps = F::from_f64(cfg.epsilon);
    let m_correction = F::ONE - b1.powi(t);
    let v_correction = F::ONE - b2.powi(t);

    let n = block.value.len();
    for i in 0..n {
        let g = block.grad.data()[i];
        let m = b1 * block.adam_m.data()[i] + (F::ONE - b1) * g;
        let v = b2 * block.adam_v.data()[i] + (F::ONE - b2) * g * g;
        block.adam_m.data_mut()[i] = m;
        block.adam_v.data_mut()[i] = v;
        let m_hat = m / m_correction;
        let v_hat = v / v_correction;
        block.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    block.zero_grad();
}
