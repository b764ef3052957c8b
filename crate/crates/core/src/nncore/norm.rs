//! Batch normalization over the channel axis and inverted dropout.

use super::matrix::{Matrix, Scalar};
use super::param::ParamBlock;
use super::seq::SequenceTensor;
use super::{Mode, NnError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 0.001;

/// Per-channel batch normalization of a (B, T, C) tensor; statistics pool
/// over batch and time. Training uses batch statistics (population variance)
/// and refreshes the running estimates; inference uses the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d<F: Scalar> {
    pub gamma: ParamBlock<F>, // (1, C)
    pub beta: ParamBlock<F>,  // (1, C)
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: f64,
    pub epsilon: f64,
    channels: usize,
}

#[derive(Debug, Clone)]
pub struct BnCtx<F: Scalar> {
    x_hat: SequenceTensor<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm1d<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: ParamBlock::new(format!("{name}.gamma"), Matrix::filled(1, channels, F::ONE)),
            beta: ParamBlock::new(format!("{name}.beta"), Matrix::zeros(1, channels)),
            running_mean: vec![F::ZERO; channels],
            running_var: vec![F::ONE; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_count(&self) -> usize {
        self.gamma.param_count() + self.beta.param_count()
    }

    fn check_channels(&self, x: &SequenceTensor<F>) -> Result<(), NnError> {
        if x.channels() != self.channels {
            return Err(NnError::ShapeMismatch(format!(
                "batchnorm {} expects {} channels, got {}",
                self.gamma.name,
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Training pass: normalize by batch statistics, update running stats.
    pub fn forward_train(
        &mut self,
        x: &SequenceTensor<F>,
    ) -> Result<(SequenceTensor<F>, BnCtx<F>), NnError> {
        self.check_channels(x)?;
        if x.batch() < 2 {
            return Err(NnError::DegenerateBatch(x.batch()));
        }
        let n = (x.batch() * x.timesteps()) as f64;
        let eps = F::from_f64(self.epsilon);
        let momentum = F::from_f64(self.momentum);

        let mut mean = vec![F::ZERO; self.channels];
        let mut var = vec![F::ZERO; self.channels];
        for b in 0..x.batch() {
            for t in 0..x.timesteps() {
                for c in 0..self.channels {
                    mean[c] += x.get(b, t, c);
                }
            }
        }
        for m in &mut mean {
            *m = *m / F::from_f64(n);
        }
        for b in 0..x.batch() {
            for t in 0..x.timesteps() {
                for c in 0..self.channels {
                    let d = x.get(b, t, c) - mean[c];
                    var[c] += d * d;
                }
            }
        }
        for v in &mut var {
            *v = *v / F::from_f64(n);
        }

        for c in 0..self.channels {
            self.running_mean[c] = momentum * self.running_mean[c] + (F::ONE - momentum) * mean[c];
            self.running_var[c] = momentum * self.running_var[c] + (F::ONE - momentum) * var[c];
        }

        let inv_std: Vec<F> = var.iter().map(|&v| F::ONE / (v + eps).sqrt()).collect();
        let mut x_hat = SequenceTensor::zeros(x.batch(), x.timesteps(), self.channels);
        let mut out = x_hat.clone();
        for b in 0..x.batch() {
            for t in 0..x.timesteps() {
                for c in 0..self.channels {
                    let xh = (x.get(b, t, c) - mean[c]) * inv_std[c];
                    x_hat.set(b, t, c, xh);
                    out.set(b, t, c, self.gamma.value[(0, c)] * xh + self.beta.value[(0, c)]);
                }
            }
        }
        Ok((out, BnCtx { x_hat, inv_std }))
    }

    /// Inference pass: deterministic, uses running statistics, no mutation.
    pub fn forward_infer(&self, x: &SequenceTensor<F>) -> Result<SequenceTensor<F>, NnError> {
        self.check_channels(x)?;
        let eps = F::from_f64(self.epsilon);
        let inv_std: Vec<F> = self
            .running_var
            .iter()
            .map(|&v| F::ONE / (v + eps).sqrt())
            .collect();
        let mut out = SequenceTensor::zeros(x.batch(), x.timesteps(), self.channels);
        for b in 0..x.batch() {
            for t in 0..x.timesteps() {
                for c in 0..self.channels {
                    let xh = (x.get(b, t, c) - self.running_mean[c]) * inv_std[c];
                    out.set(b, t, c, self.gamma.value[(0, c)] * xh + self.beta.value[(0, c)]);
                }
            }
        }
        Ok(out)
    }

    /// Train-mode backward. Accumulates gamma/beta gradients and returns the
    /// input gradient, accounting for the batch statistics' dependence on x.
    pub fn backward(
        &mut self,
        ctx: &BnCtx<F>,
        upstream: &SequenceTensor<F>,
    ) -> Result<SequenceTensor<F>, NnError> {
        self.check_channels(upstream)?;
        let x_hat = &ctx.x_hat;
        if (upstream.batch(), upstream.timesteps()) != (x_hat.batch(), x_hat.timesteps()) {
            return Err(NnError::ShapeMismatch(
                "batchnorm upstream shape does not match forward output".into(),
            ));
        }
        let n = F::from_f64((x_hat.batch() * x_hat.timesteps()) as f64);

        let mut sum_dy = vec![F::ZERO; self.channels];
        let mut sum_dy_xhat = vec![F::ZERO; self.channels];
        for b in 0..x_hat.batch() {
            for t in 0..x_hat.timesteps() {
                for c in 0..self.channels {
                    let dy = upstream.get(b, t, c);
                    sum_dy[c] += dy;
                    sum_dy_xhat[c] += dy * x_hat.get(b, t, c);
                }
            }
        }
        for c in 0..self.channels {
            self.gamma.grad[(0, c)] += sum_dy_xhat[c];
            self.beta.grad[(0, c)] += sum_dy[c];
        }

        let mut dx = SequenceTensor::zeros(x_hat.batch(), x_hat.timesteps(), self.channels);
        for b in 0..x_hat.batch() {
            for t in 0..x_hat.timesteps() {
                for c in 0..self.channels {
                    let dy = upstream.get(b, t, c);
                    let g = self.gamma.value[(0, c)];
                    let term = n * dy - sum_dy[c] - x_hat.get(b, t, c) * sum_dy_xhat[c];
                    dx.set(b, t, c, g * ctx.inv_std[c] * term / n);
                }
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout on a (batch x features) activation matrix. Training
/// zeroes each element with probability `rate` and scales survivors by
/// 1/(1-rate); inference is the identity and draws no randomness. The
/// returned mask (already scaled) drives the backward pass.
pub fn dropout_forward<F: Scalar>(
    x: &Matrix<F>,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> (Matrix<F>, Option<Matrix<F>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if mode == Mode::Infer || rate == 0.0 {
        return (x.clone(), None);
    }
    let scale = F::from_f64(1.0 / (1.0 - rate));
    let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
        if rng.gen_bool(rate) {
            F::ZERO
        } else {
            scale
        }
    });
    (x.zip_map(&mask, |v, m| v * m), Some(mask))
}

/// Backward through dropout: apply the same scaled mask; `None` means the
/// forward pass was an identity.
pub fn dropout_backward<F: Scalar>(upstream: &Matrix<F>, mask: Option<&Matrix<F>>) -> Matrix<F> {
    match mask {
        Some(m) => upstream.zip_map(m, |v, s| v * s),
        None => upstream.clone(),
    }
}
