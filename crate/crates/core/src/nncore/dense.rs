//! Fully connected layer with elementwise activation.

use super::matrix::{Matrix, Scalar};
use super::param::{glorot_uniform, ParamBlock};
use super::NnError;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => z.maximum(F::ZERO),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => F::ONE / (F::ONE + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// d act/d z given both the pre-activation and the activation value.
    fn derivative<F: Scalar>(self, z: F, y: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::ZERO {
                    F::ONE
                } else {
                    F::ZERO
                }
            }
            Activation::Tanh => F::ONE - y * y,
            Activation::Sigmoid => y * (F::ONE - y),
            Activation::Linear => F::ONE,
        }
    }
}

/// y = act(x W + b) over a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F: Scalar> {
    pub weight: ParamBlock<F>, // (in, out)
    pub bias: ParamBlock<F>,   // (1, out)
    pub activation: Activation,
}

/// Cached forward context consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCtx<F: Scalar> {
    x: Matrix<F>,
    z: Matrix<F>,
    y: Matrix<F>,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            weight: ParamBlock::new(format!("{name}.weight"), glorot_uniform(in_dim, out_dim, rng)),
            bias: ParamBlock::new(format!("{name}.bias"), Matrix::zeros(1, out_dim)),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.param_count() + self.bias.param_count()
    }

    pub fn forward(&self, x: &Matrix<F>) -> Result<(Matrix<F>, DenseCtx<F>), NnError> {
        if x.cols() != self.in_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "dense {} expects {} inputs, got {}",
                self.weight.name,
                self.in_dim(),
                x.cols()
            )));
        }
        let mut z = x.matmul(&self.weight.value);
        z.add_row_broadcast(&self.bias.value);
        let y = z.map(|v| self.activation.apply(v));
        Ok((
            y.clone(),
            DenseCtx {
                x: x.clone(),
                z,
                y,
            },
        ))
    }

    /// Inference-only forward that skips the cache.
    pub fn infer(&self, x: &Matrix<F>) -> Result<Matrix<F>, NnError> {
        if x.cols() != self.in_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "dense {} expects {} inputs, got {}",
                self.weight.name,
                self.in_dim(),
                x.cols()
            )));
        }
        let mut z = x.matmul(&self.weight.value);
        z.add_row_broadcast(&self.bias.value);
        Ok(z.map(|v| self.activation.apply(v)))
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, ctx: &DenseCtx<F>, upstream: &Matrix<F>) -> Result<Matrix<F>, NnError> {
        if upstream.shape() != ctx.y.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "dense {} upstream {:?} does not match output {:?}",
                self.weight.name,
                upstream.shape(),
                ctx.y.shape()
            )));
        }
        let mut dz = upstream.clone();
        for i in 0..dz.len() {
            let d = self.activation.derivative(ctx.z.data()[i], ctx.y.data()[i]);
            dz.data_mut()[i] *= d;
        }
        Matrix::gemm_into(F::ONE, &ctx.x, true, &dz, false, F::ONE, &mut self.weight.grad);
        self.bias.grad.add_assign_scaled(&dz.col_sums(), F::ONE);
        Ok(dz.matmul_t(&self.weight.value))
    }
}
