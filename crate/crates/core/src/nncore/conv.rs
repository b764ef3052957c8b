//! 1-D convolution over time, no padding, arbitrary stride. The input is
//! unrolled into a patch matrix (one row per output position) so both passes
//! reduce to gemm.

use super::matrix::{Matrix, Scalar};
use super::param::{glorot_uniform, ParamBlock};
use super::seq::SequenceTensor;
use super::NnError;
use rand_chacha::ChaCha8Rng;

/// (B, T, C_in) -> (B, L, filters) with L = (T - kernel)/stride + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer<F: Scalar> {
    pub weight: ParamBlock<F>, // (kernel * in_channels, filters), tap-major rows
    pub bias: ParamBlock<F>,   // (1, filters)
    kernel: usize,
    stride: usize,
    in_channels: usize,
    filters: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1dCtx<F: Scalar> {
    patches: Matrix<F>, // (B*L, kernel*in_channels)
    batch: usize,
    out_len: usize,
    in_len: usize,
}

impl<F: Scalar> Conv1dLayer<F> {
    pub fn new(
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        Self {
            weight: ParamBlock::new(
                format!("{name}.weight"),
                glorot_uniform(kernel * in_channels, filters, rng),
            ),
            bias: ParamBlock::new(format!("{name}.bias"), Matrix::zeros(1, filters)),
            kernel,
            stride,
            in_channels,
            filters,
        }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn param_count(&self) -> usize {
        self.weight.param_count() + self.bias.param_count()
    }

    pub fn output_len(&self, timesteps: usize) -> usize {
        (timesteps - self.kernel) / self.stride + 1
    }

    fn unroll(&self, x: &SequenceTensor<F>, out_len: usize) -> Matrix<F> {
        let mut patches = Matrix::zeros(x.batch() * out_len, self.kernel * self.in_channels);
        for b in 0..x.batch() {
            for l in 0..out_len {
                let row = b * out_len + l;
                for k in 0..self.kernel {
                    for c in 0..self.in_channels {
                        patches[(row, k * self.in_channels + c)] =
                            x.get(b, l * self.stride + k, c);
                    }
                }
            }
        }
        patches
    }

    pub fn forward(
        &self,
        x: &SequenceTensor<F>,
    ) -> Result<(SequenceTensor<F>, Conv1dCtx<F>), NnError> {
        if x.channels() != self.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "conv {} expects {} channels, got {}",
                self.weight.name,
                self.in_channels,
                x.channels()
            )));
        }
        if x.timesteps() < self.kernel {
            return Err(NnError::KernelTooLarge {
                kernel: self.kernel,
                timesteps: x.timesteps(),
            });
        }
        let out_len = self.output_len(x.timesteps());
        let patches = self.unroll(x, out_len);
        let mut out = patches.matmul(&self.weight.value);
        out.add_row_broadcast(&self.bias.value);
        // (B*L, filters) rows are already laid out [b][l][filter].
        let tensor = SequenceTensor::from_vec(x.batch(), out_len, self.filters, out.data().to_vec());
        Ok((
            tensor,
            Conv1dCtx {
                patches,
                batch: x.batch(),
                out_len,
                in_len: x.timesteps(),
            },
        ))
    }

    pub fn backward(
        &mut self,
        ctx: &Conv1dCtx<F>,
        upstream: &SequenceTensor<F>,
    ) -> Result<SequenceTensor<F>, NnError> {
        if (upstream.batch(), upstream.timesteps(), upstream.channels())
            != (ctx.batch, ctx.out_len, self.filters)
        {
            return Err(NnError::ShapeMismatch(
                "conv upstream shape does not match forward output".into(),
            ));
        }
        let dy = Matrix::from_vec(
            ctx.batch * ctx.out_len,
            self.filters,
            upstream.data().to_vec(),
        );
        Matrix::gemm_into(F::ONE, &ctx.patches, true, &dy, false, F::ONE, &mut self.weight.grad);
        self.bias.grad.add_assign_scaled(&dy.col_sums(), F::ONE);

        // Scatter patch gradients back onto the (possibly overlapping) input.
        let d_patches = dy.matmul_t(&self.weight.value);
        let mut dx = SequenceTensor::zeros(ctx.batch, ctx.in_len, self.in_channels);
        for b in 0..ctx.batch {
            for l in 0..ctx.out_len {
                let row = b * ctx.out_len + l;
                for k in 0..self.kernel {
                    for c in 0..self.in_channels {
                        let t = l * self.stride + k;
                        let v = dx.get(b, t, c) + d_patches[(row, k * self.in_channels + c)];
                        dx.set(b, t, c, v);
                    }
                }
            }
        }
        Ok(dx)
    }
}
