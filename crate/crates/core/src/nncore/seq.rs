//! Batched time-major sequence tensors and the shape-level sequence ops
//! (global average pooling, dimension shuffle).

use super::matrix::{Matrix, Scalar};

/// A batch of sequences laid out `[batch][timestep][channel]`. A single
/// 12-hour window is the `batch = 1, timesteps = 12, channels = 1` case.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor<F: Scalar> {
    batch: usize,
    timesteps: usize,
    channels: usize,
    data: Vec<F>,
}

impl<F: Scalar> SequenceTensor<F> {
    pub fn zeros(batch: usize, timesteps: usize, channels: usize) -> Self {
        assert!(
            batch > 0 && timesteps > 0 && channels > 0,
            "tensor dimensions must be positive"
        );
        Self {
            batch,
            timesteps,
            channels,
            data: vec![F::ZERO; batch * timesteps * channels],
        }
    }

    pub fn from_vec(batch: usize, timesteps: usize, channels: usize, data: Vec<F>) -> Self {
        assert!(
            batch > 0 && timesteps > 0 && channels > 0,
            "tensor dimensions must be positive"
        );
        assert_eq!(
            data.len(),
            batch * timesteps * channels,
            "data length must be batch*timesteps*channels"
        );
        Self {
            batch,
            timesteps,
            channels,
            data,
        }
    }

    /// One sequence of `timesteps` single-channel values.
    pub fn single(values: &[F]) -> Self {
        Self::from_vec(1, values.len(), 1, values.to_vec())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn get(&self, b: usize, t: usize, c: usize) -> F {
        self.data[(b * self.timesteps + t) * self.channels + c]
    }

    pub fn set(&mut self, b: usize, t: usize, c: usize, v: F) {
        self.data[(b * self.timesteps + t) * self.channels + c] = v;
    }

    /// Copy timestep `t` across the batch into a (batch x channels) matrix.
    pub fn step_matrix(&self, t: usize) -> Matrix<F> {
        let mut out = Matrix::zeros(self.batch, self.channels);
        for b in 0..self.batch {
            let start = (b * self.timesteps + t) * self.channels;
            out.row_mut(b)
                .copy_from_slice(&self.data[start..start + self.channels]);
        }
        out
    }

    pub fn set_step(&mut self, t: usize, step: &Matrix<F>) {
        assert_eq!(step.shape(), (self.batch, self.channels));
        for b in 0..self.batch {
            let start = (b * self.timesteps + t) * self.channels;
            self.data[start..start + self.channels].copy_from_slice(step.row(b));
        }
    }

    /// Reinterpret as a (batch x timesteps*channels) matrix, flattening each
    /// sequence row-major in time.
    pub fn to_matrix(&self) -> Matrix<F> {
        Matrix::from_vec(self.batch, self.timesteps * self.channels, self.data.clone())
    }

    /// Inverse of [`to_matrix`] for a known time/channel factorization.
    pub fn from_matrix(m: &Matrix<F>, timesteps: usize, channels: usize) -> Self {
        assert_eq!(m.cols(), timesteps * channels, "factorization must match");
        Self::from_vec(m.rows(), timesteps, channels, m.data().to_vec())
    }
}

/// Per-channel mean over time: (B, T, C) -> (B, C).
pub fn global_avg_pool<F: Scalar>(x: &SequenceTensor<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(x.batch(), x.channels());
    let steps = F::from_f64(x.timesteps() as f64);
    for b in 0..x.batch() {
        for t in 0..x.timesteps() {
            for c in 0..x.channels() {
                out[(b, c)] += x.get(b, t, c);
            }
        }
    }
    for v in out.data_mut() {
        *v = *v / steps;
    }
    out
}

/// Gradient of [`global_avg_pool`]: spread each channel gradient uniformly
/// over the pooled timesteps.
pub fn global_avg_pool_backward<F: Scalar>(
    upstream: &Matrix<F>,
    timesteps: usize,
) -> SequenceTensor<F> {
    let mut out = SequenceTensor::zeros(upstream.rows(), timesteps, upstream.cols());
    let scale = F::ONE / F::from_f64(timesteps as f64);
    for b in 0..upstream.rows() {
        for t in 0..timesteps {
            for c in 0..upstream.cols() {
                out.set(b, t, c, upstream[(b, c)] * scale);
            }
        }
    }
    out
}

/// Swap the time and channel axes: (B, T, C) -> (B, C, T). Applying it twice
/// is the identity; its gradient is itself.
pub fn dimension_shuffle<F: Scalar>(x: &SequenceTensor<F>) -> SequenceTensor<F> {
    let mut out = SequenceTensor::zeros(x.batch(), x.channels(), x.timesteps());
    for b in 0..x.batch() {
        for t in 0..x.timesteps() {
            for c in 0..x.channels() {
                out.set(b, c, t, x.get(b, t, c));
            }
        }
    }
    out
}
