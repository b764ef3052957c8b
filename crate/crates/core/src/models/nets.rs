//! The three neural architectures wired from nncore layers: a feed-forward
//! classifier, a stacked recurrent classifier, and a convolutional-recurrent
//! hybrid with a two-way softmax head.

use crate::nncore::{
    dimension_shuffle, dropout_backward, dropout_forward, global_avg_pool,
    global_avg_pool_backward, softmax_rows, Activation, BatchNorm1d, BnCtx, Conv1dCtx,
    Conv1dLayer, DenseCtx, DenseLayer, LstmCtx, LstmLayer, LstmReturn, LstmSignal, Matrix, Mode,
    NnError, ParamBlock, Scalar, SequenceTensor,
};
use crate::windowing::WINDOW_HOURS;
use rand_chacha::ChaCha8Rng;

fn hconcat<F: Scalar>(parts: &[Matrix<F>]) -> Matrix<F> {
    let rows = parts[0].rows();
    let cols = parts.iter().map(|p| p.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = out.row_mut(r);
        let mut at = 0;
        for p in parts {
            row[at..at + p.cols()].copy_from_slice(p.row(r));
            at += p.cols();
        }
    }
    out
}

fn col_block<F: Scalar>(m: &Matrix<F>, start: usize, width: usize) -> Matrix<F> {
    Matrix::from_fn(m.rows(), width, |r, c| m[(r, start + c)])
}

fn relu_seq<F: Scalar>(x: &SequenceTensor<F>) -> SequenceTensor<F> {
    let data = x.data().iter().map(|&v| v.maximum(F::ZERO)).collect();
    SequenceTensor::from_vec(x.batch(), x.timesteps(), x.channels(), data)
}

/// Gate the upstream gradient by the pre-activation sign (ReLU derivative).
fn relu_gate_seq<F: Scalar>(
    upstream: &SequenceTensor<F>,
    pre_relu: &SequenceTensor<F>,
) -> SequenceTensor<F> {
    let data = upstream
        .data()
        .iter()
        .zip(pre_relu.data())
        .map(|(&d, &z)| if z > F::ZERO { d } else { F::ZERO })
        .collect();
    SequenceTensor::from_vec(
        upstream.batch(),
        upstream.timesteps(),
        upstream.channels(),
        data,
    )
}

/// Flattened 12-value window → three ReLU hidden layers → sigmoid scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<F: Scalar> {
    pub h1: DenseLayer<F>,
    pub h2: DenseLayer<F>,
    pub h3: DenseLayer<F>,
    pub out: DenseLayer<F>,
}

pub struct MlpCtx<F: Scalar> {
    c1: DenseCtx<F>,
    c2: DenseCtx<F>,
    c3: DenseCtx<F>,
    c4: DenseCtx<F>,
}

impl<F: Scalar> MlpNet<F> {
    pub fn new(widths: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        Self {
            h1: DenseLayer::new("mlp.h1", WINDOW_HOURS, widths[0], Activation::Relu, rng),
            h2: DenseLayer::new("mlp.h2", widths[0], widths[1], Activation::Relu, rng),
            h3: DenseLayer::new("mlp.h3", widths[1], widths[2], Activation::Relu, rng),
            out: DenseLayer::new("mlp.out", widths[2], 1, Activation::Sigmoid, rng),
        }
    }

    pub fn forward(&self, x: &Matrix<F>) -> Result<(Matrix<F>, MlpCtx<F>), NnError> {
        let (a1, c1) = self.h1.forward(x)?;
        let (a2, c2) = self.h2.forward(&a1)?;
        let (a3, c3) = self.h3.forward(&a2)?;
        let (y, c4) = self.out.forward(&a3)?;
        Ok((y, MlpCtx { c1, c2, c3, c4 }))
    }

    pub fn infer(&self, x: &Matrix<F>) -> Result<Matrix<F>, NnError> {
        let a1 = self.h1.infer(x)?;
        let a2 = self.h2.infer(&a1)?;
        let a3 = self.h3.infer(&a2)?;
        self.out.infer(&a3)
    }

    pub fn backward(&mut self, ctx: &MlpCtx<F>, upstream: &Matrix<F>) -> Result<(), NnError> {
        let d3 = self.out.backward(&ctx.c4, upstream)?;
        let d2 = self.h3.backward(&ctx.c3, &d3)?;
        let d1 = self.h2.backward(&ctx.c2, &d2)?;
        self.h1.backward(&ctx.c1, &d1)?;
        Ok(())
    }

    pub fn params(&self) -> Vec<&ParamBlock<F>> {
        vec![
            &self.h1.weight,
            &self.h1.bias,
            &self.h2.weight,
            &self.h2.bias,
            &self.h3.weight,
            &self.h3.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock<F>> {
        vec![
            &mut self.h1.weight,
            &mut self.h1.bias,
            &mut self.h2.weight,
            &mut self.h2.bias,
            &mut self.h3.weight,
            &mut self.h3.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.param_count()).sum()
    }

    pub fn buffer_values(&self) -> Vec<F> {
        Vec::new()
    }

    pub fn load_buffers(&mut self, values: &[F]) -> Result<(), NnError> {
        expect_len(values, 0)
    }
}

/// 12×1 sequence → three stacked LSTMs (last state out) → tanh dense →
/// sigmoid scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNet<F: Scalar> {
    pub l1: LstmLayer<F>,
    pub l2: LstmLayer<F>,
    pub l3: LstmLayer<F>,
    pub dense: DenseLayer<F>,
    pub out: DenseLayer<F>,
}

pub struct LstmNetCtx<F: Scalar> {
    c1: LstmCtx<F>,
    c2: LstmCtx<F>,
    c3: LstmCtx<F>,
    cd: DenseCtx<F>,
    co: DenseCtx<F>,
}

impl<F: Scalar> LstmNet<F> {
    pub fn new(widths: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: LstmLayer::new("lstm.l1", 1, widths[0], rng),
            l2: LstmLayer::new("lstm.l2", widths[0], widths[1], rng),
            l3: LstmLayer::new("lstm.l3", widths[1], widths[2], rng),
            dense: DenseLayer::new("lstm.dense", widths[2], widths[3], Activation::Tanh, rng),
            out: DenseLayer::new("lstm.out", widths[3], 1, Activation::Sigmoid, rng),
        }
    }

    pub fn forward(&self, x: &SequenceTensor<F>) -> Result<(Matrix<F>, LstmNetCtx<F>), NnError> {
        let (s1, c1) = self.l1.forward(x, LstmReturn::FullSequence)?;
        let (s2, c2) = self.l2.forward(s1.sequence(), LstmReturn::FullSequence)?;
        let (s3, c3) = self.l3.forward(s2.sequence(), LstmReturn::LastState)?;
        let (d, cd) = self.dense.forward(s3.last_state())?;
        let (y, co) = self.out.forward(&d)?;
        Ok((y, LstmNetCtx { c1, c2, c3, cd, co }))
    }

    pub fn infer(&self, x: &SequenceTensor<F>) -> Result<Matrix<F>, NnError> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&mut self, ctx: &LstmNetCtx<F>, upstream: &Matrix<F>) -> Result<(), NnError> {
        let dd = self.out.backward(&ctx.co, upstream)?;
        let dh3 = self.dense.backward(&ctx.cd, &dd)?;
        let ds2 = self.l3.backward(&ctx.c3, &LstmSignal::LastState(dh3))?;
        let ds1 = self.l2.backward(&ctx.c2, &LstmSignal::FullSequence(ds2))?;
        self.l1.backward(&ctx.c1, &LstmSignal::FullSequence(ds1))?;
        Ok(())
    }

    pub fn params(&self) -> Vec<&ParamBlock<F>> {
        vec![
            &self.l1.w_input,
            &self.l1.w_recurrent,
            &self.l1.bias,
            &self.l2.w_input,
            &self.l2.w_recurrent,
            &self.l2.bias,
            &self.l3.w_input,
            &self.l3.w_recurrent,
            &self.l3.bias,
            &self.dense.weight,
            &self.dense.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock<F>> {
        vec![
            &mut self.l1.w_input,
            &mut self.l1.w_recurrent,
            &mut self.l1.bias,
            &mut self.l2.w_input,
            &mut self.l2.w_recurrent,
            &mut self.l2.bias,
            &mut self.l3.w_input,
            &mut self.l3.w_recurrent,
            &mut self.l3.bias,
            &mut self.dense.weight,
            &mut self.dense.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.param_count()).sum()
    }

    pub fn buffer_values(&self) -> Vec<F> {
        Vec::new()
    }

    pub fn load_buffers(&mut self, values: &[F]) -> Result<(), NnError> {
        expect_len(values, 0)
    }
}

/// Branch A: dimension shuffle → LSTM (last state) → dropout. Branch B:
/// three parallel conv→batchnorm→ReLU→pool blocks on the raw sequence.
/// Concatenated features feed a linear head whose rows are softmaxed into
/// [non-sepsis, sepsis] probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmFcnNet<F: Scalar> {
    pub lstm: LstmLayer<F>,
    pub convs: [Conv1dLayer<F>; 3],
    pub bns: [BatchNorm1d<F>; 3],
    pub head: DenseLayer<F>,
    pub dropout_rate: f64,
    lstm_width: usize,
    filters: [usize; 3],
}

pub struct LstmFcnCtx<F: Scalar> {
    lstm_ctx: LstmCtx<F>,
    dropout_mask: Option<Matrix<F>>,
    conv_ctxs: Vec<Conv1dCtx<F>>,
    bn_ctxs: Vec<BnCtx<F>>,
    pre_relu: Vec<SequenceTensor<F>>,
    head_ctx: DenseCtx<F>,
    probs: Matrix<F>,
}

impl<F: Scalar> LstmFcnNet<F> {
    pub fn new(
        lstm_width: usize,
        filters: [usize; 3],
        strides: [usize; 3],
        kernel: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lstm = LstmLayer::new("fcn.lstm", WINDOW_HOURS, lstm_width, rng);
        let convs = [
            Conv1dLayer::new("fcn.conv0", 1, filters[0], kernel, strides[0], rng),
            Conv1dLayer::new("fcn.conv1", 1, filters[1], kernel, strides[1], rng),
            Conv1dLayer::new("fcn.conv2", 1, filters[2], kernel, strides[2], rng),
        ];
        let bns = [
            BatchNorm1d::new("fcn.bn0", filters[0]),
            BatchNorm1d::new("fcn.bn1", filters[1]),
            BatchNorm1d::new("fcn.bn2", filters[2]),
        ];
        let feature_width = lstm_width + filters.iter().sum::<usize>();
        let head = DenseLayer::new("fcn.head", feature_width, 2, Activation::Linear, rng);
        Self {
            lstm,
            convs,
            bns,
            head,
            dropout_rate,
            lstm_width,
            filters,
        }
    }

    pub fn concat_width(&self) -> usize {
        self.lstm_width + self.filters.iter().sum::<usize>()
    }

    pub fn conv_output_lens(&self, timesteps: usize) -> [usize; 3] {
        [
            self.convs[0].output_len(timesteps),
            self.convs[1].output_len(timesteps),
            self.convs[2].output_len(timesteps),
        ]
    }

    pub fn forward_train(
        &mut self,
        x: &SequenceTensor<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Matrix<F>, LstmFcnCtx<F>), NnError> {
        let shuffled = dimension_shuffle(x);
        let (sig, lstm_ctx) = self.lstm.forward(&shuffled, LstmReturn::LastState)?;
        let (dropped, dropout_mask) =
            dropout_forward(sig.last_state(), self.dropout_rate, Mode::Train, rng);

        let mut parts = vec![dropped];
        let mut conv_ctxs = Vec::with_capacity(3);
        let mut bn_ctxs = Vec::with_capacity(3);
        let mut pre_relu = Vec::with_capacity(3);
        for i in 0..3 {
            let (c, cctx) = self.convs[i].forward(x)?;
            let (b, bctx) = self.bns[i].forward_train(&c)?;
            parts.push(global_avg_pool(&relu_seq(&b)));
            conv_ctxs.push(cctx);
            bn_ctxs.push(bctx);
            pre_relu.push(b);
        }
        let features = hconcat(&parts);
        let (z, head_ctx) = self.head.forward(&features)?;
        let probs = softmax_rows(&z);
        Ok((
            probs.clone(),
            LstmFcnCtx {
                lstm_ctx,
                dropout_mask,
                conv_ctxs,
                bn_ctxs,
                pre_relu,
                head_ctx,
                probs,
            },
        ))
    }

    pub fn forward_infer(&self, x: &SequenceTensor<F>) -> Result<Matrix<F>, NnError> {
        let shuffled = dimension_shuffle(x);
        let (sig, _) = self.lstm.forward(&shuffled, LstmReturn::LastState)?;
        let mut parts = vec![sig.last_state().clone()];
        for i in 0..3 {
            let (c, _) = self.convs[i].forward(x)?;
            let b = self.bns[i].forward_infer(&c)?;
            parts.push(global_avg_pool(&relu_seq(&b)));
        }
        let features = hconcat(&parts);
        let z = self.head.infer(&features)?;
        Ok(softmax_rows(&z))
    }

    /// Upstream is dL/d(probabilities); the softmax Jacobian is applied here.
    pub fn backward(&mut self, ctx: &LstmFcnCtx<F>, upstream: &Matrix<F>) -> Result<(), NnError> {
        let dz = crate::nncore::softmax_backward(&ctx.probs, upstream);
        let d_features = self.head.backward(&ctx.head_ctx, &dz)?;

        let d_dropped = col_block(&d_features, 0, self.lstm_width);
        let d_h = dropout_backward(&d_dropped, ctx.dropout_mask.as_ref());
        self.lstm
            .backward(&ctx.lstm_ctx, &LstmSignal::LastState(d_h))?;

        let mut offset = self.lstm_width;
        for i in 0..3 {
            let d_pool = col_block(&d_features, offset, self.filters[i]);
            offset += self.filters[i];
            let d_relu = global_avg_pool_backward(&d_pool, ctx.pre_relu[i].timesteps());
            let d_bn = relu_gate_seq(&d_relu, &ctx.pre_relu[i]);
            let d_conv = self.bns[i].backward(&ctx.bn_ctxs[i], &d_bn)?;
            self.convs[i].backward(&ctx.conv_ctxs[i], &d_conv)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&ParamBlock<F>> {
        let [c0, c1, c2] = &self.convs;
        let [b0, b1, b2] = &self.bns;
        vec![
            &self.lstm.w_input,
            &self.lstm.w_recurrent,
            &self.lstm.bias,
            &c0.weight,
            &c0.bias,
            &b0.gamma,
            &b0.beta,
            &c1.weight,
            &c1.bias,
            &b1.gamma,
            &b1.beta,
            &c2.weight,
            &c2.bias,
            &b2.gamma,
            &b2.beta,
            &self.head.weight,
            &self.head.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock<F>> {
        let [c0, c1, c2] = &mut self.convs;
        let [b0, b1, b2] = &mut self.bns;
        vec![
            &mut self.lstm.w_input,
            &mut self.lstm.w_recurrent,
            &mut self.lstm.bias,
            &mut c0.weight,
            &mut c0.bias,
            &mut b0.gamma,
            &mut b0.beta,
            &mut c1.weight,
            &mut c1.bias,
            &mut b1.gamma,
            &mut b1.beta,
            &mut c2.weight,
            &mut c2.bias,
            &mut b2.gamma,
            &mut b2.beta,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.param_count()).sum()
    }

    /// Batch-norm running statistics: not trainable, but part of the
    /// serialized state (inference needs them).
    pub fn buffer_values(&self) -> Vec<F> {
        let mut out = Vec::new();
        for bn in &self.bns {
            out.extend_from_slice(&bn.running_mean);
            out.extend_from_slice(&bn.running_var);
        }
        out
    }

    pub fn load_buffers(&mut self, values: &[F]) -> Result<(), NnError> {
        let expected: usize = self.bns.iter().map(|b| 2 * b.channels()).sum();
        expect_len(values, expected)?;
        let mut at = 0;
        for bn in &mut self.bns {
            let c = bn.channels();
            bn.running_mean.copy_from_slice(&values[at..at + c]);
            at += c;
            bn.running_var.copy_from_slice(&values[at..at + c]);
            at += c;
        }
        Ok(())
    }
}

fn expect_len<F>(values: &[F], expected: usize) -> Result<(), NnError> {
    if values.len() != expected {
        return Err(NnError::ShapeMismatch(format!(
            "expected {expected} buffer values, got {}",
            values.len()
        )));
    }
    Ok(())
}

/// Concatenated trainable parameter values in the documented block order.
pub fn trainable_values<F: Scalar>(params: &[&ParamBlock<F>]) -> Vec<F> {
    let mut out = Vec::with_capacity(params.iter().map(|p| p.param_count()).sum());
    for p in params {
        out.extend_from_slice(p.value.data());
    }
    out
}

/// Inverse of [`trainable_values`]; fails on a count mismatch.
pub fn load_trainable<F: Scalar>(
    params: &mut [&mut ParamBlock<F>],
    values: &[F],
) -> Result<(), NnError> {
    let expected: usize = params.iter().map(|p| p.param_count()).sum();
    if values.len() != expected {
        return Err(NnError::ShapeMismatch(format!(
            "expected {expected} parameter values, got {}",
            values.len()
        )));
    }
    let mut at = 0;
    for p in params.iter_mut() {
        let n = p.param_count();
        p.value.data_mut().copy_from_slice(&values[at..at + n]);
        at += n;
    }
    Ok(())
}
