//! LSTM layer: sigmoid input/forget/output gates, tanh candidate cell and
//! output nonlinearity, zero initial states, full backpropagation through
//! time. Gate blocks are stored side by side in order input|forget|cell|output.

use super::matrix::{Matrix, Scalar};
use super::param::{glorot_uniform, ParamBlock};
use super::seq::SequenceTensor;
use super::NnError;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstmReturn {
    /// Final hidden state only: (batch x hidden).
    LastState,
    /// Hidden state at every step: (batch, timesteps, hidden).
    FullSequence,
}

/// Output of a forward pass, and equally the shape of the matching upstream
/// gradient fed to the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LstmSignal<F: Scalar> {
    LastState(Matrix<F>),
    FullSequence(SequenceTensor<F>),
}

impl<F: Scalar> LstmSignal<F> {
    pub fn last_state(&self) -> &Matrix<F> {
        match self {
            LstmSignal::LastState(m) => m,
            LstmSignal::FullSequence(_) => panic!("signal is a full sequence"),
        }
    }

    pub fn sequence(&self) -> &SequenceTensor<F> {
        match self {
            LstmSignal::FullSequence(t) => t,
            LstmSignal::LastState(_) => panic!("signal is a last state"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F: Scalar> {
    pub w_input: ParamBlock<F>,     // (in, 4h)
    pub w_recurrent: ParamBlock<F>, // (h, 4h)
    pub bias: ParamBlock<F>,        // (1, 4h)
    input: usize,
    hidden: usize,
}

/// Per-step activations cached for BPTT.
#[derive(Debug, Clone)]
pub struct LstmCtx<F: Scalar> {
    x: SequenceTensor<F>,
    // One (batch x hidden) matrix per timestep for each of these.
    gate_i: Vec<Matrix<F>>,
    gate_f: Vec<Matrix<F>>,
    gate_g: Vec<Matrix<F>>,
    gate_o: Vec<Matrix<F>>,
    cell: Vec<Matrix<F>>,
    cell_tanh: Vec<Matrix<F>>,
    hidden_states: Vec<Matrix<F>>,
    mode: LstmReturn,
}

impl<F: Scalar> LstmLayer<F> {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        // Forget-gate bias starts at +1 so early training retains cell state.
        let mut bias = Matrix::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            bias[(0, c)] = F::ONE;
        }
        Self {
            w_input: ParamBlock::new(
                format!("{name}.w_input"),
                glorot_uniform(input, 4 * hidden, rng),
            ),
            w_recurrent: ParamBlock::new(
                format!("{name}.w_recurrent"),
                glorot_uniform(hidden, 4 * hidden, rng),
            ),
            bias: ParamBlock::new(format!("{name}.bias"), bias),
            input,
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w_input.param_count() + self.w_recurrent.param_count() + self.bias.param_count()
    }

    fn sigmoid(z: F) -> F {
        F::ONE / (F::ONE + (-z).exp())
    }

    pub fn forward(
        &self,
        x: &SequenceTensor<F>,
        mode: LstmReturn,
    ) -> Result<(LstmSignal<F>, LstmCtx<F>), NnError> {
        if x.channels() != self.input {
            return Err(NnError::ShapeMismatch(format!(
                "lstm {} expects {} input channels, got {}",
                self.w_input.name,
                self.input,
                x.channels()
            )));
        }
        let batch = x.batch();
        let steps = x.timesteps();
        let h = self.hidden;

        let mut ctx = LstmCtx {
            x: x.clone(),
            gate_i: Vec::with_capacity(steps),
            gate_f: Vec::with_capacity(steps),
            gate_g: Vec::with_capacity(steps),
            gate_o: Vec::with_capacity(steps),
            cell: Vec::with_capacity(steps),
            cell_tanh: Vec::with_capacity(steps),
            hidden_states: Vec::with_capacity(steps),
            mode,
        };

        let mut h_prev = Matrix::zeros(batch, h);
        let mut c_prev = Matrix::zeros(batch, h);
        for t in 0..steps {
            let x_t = x.step_matrix(t);
            let mut z = x_t.matmul(&self.w_input.value);
            Matrix::gemm_into(F::ONE, &h_prev, false, &self.w_recurrent.value, false, F::ONE, &mut z);
            z.add_row_broadcast(&self.bias.value);

            let mut i_t = Matrix::zeros(batch, h);
            let mut f_t = Matrix::zeros(batch, h);
            let mut g_t = Matrix::zeros(batch, h);
            let mut o_t = Matrix::zeros(batch, h);
            for b in 0..batch {
                let row = z.row(b);
                for j in 0..h {
                    i_t[(b, j)] = Self::sigmoid(row[j]);
                    f_t[(b, j)] = Self::sigmoid(row[h + j]);
                    g_t[(b, j)] = row[2 * h + j].tanh();
                    o_t[(b, j)] = Self::sigmoid(row[3 * h + j]);
                }
            }

            let c_t = f_t
                .zip_map(&c_prev, |f, c| f * c)
                .zip_map(&i_t.zip_map(&g_t, |i, g| i * g), |a, b| a + b);
            let tanh_c = c_t.map(F::tanh);
            let h_t = o_t.zip_map(&tanh_c, |o, tc| o * tc);

            ctx.gate_i.push(i_t);
            ctx.gate_f.push(f_t);
            ctx.gate_g.push(g_t);
            ctx.gate_o.push(o_t);
            ctx.cell.push(c_t.clone());
            ctx.cell_tanh.push(tanh_c);
            ctx.hidden_states.push(h_t.clone());
            h_prev = h_t;
            c_prev = c_t;
        }

        let signal = match mode {
            LstmReturn::LastState => LstmSignal::LastState(h_prev),
            LstmReturn::FullSequence => {
                let mut seq = SequenceTensor::zeros(batch, steps, h);
                for (t, h_t) in ctx.hidden_states.iter().enumerate() {
                    seq.set_step(t, h_t);
                }
                LstmSignal::FullSequence(seq)
            }
        };
        Ok((signal, ctx))
    }

    /// Full BPTT. Accumulates all three parameter gradients and returns the
    /// gradient with respect to the input sequence.
    pub fn backward(
        &mut self,
        ctx: &LstmCtx<F>,
        upstream: &LstmSignal<F>,
    ) -> Result<SequenceTensor<F>, NnError> {
        let batch = ctx.x.batch();
        let steps = ctx.x.timesteps();
        let h = self.hidden;

        let upstream_step = |t: usize| -> Result<Option<Matrix<F>>, NnError> {
            match (ctx.mode, upstream) {
                (LstmReturn::LastState, LstmSignal::LastState(m)) => {
                    if m.shape() != (batch, h) {
                        return Err(NnError::ShapeMismatch(format!(
                            "lstm upstream {:?}, expected ({batch}, {h})",
                            m.shape()
                        )));
                    }
                    Ok((t == steps - 1).then(|| m.clone()))
                }
                (LstmReturn::FullSequence, LstmSignal::FullSequence(seq)) => {
                    if (seq.batch(), seq.timesteps(), seq.channels()) != (batch, steps, h) {
                        return Err(NnError::ShapeMismatch(
                            "lstm upstream sequence shape mismatch".into(),
                        ));
                    }
                    Ok(Some(seq.step_matrix(t)))
                }
                _ => Err(NnError::ShapeMismatch(
                    "lstm upstream kind does not match forward mode".into(),
                )),
            }
        };

        let mut dx = SequenceTensor::zeros(batch, steps, self.input);
        let mut dh_next = Matrix::zeros(batch, h);
        let mut dc_next = Matrix::zeros(batch, h);

        for t in (0..steps).rev() {
            let mut dh = dh_next;
            if let Some(u) = upstream_step(t)? {
                dh.add_assign_scaled(&u, F::ONE);
            }

            let i_t = &ctx.gate_i[t];
            let f_t = &ctx.gate_f[t];
            let g_t = &ctx.gate_g[t];
            let o_t = &ctx.gate_o[t];
            let tanh_c = &ctx.cell_tanh[t];

            // dc = dh * o * (1 - tanh(c)^2) + carried cell gradient
            let mut dc = dh.zip_map(o_t, |d, o| d * o);
            dc = dc.zip_map(tanh_c, |d, tc| d * (F::ONE - tc * tc));
            dc.add_assign_scaled(&dc_next, F::ONE);

            let c_prev = if t == 0 {
                Matrix::zeros(batch, h)
            } else {
                ctx.cell[t - 1].clone()
            };

            let d_o = dh.zip_map(tanh_c, |d, tc| d * tc);
            let d_i = dc.zip_map(g_t, |d, g| d * g);
            let d_g = dc.zip_map(i_t, |d, i| d * i);
            let d_f = dc.zip_map(&c_prev, |d, c| d * c);
            dc_next = dc.zip_map(f_t, |d, f| d * f);

            // Pre-activation gradients, packed input|forget|cell|output.
            let mut dz = Matrix::zeros(batch, 4 * h);
            for b in 0..batch {
                for j in 0..h {
                    let i = i_t[(b, j)];
                    let f = f_t[(b, j)];
                    let g = g_t[(b, j)];
                    let o = o_t[(b, j)];
                    dz[(b, j)] = d_i[(b, j)] * i * (F::ONE - i);
                    dz[(b, h + j)] = d_f[(b, j)] * f * (F::ONE - f);
                    dz[(b, 2 * h + j)] = d_g[(b, j)] * (F::ONE - g * g);
                    dz[(b, 3 * h + j)] = d_o[(b, j)] * o * (F::ONE - o);
                }
            }

            let x_t = ctx.x.step_matrix(t);
            let h_prev = if t == 0 {
                Matrix::zeros(batch, h)
            } else {
                ctx.hidden_states[t - 1].clone()
            };
            Matrix::gemm_into(F::ONE, &x_t, true, &dz, false, F::ONE, &mut self.w_input.grad);
            Matrix::gemm_into(F::ONE, &h_prev, true, &dz, false, F::ONE, &mut self.w_recurrent.grad);
            self.bias.grad.add_assign_scaled(&dz.col_sums(), F::ONE);

            dx.set_step(t, &dz.matmul_t(&self.w_input.value));
            dh_next = dz.matmul_t(&self.w_recurrent.value);
        }
        Ok(dx)
    }
}
