use rand::Rng;

use crate::autodiff::{Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};

/// Gate order used throughout: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Single LSTM layer. Each gate owns a `(hidden, input + hidden)` weight block
/// acting on `[x_t; h_{t-1}]` and a `(hidden, 1)` bias.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
}

/// Gate parameters placed on a tape, split into input and recurrent parts.
#[derive(Clone, Debug)]
pub struct BoundLstm {
    input_dim: usize,
    hidden_dim: usize,
    w_x: [NodeId; 4],
    w_h: [NodeId; 4],
    b: [NodeId; 4],
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_dim + hidden_dim;
        let weights = GATES.map(|g| store.add_uniform(format!("{name}.w_{g}"), hidden_dim, fan_in, fan_in, rng));
        let biases = GATES.map(|g| store.add_uniform(format!("{name}.b_{g}"), hidden_dim, 1, fan_in, rng));
        Self {
            input_dim,
            hidden_dim,
            weights,
            biases,
        }
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize) -> usize {
        4 * hidden_dim * (input_dim + hidden_dim) + 4 * hidden_dim
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundLstm> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for k in 0..4 {
            let w = tape.param(store, self.weights[k]);
            w_x.push(tape.slice(w, 0, 0, h, d)?);
            w_h.push(tape.slice(w, 0, d, h, h)?);
            b.push(tape.param(store, self.biases[k]));
        }
        let four = |v: Vec<NodeId>| -> [NodeId; 4] { v.try_into().expect("four gates") };
        let (w_x, w_h, b) = (four(w_x), four(w_h), four(b));
        Ok(BoundLstm {
            input_dim: d,
            hidden_dim: h,
            w_x,
            w_h,
            b,
        })
    }
}

impl BoundLstm {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// One LSTM step: sigmoid input/forget/output gates, tanh candidate, and
    /// `h_t = o * tanh(c_t)` with `c_t = f * c_{t-1} + i * g`.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h_prev: NodeId, c_prev: NodeId) -> Result<(NodeId, NodeId)> {
        let check = |id: NodeId, rows: usize, what: &'static str| -> Result<()> {
            let s = tape.shape(id);
            if s != (rows, 1) {
                return Err(Error::ShapeMismatch {
                    op: what,
                    lhs: (rows, 1),
                    rhs: s,
                });
            }
            Ok(())
        };
        check(x, self.input_dim, "lstm_step input")?;
        check(h_prev, self.hidden_dim, "lstm_step hidden")?;
        check(c_prev, self.hidden_dim, "lstm_step cell")?;
        let mut pre = [x; 4];
        for k in 0..4 {
            let a = tape.matmul(self.w_x[k], x)?;
            let r = tape.matmul(self.w_h[k], h_prev)?;
            let s = tape.add(a, r)?;
            pre[k] = tape.add(s, self.b[k])?;
        }
        self.finish(tape, pre, c_prev)
    }

    fn finish(&self, tape: &mut Tape, pre: [NodeId; 4], c_prev: NodeId) -> Result<(NodeId, NodeId)> {
        let i = tape.sigmoid(pre[0]);
        let f = tape.sigmoid(pre[1]);
        let o = tape.sigmoid(pre[2]);
        let g = tape.tanh(pre[3]);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }

    /// Unroll over the columns of `xs` (`input_dim x T`) from a zero state.
    /// Returns the hidden states in time order; when `reverse` is set the
    /// recurrence runs from the last column to the first.
    pub fn unroll(&self, tape: &mut Tape, xs: NodeId, reverse: bool) -> Result<Vec<NodeId>> {
        let (d, t_len) = tape.shape(xs);
        if d != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "lstm unroll",
                lhs: (self.input_dim, t_len),
                rhs: (d, t_len),
            });
        }
        // Input projections for the whole sequence at once.
        let mut proj = [xs; 4];
        for k in 0..4 {
            let p = tape.matmul(self.w_x[k], xs)?;
            proj[k] = tape.add(p, self.b[k])?;
        }
        let zeros = Matrix::zeros(self.hidden_dim, 1);
        let mut h = tape.leaf(zeros.clone());
        let mut c = tape.leaf(zeros);
        let mut out = vec![h; t_len];
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let mut pre = [xs; 4];
            for k in 0..4 {
                let a = tape.col(proj[k], t)?;
                let r = tape.matmul(self.w_h[k], h)?;
                pre[k] = tape.add(a, r)?;
            }
            let (h_new, c_new) = self.finish(tape, pre, c)?;
            h = h_new;
            c = c_new;
            out[t] = h;
        }
        Ok(out)
    }
}

/// Stacked LSTM layers; layer `l > 0` consumes the hidden states of `l - 1`.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmCell>,
}

impl LstmStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers.max(1))
            .map(|l| {
                let d = if l == 0 { input_dim } else { hidden_dim };
                LstmCell::new(store, &format!("{name}.l{l}"), d, hidden_dim, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize, num_layers: usize) -> usize {
        (0..num_layers.max(1))
            .map(|l| LstmCell::num_params(if l == 0 { input_dim } else { hidden_dim }, hidden_dim))
            .sum()
    }

    /// Hidden states of the top layer as a `hidden x T` node.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: NodeId) -> Result<NodeId> {
        let mut input = xs;
        for cell in &self.layers {
            let bound = cell.bind(tape, store)?;
            let hs = bound.unroll(tape, input, false)?;
            input = tape.concat_cols(&hs)?;
        }
        Ok(input)
    }
}
