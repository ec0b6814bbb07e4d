//! Dynamic computation tape over dense `f64` matrices.
//!
//! Every operation appends a node holding its primal value; the node ids are
//! therefore a topological order of the graph and the reverse pass is a single
//! sweep from the root down to id 0.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Jitter ladder used by [`Tape::gaussian_log_density`].
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// An exact factorization is attempted before any jitter is added.
const FACTOR_ATTEMPTS: [f64; 4] = [0.0, JITTER_LADDER[0], JITTER_LADDER[1], JITTER_LADDER[2]];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds the tape can record.
///
/// Binary elementwise ops broadcast an operand along any dimension of size 1.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Square,
    Scale(f64),
    Offset(f64),
    Clamp { lo: f64, hi: f64 },
    Sum,
    Dot,
    Slice { row: usize, col: usize, nrows: usize, ncols: usize },
    ConcatRows,
    ConcatCols,
    /// `log N(x | 0, cov + jitter I)` for a column vector `x`.
    GaussianLogDensity { jitter: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Square => "square",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Clamp { .. } => "clamp",
            Op::Sum => "sum",
            Op::Dot => "dot",
            Op::Slice { .. } => "slice",
            Op::ConcatRows => "concat_rows",
            Op::ConcatCols => "concat_cols",
            Op::GaussianLogDensity { .. } => "gaussian_log_density",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, NodeId)>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    m.shape()
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_shape(op: &Op, a: &Matrix, b: &Matrix) -> Result<(usize, usize)> {
    let (ra, ca) = shape(a);
    let (rb, cb) = shape(b);
    match (broadcast_dim(ra, rb), broadcast_dim(ca, cb)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch {
            op: op.name(),
            lhs: (ra, ca),
            rhs: (rb, cb),
        }),
    }
}

fn zip_broadcast(a: &Matrix, b: &Matrix, out: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    Matrix::from_fn(out.0, out.1, |i, j| {
        let x = a[(if ra == 1 { 0 } else { i }, if ca == 1 { 0 } else { j })];
        let y = b[(if rb == 1 { 0 } else { i }, if cb == 1 { 0 } else { j })];
        f(x, y)
    })
}

/// Sum `g` down to `target` shape (the reverse of broadcasting).
fn reduce_to(g: Matrix, target: (usize, usize)) -> Matrix {
    if g.shape() == target {
        return g;
    }
    let (r, c) = target;
    let mut out = Matrix::zeros(r, c);
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            out[(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j })] += g[(i, j)];
        }
    }
    out
}

fn factorize(cov: &Matrix, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = cov.nrows();
    let mut k = cov.clone();
    for i in 0..n {
        k[(i, i)] += jitter;
    }
    Cholesky::new(k)
}

/// Cholesky factor of `cov + jitter * I`, trying no jitter first and then
/// walking [`JITTER_LADDER`]; returns the factor and the jitter used.
pub fn cholesky_with_jitter(cov: &Matrix) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in &FACTOR_ATTEMPTS {
        if let Some(c) = factorize(cov, jitter) {
            return Ok((c, jitter));
        }
    }
    Err(Error::Factorization {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

fn log_density_from_chol(chol: &Cholesky<f64, Dyn>, x: &Matrix) -> f64 {
    let n = x.nrows() as f64;
    let l = chol.l_dirty();
    let logdet: f64 = 2.0 * (0..x.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let alpha = chol.solve(x);
    let quad = x.dot(&alpha);
    -0.5 * (n * LN_2PI + logdet + quad)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Primal of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[(0, 0)]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Matrix::from_element(1, 1, v))
    }

    pub fn column(&mut self, values: &[f64]) -> NodeId {
        self.leaf(Matrix::from_column_slice(values.len(), 1, values))
    }

    /// Leaf bound to a trainable parameter; its adjoint flows back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let node = self.leaf(store.get(id).value.clone());
        self.params.push((id, node));
        node
    }

    pub fn param_nodes(&self) -> &[(ParamId, NodeId)] {
        &self.params
    }

    /// Append a node, computing and caching its primal from the inputs.
    pub fn record(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("input node {} is not on the tape", bad.0)));
        }
        let value = self.forward(&op, inputs)?;
        Ok(self.push(op, inputs.to_vec(), value))
    }

    fn arity(op: &Op, inputs: &[NodeId]) -> Result<()> {
        let expected = match op {
            Op::Leaf => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul | Op::Dot => 2,
            Op::GaussianLogDensity { .. } => 2,
            Op::ConcatRows | Op::ConcatCols => {
                return if inputs.is_empty() {
                    Err(Error::invalid("concat needs at least one input"))
                } else {
                    Ok(())
                };
            }
            _ => 1,
        };
        if inputs.len() != expected {
            return Err(Error::invalid(format!(
                "{} takes {expected} inputs, got {}",
                op.name(),
                inputs.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, op: &Op, inputs: &[NodeId]) -> Result<Matrix> {
        Self::arity(op, inputs)?;
        let v = |k: usize| &self.nodes[inputs[k].0].value;
        let mismatch = |a: &Matrix, b: &Matrix| Error::ShapeMismatch {
            op: op.name(),
            lhs: a.shape(),
            rhs: b.shape(),
        };
        let out = match op {
            Op::Leaf => return Err(Error::invalid("leaf nodes are created with Tape::leaf")),
            Op::Add => {
                let s = broadcast_shape(op, v(0), v(1))?;
                zip_broadcast(v(0), v(1), s, |x, y| x + y)
            }
            Op::Sub => {
                let s = broadcast_shape(op, v(0), v(1))?;
                zip_broadcast(v(0), v(1), s, |x, y| x - y)
            }
            Op::Mul => {
                let s = broadcast_shape(op, v(0), v(1))?;
                zip_broadcast(v(0), v(1), s, |x, y| x * y)
            }
            Op::Div => {
                let s = broadcast_shape(op, v(0), v(1))?;
                zip_broadcast(v(0), v(1), s, |x, y| x / y)
            }
            Op::MatMul => {
                if v(0).ncols() != v(1).nrows() {
                    return Err(mismatch(v(0), v(1)));
                }
                v(0) * v(1)
            }
            Op::Transpose => v(0).transpose(),
            Op::Neg => -v(0),
            Op::Exp => v(0).map(f64::exp),
            Op::Log => v(0).map(f64::ln),
            Op::Tanh => v(0).map(f64::tanh),
            Op::Sigmoid => v(0).map(sigmoid),
            Op::Softplus => v(0).map(softplus),
            Op::Square => v(0).map(|x| x * x),
            Op::Scale(c) => v(0) * *c,
            Op::Offset(c) => v(0).add_scalar(*c),
            Op::Clamp { lo, hi } => v(0).map(|x| x.clamp(*lo, *hi)),
            Op::Sum => Matrix::from_element(1, 1, v(0).sum()),
            Op::Dot => {
                if v(0).shape() != v(1).shape() {
                    return Err(mismatch(v(0), v(1)));
                }
                Matrix::from_element(1, 1, v(0).dot(v(1)))
            }
            Op::Slice { row, col, nrows, ncols } => {
                let (r, c) = v(0).shape();
                if row + nrows > r || col + ncols > c {
                    return Err(Error::ShapeMismatch {
                        op: op.name(),
                        lhs: (r, c),
                        rhs: (row + nrows, col + ncols),
                    });
                }
                v(0).view((*row, *col), (*nrows, *ncols)).into_owned()
            }
            Op::ConcatRows => {
                let cols = v(0).ncols();
                let mut rows = 0;
                for k in 0..inputs.len() {
                    if v(k).ncols() != cols {
                        return Err(mismatch(v(0), v(k)));
                    }
                    rows += v(k).nrows();
                }
                let mut out = Matrix::zeros(rows, cols);
                let mut r = 0;
                for k in 0..inputs.len() {
                    let m = v(k);
                    out.view_mut((r, 0), m.shape()).copy_from(m);
                    r += m.nrows();
                }
                out
            }
            Op::ConcatCols => {
                let rows = v(0).nrows();
                let mut cols = 0;
                for k in 0..inputs.len() {
                    if v(k).nrows() != rows {
                        return Err(mismatch(v(0), v(k)));
                    }
                    cols += v(k).ncols();
                }
                let mut out = Matrix::zeros(rows, cols);
                let mut c = 0;
                for k in 0..inputs.len() {
                    let m = v(k);
                    out.view_mut((0, c), m.shape()).copy_from(m);
                    c += m.ncols();
                }
                out
            }
            Op::GaussianLogDensity { jitter } => {
                let (cov, x) = (v(0), v(1));
                if !cov.is_square() || x.ncols() != 1 || x.nrows() != cov.nrows() {
                    return Err(mismatch(cov, x));
                }
                let chol = factorize(cov, *jitter).ok_or(Error::Factorization { jitter: *jitter })?;
                Matrix::from_element(1, 1, log_density_from_chol(&chol, x))
            }
        };
        Ok(out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose, vec![a], value)
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        // Unary ops cannot fail on a node that is already on the tape.
        self.record(op, &[a]).expect("unary op on existing node")
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Softplus, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Square, a)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(c), a)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::Offset(c), a)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp { lo, hi }, a)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sum, a)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Dot, &[a, b])
    }

    pub fn slice(&mut self, a: NodeId, row: usize, col: usize, nrows: usize, ncols: usize) -> Result<NodeId> {
        self.record(Op::Slice { row, col, nrows, ncols }, &[a])
    }

    /// Element `(i, j)` as a 1x1 node.
    pub fn entry(&mut self, a: NodeId, i: usize, j: usize) -> Result<NodeId> {
        self.slice(a, i, j, 1, 1)
    }

    pub fn rows(&mut self, a: NodeId, row: usize, n: usize) -> Result<NodeId> {
        let cols = self.value(a).ncols();
        self.slice(a, row, 0, n, cols)
    }

    pub fn col(&mut self, a: NodeId, col: usize) -> Result<NodeId> {
        let rows = self.value(a).nrows();
        self.slice(a, 0, col, rows, 1)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.record(Op::ConcatRows, parts)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.record(Op::ConcatCols, parts)
    }

    /// Zero-mean Gaussian log-density of column `x` under `cov`, escalating the
    /// diagonal jitter along [`JITTER_LADDER`] (after an unjittered attempt)
    /// until the factorization succeeds.
    pub fn gaussian_log_density(&mut self, cov: NodeId, x: NodeId) -> Result<NodeId> {
        let mut last = Error::Factorization { jitter: 0.0 };
        for &jitter in &FACTOR_ATTEMPTS {
            match self.record(Op::GaussianLogDensity { jitter }, &[cov, x]) {
                Ok(id) => return Ok(id),
                Err(e @ Error::Factorization { .. }) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }

    /// Reverse sweep from a scalar root with unit seed.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let s = self.shape(root);
        if s != (1, 1) {
            return Err(Error::NotScalar(s));
        }
        self.backward_seeded(root, Matrix::from_element(1, 1, 1.0))
    }

    /// Reverse sweep starting from `root` with an arbitrary adjoint `seed`.
    pub fn backward_seeded(&self, root: NodeId, seed: Matrix) -> Result<Gradients> {
        let s = self.shape(root);
        if seed.shape() != s {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: s,
                rhs: seed.shape(),
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn propagate(&self, id: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        let val = |k: usize| &self.nodes[ins[k].0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                accumulate(adj, ins[0], reduce_to(g.clone(), val(0).shape()));
                accumulate(adj, ins[1], reduce_to(g.clone(), val(1).shape()));
            }
            Op::Sub => {
                accumulate(adj, ins[0], reduce_to(g.clone(), val(0).shape()));
                accumulate(adj, ins[1], reduce_to(-g, val(1).shape()));
            }
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                let ga = zip_broadcast(g, b, g.shape(), |x, y| x * y);
                let gb = zip_broadcast(g, a, g.shape(), |x, y| x * y);
                accumulate(adj, ins[0], reduce_to(ga, a.shape()));
                accumulate(adj, ins[1], reduce_to(gb, b.shape()));
            }
            Op::Div => {
                let (a, b) = (val(0), val(1));
                let ga = zip_broadcast(g, b, g.shape(), |x, y| x / y);
                let q = zip_broadcast(out, b, g.shape(), |o, y| o / y);
                let gb = g.zip_map(&q, |x, y| -x * y);
                accumulate(adj, ins[0], reduce_to(ga, a.shape()));
                accumulate(adj, ins[1], reduce_to(gb, b.shape()));
            }
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                accumulate(adj, ins[0], g * b.transpose());
                accumulate(adj, ins[1], a.transpose() * g);
            }
            Op::Transpose => accumulate(adj, ins[0], g.transpose()),
            Op::Neg => accumulate(adj, ins[0], -g),
            Op::Exp => accumulate(adj, ins[0], g.component_mul(out)),
            Op::Log => accumulate(adj, ins[0], g.component_div(val(0))),
            Op::Tanh => accumulate(adj, ins[0], g.zip_map(out, |x, t| x * (1.0 - t * t))),
            Op::Sigmoid => accumulate(adj, ins[0], g.zip_map(out, |x, s| x * s * (1.0 - s))),
            Op::Softplus => accumulate(adj, ins[0], g.zip_map(val(0), |x, u| x * sigmoid(u))),
            Op::Square => accumulate(adj, ins[0], g.zip_map(val(0), |x, u| 2.0 * x * u)),
            Op::Scale(c) => accumulate(adj, ins[0], g * *c),
            Op::Offset(_) => accumulate(adj, ins[0], g.clone()),
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(val(0), |x, u| if u < lo || u > hi { 0.0 } else { x });
                accumulate(adj, ins[0], d)
            }
            Op::Sum => {
                let (r, c) = val(0).shape();
                accumulate(adj, ins[0], Matrix::from_element(r, c, g[(0, 0)]))
            }
            Op::Dot => {
                let s = g[(0, 0)];
                accumulate(adj, ins[0], val(1) * s);
                accumulate(adj, ins[1], val(0) * s);
            }
            Op::Slice { row, col, .. } => {
                let target = val(0).shape();
                let slot = adj[ins[0].0].get_or_insert_with(|| Matrix::zeros(target.0, target.1));
                let mut view = slot.view_mut((*row, *col), g.shape());
                view += g;
            }
            Op::ConcatRows => {
                let mut r = 0;
                for k in 0..ins.len() {
                    let s = val(k).shape();
                    accumulate(adj, ins[k], g.view((r, 0), s).into_owned());
                    r += s.0;
                }
            }
            Op::ConcatCols => {
                let mut c = 0;
                for k in 0..ins.len() {
                    let s = val(k).shape();
                    accumulate(adj, ins[k], g.view((0, c), s).into_owned());
                    c += s.1;
                }
            }
            Op::GaussianLogDensity { jitter } => {
                let (cov, x) = (val(0), val(1));
                let chol = factorize(cov, *jitter).expect("factorization succeeded on forward pass");
                let alpha = chol.solve(x);
                let inv = chol.inverse();
                let s = g[(0, 0)];
                let gcov = (&alpha * alpha.transpose() - inv) * (0.5 * s);
                accumulate(adj, ins[0], gcov);
                accumulate(adj, ins[1], alpha * (-s));
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adj[id.0] {
        Some(existing) => *existing += g,
        slot => *slot = Some(g),
    }
}

/// Adjoints produced by a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `id`, or `None` when the node is not upstream of the root.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.adj.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of `id`, zero-filled when unreachable.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = tape.shape(id);
            Matrix::zeros(r, c)
        })
    }

    /// Gradient contributions for every parameter leaf on the tape.
    pub fn param_grads(&self, tape: &Tape) -> Vec<(ParamId, Matrix)> {
        tape.param_nodes()
            .iter()
            .filter_map(|&(pid, node)| self.get(node).map(|g| (pid, g.clone())))
            .collect()
    }

    /// Add every parameter adjoint into the store's gradient buffers.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (pid, g) in self.param_grads(tape) {
            store.get_mut(pid).grad += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn add_two_scalars() {
        let mut t = Tape::new();
        let a = t.constant_scalar(2.0);
        let b = t.constant_scalar(3.0);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.scalar(c), 5.0);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i = t.leaf(Matrix::identity(2, 2));
        let x = t.leaf(col(&[1.0, 2.0]));
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), &col(&[1.0, 2.0]));
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let u = t.constant_scalar(0.0);
        let s = t.softplus(u);
        assert!((t.scalar(s) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(-800.0)).is_finite());
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(4, 2));
        match t.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (4, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = t.leaf(Matrix::zeros(3, 2));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(col(&[1.0, -2.0, 3.0]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(&t, x), col(&[1.0, 1.0, 1.0]));
    }

    #[test]
    fn backward_of_squared_norm() {
        let mut t = Tape::new();
        let w = t.leaf(col(&[1.0, 2.0]));
        let d = t.dot(w, w).unwrap();
        let g = t.backward(d).unwrap();
        assert_eq!(g.wrt(&t, w), col(&[2.0, 4.0]));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut t = Tape::new();
        let x = t.leaf(col(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NotScalar((2, 1)))));
    }

    #[test]
    fn unreachable_nodes_have_zero_adjoint() {
        let mut t = Tape::new();
        let x = t.constant_scalar(1.0);
        let y = t.constant_scalar(2.0);
        let z = t.exp(x);
        let g = t.backward(z).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(&t, y)[(0, 0)], 0.0);
    }

    #[test]
    fn inputs_precede_outputs() {
        let mut t = Tape::new();
        let a = t.leaf(col(&[0.5, 1.5]));
        let b = t.tanh(a);
        let c = t.mul(a, b).unwrap();
        let d = t.sum(c);
        for id in [b, c, d] {
            assert!(t.inputs(id).iter().all(|i| *i < id));
        }
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let mut t = Tape::new();
        let m = t.leaf(Matrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let bias = t.leaf(col(&[10.0, 20.0]));
        let s = t.constant_scalar(2.0);
        let y = t.add(m, bias).unwrap();
        let y = t.mul(y, s).unwrap();
        assert_eq!(t.value(y)[(1, 2)], 52.0);
        let r = t.sum(y);
        let g = t.backward(r).unwrap();
        assert_eq!(g.wrt(&t, bias), col(&[6.0, 6.0]));
        assert_eq!(g.wrt(&t, s)[(0, 0)], 36.0 + 75.0);
    }

    #[test]
    fn slice_adjoints_accumulate_in_place() {
        let mut t = Tape::new();
        let x = t.leaf(col(&[1.0, 2.0, 3.0]));
        let a = t.entry(x, 0, 0).unwrap();
        let b = t.entry(x, 2, 0).unwrap();
        let c = t.entry(x, 2, 0).unwrap();
        let p = t.mul(a, b).unwrap();
        let q = t.add(p, c).unwrap();
        let g = t.backward(q).unwrap();
        assert_eq!(g.wrt(&t, x), col(&[3.0, 0.0, 2.0]));
    }

    #[test]
    fn gaussian_log_density_standard_normal() {
        let mut t = Tape::new();
        let k = t.leaf(Matrix::identity(3, 3));
        let x = t.leaf(col(&[0.0, 0.0, 0.0]));
        let l = t.gaussian_log_density(k, x).unwrap();
        assert!((t.scalar(l) + 1.5 * LN_2PI).abs() < 1e-9);
    }

    #[test]
    fn gaussian_log_density_rejects_indefinite() {
        let mut t = Tape::new();
        let k = t.leaf(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        let x = t.leaf(col(&[0.0, 0.0]));
        assert!(matches!(t.gaussian_log_density(k, x), Err(Error::Factorization { .. })));
    }
}
