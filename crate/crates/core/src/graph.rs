//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations on [`Matrix`] values as they execute and
//! replays them backwards to produce parameter [`Gradients`]. Parameters are
//! read in place from a borrowed [`ParamStore`]; only activations are owned.

use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    /// Row normalisation; keeps the per-row inverse standard deviation.
    LayerNorm(Var, Vec<T>),
    GatherRows(Var, Vec<usize>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Sliding windows of `width` rows (right zero-padded) flattened per position.
    Windows(Var, usize),
    /// Column-wise max over rows; keeps the arg-max row of each column.
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    /// Binary cross-entropy of a probability; label and clamp epsilon.
    BceProb(Var, T, T),
    /// Softmax cross-entropy of a `1 x M` logit row against a class index.
    CrossEntropy(Var, usize),
    GradReverse(Var),
}

enum Value<T> {
    Param(ParamId),
    Owned(Matrix<T>),
}

struct Node<T> {
    op: Op<T>,
    value: Value<T>,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Graph<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        match &self.nodes[v.0].value {
            Value::Param(id) => self.store.get(*id),
            Value::Owned(m) => m,
        }
    }

    /// The single value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).item()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Value::Owned(value),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A parameter read as a constant: no gradient flows into it.
    pub fn frozen_param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Value::Param(id),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies a node's value into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNt(a, b), out, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out, &[a, b])
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, av.cols()), "add_row shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o = *o + b;
            }
        }
        self.push(Op::AddRow(a, row), out, &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, av.cols()), "mul_row shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o = *o * b;
            }
        }
        self.push(Op::MulRow(a, row), out, &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(Op::Scale(a, s), out, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(Op::Relu(a), out, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), out, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(crate::tensor::sigmoid);
        self.push(Op::Sigmoid(a), out, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let s = crate::tensor::softmax(av.row(r));
            out.row_mut(r).copy_from_slice(&s);
        }
        self.push(Op::SoftmaxRows(a), out, &[a])
    }

    /// Normalises each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let av = self.value(a);
        let n = T::of_usize(av.cols());
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(Op::LayerNorm(a, inv_std), out, &[a])
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Matrix::zeros(indices.len(), tv.cols());
        for (i, &ix) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tv.row(ix));
        }
        self.push(Op::GatherRows(table, indices.to_vec()), out, &[table])
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let out = Matrix::row_vector(self.value(a).row(r).to_vec());
        self.push(Op::Row(a, r), out, &[a])
    }

    /// Concatenates matrices with equal column counts vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "stack_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let out = Matrix::from_vec(rows, cols, data);
        self.push(Op::StackRows(parts.to_vec()), out, parts)
    }

    /// Concatenates matrices with equal row counts horizontally.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out, parts)
    }

    /// For each position `t`, the rows `t..t+width` of `a` laid side by side;
    /// rows past the end are zero. Output is `rows x (width * cols)`.
    pub fn windows(&mut self, a: Var, width: usize) -> Var {
        let av = self.value(a);
        let (n, c) = av.shape();
        let mut out = Matrix::zeros(n, width * c);
        for t in 0..n {
            let dst = out.row_mut(t);
            for w in 0..width {
                if t + w < n {
                    dst[w * c..(w + 1) * c].copy_from_slice(av.row(t + w));
                }
            }
        }
        self.push(Op::Windows(a, width), out, &[a])
    }

    /// Column-wise maximum over rows (max-over-time pooling).
    pub fn max_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, c) = av.shape();
        assert!(n > 0, "max_rows of empty matrix");
        let mut arg = vec![0usize; c];
        let mut out = Matrix::row_vector(av.row(0).to_vec());
        for r in 1..n {
            for (j, &v) in av.row(r).iter().enumerate() {
                if v > out[(0, j)] {
                    out[(0, j)] = v;
                    arg[j] = r;
                }
            }
        }
        self.push(Op::MaxRows(a, arg), out, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of_usize(n))
    }

    /// Sum of a list of `1 x 1` nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        let stacked = self.stack_rows(parts);
        self.sum(stacked)
    }

    /// `-(y log p + (1 - y) log(1 - p))` with `p` clamped to `[eps, 1 - eps]`.
    ///
    /// The backward pass evaluates the derivative at the clamped point, so a
    /// saturated wrong prediction still receives a corrective gradient.
    pub fn bce_prob(&mut self, p: Var, label: T, eps: T) -> Var {
        let pv = self.value(p).item();
        let pc = pv.max(eps).min(T::one() - eps);
        let loss = -(label * pc.ln() + (T::one() - label) * (T::one() - pc).ln());
        self.push(Op::BceProb(p, label, eps), Matrix::scalar(loss), &[p])
    }

    /// `-log softmax(logits)[class]` for a `1 x M` logit row.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), 1, "cross_entropy expects a single row");
        assert!(class < lv.cols(), "class index out of range");
        let max = lv
            .as_slice()
            .iter()
            .copied()
            .fold(T::neg_infinity(), |m, v| m.max(v));
        let lse = lv.as_slice().iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        let loss = lse - lv[(0, class)];
        self.push(Op::CrossEntropy(logits, class), Matrix::scalar(loss), &[logits])
    }

    /// Identity forward; negates the gradient on the way back.
    pub fn grad_reverse(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(Op::GradReverse(a), out, &[a])
    }

    /// Differentiates `output` (a `1 x 1` node) and returns parameter gradients.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let mut grads = Gradients::for_store(self.store);
        self.backward_into(output, T::one(), &mut grads);
        grads
    }

    /// Differentiates `seed * output`, accumulating into `grads`.
    pub fn backward_into(&self, output: Var, seed: T, grads: &mut Gradients<T>) {
        let mut node_grads: Vec<Option<Matrix<T>>> = Vec::new();
        node_grads.resize_with(output.0 + 1, || None);
        let (r, c) = self.value(output).shape();
        node_grads[output.0] = Some(Matrix::filled(r, c, seed));

        for i in (0..=output.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut node_grads, grads);
        }
    }

    fn propagate(
        &self,
        i: usize,
        g: &Matrix<T>,
        ng: &mut [Option<Matrix<T>>],
        grads: &mut Gradients<T>,
    ) {
        let out = self.value(Var(i));
        let send = |ng: &mut [Option<Matrix<T>>], v: Var, delta: Matrix<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut ng[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(id) => grads.accumulate(*id, g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    send(ng, *a, g.matmul_nt(bv));
                }
                if self.nodes[b.0].requires_grad {
                    send(ng, *b, av.matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    send(ng, *a, g.matmul(bv));
                }
                if self.nodes[b.0].requires_grad {
                    send(ng, *b, g.matmul_tn(av));
                }
            }
            Op::Add(a, b) => {
                send(ng, *a, g.clone());
                send(ng, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(ng, *a, g.clone());
                if self.nodes[row.0].requires_grad {
                    send(ng, *row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.nodes[a.0].requires_grad {
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        for (d, &s) in da.row_mut(r).iter_mut().zip(rv.as_slice()) {
                            *d = *d * s;
                        }
                    }
                    send(ng, *a, da);
                }
                if self.nodes[row.0].requires_grad {
                    send(ng, *row, column_sums(&g.zip_map(av, |x, y| x * y)));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    send(ng, *a, g.zip_map(bv, |x, y| x * y));
                }
                if self.nodes[b.0].requires_grad {
                    send(ng, *b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Scale(a, s) => send(ng, *a, g.scale(*s)),
            Op::Relu(a) => {
                let av = self.value(*a);
                send(
                    ng,
                    *a,
                    g.zip_map(av, |d, x| if x > T::zero() { d } else { T::zero() }),
                );
            }
            Op::Tanh(a) => send(ng, *a, g.zip_map(out, |d, y| d * (T::one() - y * y))),
            Op::Sigmoid(a) => send(ng, *a, g.zip_map(out, |d, y| d * y * (T::one() - y))),
            Op::SoftmaxRows(a) => {
                let mut da = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let inner = crate::tensor::dot(y, gr);
                    for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                        *d = y[j] * (gr[j] - inner);
                    }
                }
                send(ng, *a, da);
            }
            Op::LayerNorm(a, inv_std) => {
                let n = T::of_usize(out.cols());
                let mut da = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let mean_g = gr.iter().copied().sum::<T>() / n;
                    let mean_gy = crate::tensor::dot(gr, y) / n;
                    for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                        *d = inv_std[r] * (gr[j] - mean_g - y[j] * mean_gy);
                    }
                }
                send(ng, *a, da);
            }
            Op::GatherRows(table, indices) => {
                let cols = out.cols();
                if let Op::Param(id) = self.nodes[table.0].op {
                    let rows = self.value(*table).rows();
                    let entry = grads.entry(id, rows, cols);
                    for (k, &ix) in indices.iter().enumerate() {
                        for (d, &s) in entry.row_mut(ix).iter_mut().zip(g.row(k)) {
                            *d = *d + s;
                        }
                    }
                } else if self.nodes[table.0].requires_grad {
                    let rows = self.value(*table).rows();
                    let mut dt = Matrix::zeros(rows, cols);
                    for (k, &ix) in indices.iter().enumerate() {
                        for (d, &s) in dt.row_mut(ix).iter_mut().zip(g.row(k)) {
                            *d = *d + s;
                        }
                    }
                    send(ng, *table, dt);
                }
            }
            Op::Row(a, r) => {
                let (rows, cols) = self.value(*a).shape();
                let mut da = Matrix::zeros(rows, cols);
                da.row_mut(*r).copy_from_slice(g.as_slice());
                send(ng, *a, da);
            }
            Op::StackRows(parts) => {
                let cols = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let slice = &g.as_slice()[offset * cols..(offset + rows) * cols];
                    send(ng, p, Matrix::from_vec(rows, cols, slice.to_vec()));
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let mut dp = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    send(ng, p, dp);
                    offset += cols;
                }
            }
            Op::Windows(a, width) => {
                let (n, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(n, c);
                for t in 0..n {
                    let src = g.row(t);
                    for w in 0..*width {
                        if t + w < n {
                            for (d, &s) in da.row_mut(t + w).iter_mut().zip(&src[w * c..(w + 1) * c]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
                send(ng, *a, da);
            }
            Op::MaxRows(a, arg) => {
                let (n, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(n, c);
                for (j, &r) in arg.iter().enumerate() {
                    da[(r, j)] = g[(0, j)];
                }
                send(ng, *a, da);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.value(*a).shape();
                send(ng, *a, Matrix::filled(rows, cols, g.item()));
            }
            Op::BceProb(p, y, eps) => {
                let pv = self.value(*p).item();
                let pc = pv.max(*eps).min(T::one() - *eps);
                let d = -(*y / pc) + (T::one() - *y) / (T::one() - pc);
                send(ng, *p, Matrix::scalar(g.item() * d));
            }
            Op::CrossEntropy(logits, class) => {
                let lv = self.value(*logits);
                let mut probs = crate::tensor::softmax(lv.as_slice());
                probs[*class] = probs[*class] - T::one();
                let gi = g.item();
                send(
                    ng,
                    *logits,
                    Matrix::row_vector(probs.into_iter().map(|v| v * gi).collect()),
                );
            }
            Op::GradReverse(a) => send(ng, *a, g.scale(-T::one())),
        }
    }
}

fn column_sums<T: Scalar>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o = *o + v;
        }
    }
    out
}
