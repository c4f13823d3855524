use std::collections::HashMap;

use rand::Rng;

use super::{AutodiffError, Gradients, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Concat(Vec<usize>),
    ConcatRows(Vec<usize>),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    MaxAxis {
        input: usize,
        // flat input offset feeding each output element
        argmax: Vec<usize>,
    },
    Dropout {
        input: usize,
        mask: Vec<T>,
    },
    Gather {
        input: usize,
        idx: Vec<usize>,
    },
    Reshape(usize),
    Transpose(usize),
    SliceLast {
        input: usize,
        start: usize,
    },
    Pick {
        input: usize,
        idx: Vec<usize>,
    },
    Log {
        input: usize,
        floor: T,
    },
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Append-only tape of tensor operations supporting one reverse sweep.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward pass is a single reverse scan.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, usize>,
    poison_check: bool,
    clamped_logs: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T: Scalar>(op: &'static str, tensors: &[&Tensor<T>]) -> AutodiffError {
    AutodiffError::Shape {
        op,
        shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

/// `rhs` broadcasts against `lhs` when its shape is a suffix of `lhs`'s.
fn broadcasts<T: Scalar>(lhs: &Tensor<T>, rhs: &Tensor<T>) -> bool {
    let (ls, rs) = (lhs.shape(), rhs.shape());
    rs.len() <= ls.len() && ls[ls.len() - rs.len()..] == *rs
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            poison_check: cfg!(debug_assertions),
            clamped_logs: 0,
        }
    }

    /// Makes every op fail with [`AutodiffError::NonFinite`] when it produces
    /// NaN or infinity. On by default in debug builds.
    pub fn set_poison_check(&mut self, on: bool) {
        self.poison_check = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `log` evaluations whose input fell below the floor.
    pub fn clamped_logs(&self) -> usize {
        self.clamped_logs
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[usize],
    ) -> Result<Var, AutodiffError> {
        if self.poison_check && !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter leaf. Repeated calls for the same parameter return
    /// the same node so gradients from every use are summed.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&n) = self.params.get(&id) {
            return Var(n);
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            needs_grad: !store.is_frozen(id),
            param: Some(id),
        });
        let n = self.nodes.len() - 1;
        self.params.insert(id, n);
        Var(n)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", &[ta, tb]));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            T::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        self.push("matmul", out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcasts(ta, tb) {
            return Err(shape_err("add", &[ta, tb]));
        }
        let w = tb.len();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + tb.data()[i % w];
        }
        self.push("add", out, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise product; `b` may broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcasts(ta, tb) {
            return Err(shape_err("mul", &[ta, tb]));
        }
        let w = tb.len();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * tb.data()[i % w];
        }
        self.push("mul", out, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|v| v * factor);
        self.push("scale", out, Op::Scale(a.0, factor), &[a.0])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .map(|&p| self.value(p))
            .ok_or(AutodiffError::Empty("concat"))?;
        let lead = &first.shape()[..first.rank().saturating_sub(1)];
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != first.rank() || &t.shape()[..t.rank().saturating_sub(1)] != lead {
                let all: Vec<_> = parts.iter().map(|&q| self.value(q)).collect();
                return Err(shape_err("concat", &all));
            }
            width += t.last_dim();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let w = t.last_dim();
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let out = Tensor::new(&shape, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat", out, Op::Concat(ids.clone()), &ids)
    }

    /// Concatenation along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .map(|&p| self.value(p))
            .ok_or(AutodiffError::Empty("concat_rows"))?;
        if first.rank() == 0 {
            return Err(shape_err("concat_rows", &[first]));
        }
        let tail = first.shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != tail.len() + 1 || t.shape()[1..] != tail[..] {
                let all: Vec<_> = parts.iter().map(|&q| self.value(q)).collect();
                return Err(shape_err("concat_rows", &all));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(&shape, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat_rows", out, Op::ConcatRows(ids.clone()), &ids)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", out, Op::Relu(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(a.0), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a.0), &[a.0])
    }

    /// Softmax over the last axis.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let w = t.last_dim();
        let mut out = t.clone();
        if w > 0 {
            for row in out.data_mut().chunks_mut(w) {
                softmax_in_place(row);
            }
        }
        self.push("row_softmax", out, Op::Softmax(a.0), &[a.0])
    }

    /// Maximum along `axis`, removing that axis. The gradient flows to the
    /// first maximal element.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if axis >= t.rank() || t.shape()[axis] == 0 {
            return Err(shape_err("max_over_axis", &[t]));
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let len = t.shape()[axis];
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for k in 1..len {
                    let idx = (o * len + k) * inner + i;
                    if t.data()[idx] > t.data()[best] {
                        best = idx;
                    }
                }
                data.push(t.data()[best]);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        self.push(
            "max_over_axis",
            out,
            Op::MaxAxis {
                input: a.0,
                argmax,
            },
            &[a.0],
        )
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)` at train time,
    /// and the op is the identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        self.push("dropout", out, Op::Dropout { input: a.0, mask }, &[a.0])
    }

    /// Gathers slices along the leading axis (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        if t.rank() == 0 || idx.iter().any(|&i| i >= t.shape()[0]) {
            return Err(AutodiffError::Index {
                op: "gather_rows",
                shape: t.shape().to_vec(),
            });
        }
        let w = t.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let out = Tensor::new(&shape, data)?;
        self.push(
            "gather_rows",
            out,
            Op::Gather {
                input: table.0,
                idx: idx.to_vec(),
            },
            &[table.0],
        )
    }

    pub fn lookup(&mut self, table: Var, index: usize) -> Result<Var, AutodiffError> {
        self.gather_rows(table, &[index])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let out = t
            .clone()
            .reshaped(shape)
            .map_err(|_| shape_err("reshape", &[t]))?;
        self.push("reshape", out, Op::Reshape(a.0), &[a.0])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(shape_err("transpose", &[t]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(t.data()[i * c + j]);
            }
        }
        let out = Tensor::new(&[c, r], data)?;
        self.push("transpose", out, Op::Transpose(a.0), &[a.0])
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let w = t.last_dim();
        if t.rank() == 0 || start + len > w {
            return Err(shape_err("slice_last", &[t]));
        }
        let rows = t.len() / w.max(1);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(&shape, data)?;
        self.push(
            "slice_last",
            out,
            Op::SliceLast { input: a.0, start },
            &[a.0],
        )
    }

    /// `out[r] = a[r, idx[r]]` for a matrix `a`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 || t.shape()[0] != idx.len() || idx.iter().any(|&k| k >= t.shape()[1]) {
            return Err(AutodiffError::Index {
                op: "pick",
                shape: t.shape().to_vec(),
            });
        }
        let c = t.shape()[1];
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &k)| t.data()[r * c + k])
            .collect();
        let out = Tensor::new(&[idx.len()], data)?;
        self.push(
            "pick",
            out,
            Op::Pick {
                input: a.0,
                idx: idx.to_vec(),
            },
            &[a.0],
        )
    }

    /// Natural log with inputs clamped from below at `floor`; clamped
    /// elements pass no gradient.
    pub fn log(&mut self, a: Var, floor: T) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let clamped = t.data().iter().filter(|&&v| v < floor).count();
        let out = t.map(|v| if v < floor { floor.ln() } else { v.ln() });
        self.clamped_logs += clamped;
        self.push("log", out, Op::Log { input: a.0, floor }, &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a.0), &[a.0])
    }

    /// Reverse sweep from a one-element `loss`. Returns gradients for every
    /// trainable parameter recorded on this tape; parameters the loss does
    /// not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));

        for n in (0..=loss.0).rev() {
            let node = &self.nodes[n];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[n].take() else { continue };
            self.propagate(n, &g, &mut grads);
            if node.param.is_some() {
                grads[n] = Some(g);
            }
        }

        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .params
            .iter()
            .filter(|(_, &n)| self.nodes[n].needs_grad)
            .map(|(&id, &n)| {
                let g = grads[n]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[n].value.shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, n: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[n];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, nn) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[*a].needs_grad {
                    let mut da = Tensor::zeros(&[m, k]);
                    // da = g . b^T
                    T::gemm(
                        m,
                        nn,
                        k,
                        T::one(),
                        g.data(),
                        nn as isize,
                        1,
                        tb.data(),
                        1,
                        nn as isize,
                        T::zero(),
                        da.data_mut(),
                        k as isize,
                        1,
                    );
                    accumulate(grads, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = Tensor::zeros(&[k, nn]);
                    // db = a^T . g
                    T::gemm(
                        k,
                        m,
                        nn,
                        T::one(),
                        ta.data(),
                        1,
                        k as isize,
                        g.data(),
                        nn as isize,
                        1,
                        T::zero(),
                        db.data_mut(),
                        nn as isize,
                        1,
                    );
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.nodes[*a].needs_grad {
                    accumulate(grads, *a, g.clone());
                }
                if self.nodes[*b].needs_grad {
                    let tb = &self.nodes[*b].value;
                    let w = tb.len();
                    let mut db = Tensor::zeros(tb.shape());
                    for (i, &gv) in g.data().iter().enumerate() {
                        db.data_mut()[i % w] = db.data()[i % w] + gv;
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let w = tb.len();
                if self.nodes[*a].needs_grad {
                    let mut da = g.clone();
                    for (i, v) in da.data_mut().iter_mut().enumerate() {
                        *v = *v * tb.data()[i % w];
                    }
                    accumulate(grads, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = Tensor::zeros(tb.shape());
                    for (i, &gv) in g.data().iter().enumerate() {
                        db.data_mut()[i % w] = db.data()[i % w] + gv * ta.data()[i];
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                accumulate(grads, *a, g.map(|v| v * f));
            }
            Op::Concat(parts) => {
                let rows = g.len() / g.last_dim().max(1);
                let total = g.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let t = &self.nodes[p].value;
                    let w = t.last_dim();
                    if self.nodes[p].needs_grad {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        accumulate(grads, p, Tensor::new(t.shape(), dp).expect("concat grad"));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = &self.nodes[p].value;
                    if self.nodes[p].needs_grad {
                        let dp = g.data()[offset..offset + t.len()].to_vec();
                        accumulate(grads, p, Tensor::new(t.shape(), dp).expect("concat grad"));
                    }
                    offset += t.len();
                }
            }
            Op::Relu(a) => {
                let mut da = g.clone();
                for (v, &yv) in da.data_mut().iter_mut().zip(y.data()) {
                    if yv <= T::zero() {
                        *v = T::zero();
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Tanh(a) => {
                let mut da = g.clone();
                for (v, &yv) in da.data_mut().iter_mut().zip(y.data()) {
                    *v = *v * (T::one() - yv * yv);
                }
                accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let mut da = g.clone();
                for (v, &yv) in da.data_mut().iter_mut().zip(y.data()) {
                    *v = *v * yv * (T::one() - yv);
                }
                accumulate(grads, *a, da);
            }
            Op::Softmax(a) => {
                let w = y.last_dim();
                let mut da = g.clone();
                for (drow, yrow) in da.data_mut().chunks_mut(w).zip(y.data().chunks(w)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&d, &s)| d * s).sum();
                    for (d, &s) in drow.iter_mut().zip(yrow) {
                        *d = s * (*d - dot);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::MaxAxis { input, argmax } => {
                let mut da = Tensor::zeros(self.nodes[*input].value.shape());
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    da.data_mut()[src] = da.data()[src] + gv;
                }
                accumulate(grads, *input, da);
            }
            Op::Dropout { input, mask } => {
                let mut da = g.clone();
                for (v, &m) in da.data_mut().iter_mut().zip(mask) {
                    *v = *v * m;
                }
                accumulate(grads, *input, da);
            }
            Op::Gather { input, idx } => {
                let t = &self.nodes[*input].value;
                let w = t.row_len();
                let mut da = Tensor::zeros(t.shape());
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * w..(r + 1) * w];
                    for (d, &s) in da.data_mut()[i * w..(i + 1) * w].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
                accumulate(grads, *input, da);
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape();
                accumulate(grads, *a, g.clone().reshaped(shape).expect("reshape grad"));
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let mut data = Vec::with_capacity(r * c);
                for j in 0..c {
                    for i in 0..r {
                        data.push(g.data()[i * c + j]);
                    }
                }
                accumulate(grads, *a, Tensor::new(&[c, r], data).expect("transpose grad"));
            }
            Op::SliceLast { input, start } => {
                let t = &self.nodes[*input].value;
                let w = t.last_dim();
                let len = g.last_dim();
                let mut da = Tensor::zeros(t.shape());
                for (r, src) in g.data().chunks(len.max(1)).enumerate() {
                    da.data_mut()[r * w + start..r * w + start + len].copy_from_slice(src);
                }
                accumulate(grads, *input, da);
            }
            Op::Pick { input, idx } => {
                let t = &self.nodes[*input].value;
                let c = t.shape()[1];
                let mut da = Tensor::zeros(t.shape());
                for (r, &k) in idx.iter().enumerate() {
                    da.data_mut()[r * c + k] = g.data()[r];
                }
                accumulate(grads, *input, da);
            }
            Op::Log { input, floor } => {
                let x = &self.nodes[*input].value;
                let mut da = g.clone();
                for (v, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    *v = if xv < *floor { T::zero() } else { *v / xv };
                }
                accumulate(grads, *input, da);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                accumulate(grads, *a, Tensor::full(self.nodes[*a].value.shape(), gv));
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], n: usize, g: Tensor<T>) {
    match &mut grads[n] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
