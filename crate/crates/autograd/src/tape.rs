//! The recording tape, variables, primitives and their adjoints.
//!
//! Every primitive computes its value eagerly and appends a node to the tape;
//! nodes only ever reference earlier nodes, so the recording is topologically
//! ordered by construction and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::f64::consts::LN_2;
use std::rc::Rc;

use crate::{Error, Result, Tensor};

/// A recording of primitive applications.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Primitive applications; indices refer to earlier nodes.
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Cos(usize),
    Sin(usize),
    MatMul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Dense { x: usize, w: usize, b: usize },
    MulColumn { x: usize, s: usize },
    DivColumn { x: usize, s: usize },
    Reshape(usize),
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SumCols(usize),
    Sum(usize),
    Mean(usize),
    GroupMean { x: usize, group: usize },
    GroupMax { x: usize, argmax: Vec<usize> },
    GroupMaxOthers { x: usize, argmax: Vec<usize> },
    RepeatRows { x: usize, times: usize },
    Conv2d { x: usize, w: usize, b: usize },
    MaxPool2d { x: usize, argmax: Vec<usize> },
    WeightedRates { p: usize, weights: Vec<f64>, noise: Vec<f64> },
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients of a scalar output with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

/// `C (m x n) = op(A) (m x k) · op(B) (k x n) + beta·C`, row-major storage;
/// a transposed operand is stored with its logical dimensions swapped.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the kernel touches is
    // inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|i| nodes[*i].needs_grad);
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A trainable input: gradients flow to it.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(t.clone()), op: Op::Leaf, needs_grad: true });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A constant input: no gradient is accumulated for it.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, &[])
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape().to_vec();
        if nodes[output.id].value.len() != 1 {
            return Err(Error::NonScalar(out_shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.id] = Some(Tensor::full(&out_shape, 1.0));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                for (input, contribution) in adjoint(&nodes, node, &g) {
                    if !nodes[input].needs_grad {
                        continue;
                    }
                    match &mut grads[input] {
                        Some(acc) => acc.add_assign(&contribution),
                        slot => *slot = Some(contribution),
                    }
                }
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Invalid("variables recorded on different tapes".into()))
        }
    }

    fn binary(&self, other: &Var<'t>, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return shape_err(format!("elementwise op on {:?} and {:?}", a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.tape.push(Tensor::raw(a.shape().to_vec(), data), op(self.id, other.id), &[self.id, other.id]))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op, &[self.id])
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |x, y| x / y, Op::Div)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(|x| c * x, Op::Scale(self.id, c))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(f64::ln, Op::Log(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(|x| x * x, Op::Square(self.id))
    }

    pub fn cos(&self) -> Var<'t> {
        self.unary(f64::cos, Op::Cos(self.id))
    }

    pub fn sin(&self) -> Var<'t> {
        self.unary(f64::sin, Op::Sin(self.id))
    }

    fn matmul_impl(&self, other: &Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let (batch, m, k, bs) = match (a.shape(), b.shape()) {
            ([m, k], [r, c]) => (1, *m, *k, [*r, *c]),
            ([ba, m, k], [bb, r, c]) if ba == bb => (*ba, *m, *k, [*r, *c]),
            (sa, sb) => return shape_err(format!("matmul of {sa:?} and {sb:?}")),
        };
        let (kb, n) = if trans_b { (bs[1], bs[0]) } else { (bs[0], bs[1]) };
        if kb != k {
            return shape_err(format!("matmul inner dimensions {k} and {kb}"));
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                false,
                &b.data()[i * k * n..],
                trans_b,
                &mut out[i * m * n..],
                0.0,
            );
        }
        let shape = if a.ndim() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let op = Op::MatMul { a: self.id, b: other.id, batch, m, k, n, trans_b };
        Ok(self.tape.push(Tensor::raw(shape, out), op, &[self.id, other.id]))
    }

    /// Matrix product `A B`; both 2-D, or both 3-D with a common batch size.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false)
    }

    /// Matrix product `A Bᵀ` (transpose of the last two dimensions of `B`).
    pub fn matmul_t(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true)
    }

    /// Affine map `x W + b` for `x` (R x I), `W` (I x O), `b` (O).
    pub fn dense(&self, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(w)?;
        self.same_tape(b)?;
        let (x, wv, bv) = (self.value(), w.value(), b.value());
        let (r, i) = x.dims2()?;
        let (wi, o) = wv.dims2()?;
        if wi != i || bv.shape() != [o] {
            return shape_err(format!("dense with x {:?}, W {:?}, b {:?}", x.shape(), wv.shape(), bv.shape()));
        }
        let mut out: Vec<f64> = (0..r).flat_map(|_| bv.data().iter().copied()).collect();
        gemm(r, i, o, x.data(), false, wv.data(), false, &mut out, 1.0);
        let op = Op::Dense { x: self.id, w: w.id, b: b.id };
        Ok(self.tape.push(Tensor::raw(vec![r, o], out), op, &[self.id, w.id, b.id]))
    }

    fn column_op(&self, s: &Var<'t>, divide: bool) -> Result<Var<'t>> {
        self.same_tape(s)?;
        let (x, sv) = (self.value(), s.value());
        let (r, c) = x.dims2()?;
        if sv.shape() != [r, 1] {
            return shape_err(format!("row scaling of {:?} by {:?}", x.shape(), sv.shape()));
        }
        let mut out = x.data().to_vec();
        for (row, f) in out.chunks_mut(c.max(1)).zip(sv.data()) {
            for v in row {
                if divide {
                    *v /= f;
                } else {
                    *v *= f;
                }
            }
        }
        let op = if divide { Op::DivColumn { x: self.id, s: s.id } } else { Op::MulColumn { x: self.id, s: s.id } };
        Ok(self.tape.push(Tensor::raw(vec![r, c], out), op, &[self.id, s.id]))
    }

    /// Multiplies row r of `x` (R x C) by `s[r]`, `s` being R x 1.
    pub fn mul_column(&self, s: &Var<'t>) -> Result<Var<'t>> {
        self.column_op(s, false)
    }

    /// Divides row r of `x` (R x C) by `s[r]`, `s` being R x 1.
    pub fn div_column(&self, s: &Var<'t>) -> Result<Var<'t>> {
        self.column_op(s, true)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id), &[self.id]))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let rows = values[0].dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p)?;
            let (r, c) = v.dims2()?;
            if r != rows {
                return shape_err(format!("concatenating {rows} and {r} rows"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(Tensor::raw(vec![rows, total], out), Op::ConcatCols(ids.clone()), &ids))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if start + len > c {
            return shape_err(format!("columns {start}..{} of a {c}-column matrix", start + len));
        }
        let out: Vec<f64> = (0..r).flat_map(|i| x.data()[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.tape.push(Tensor::raw(vec![r, len], out), Op::SliceCols { x: self.id, start }, &[self.id]))
    }

    /// Row sums, R x C -> R x 1.
    pub fn sum_cols(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        let out = x.data().chunks(c.max(1)).take(r).map(|row| row.iter().sum()).collect();
        Ok(self.tape.push(Tensor::raw(vec![r, 1], out), Op::SumCols(self.id), &[self.id]))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Mean of all entries as a one-element tensor.
    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let m = x.sum() / x.len() as f64;
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), &[self.id])
    }

    fn groups(&self, group: usize) -> Result<(Rc<Tensor>, usize, usize)> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if group == 0 || r % group != 0 {
            return shape_err(format!("{r} rows do not split into groups of {group}"));
        }
        Ok((x, r, c))
    }

    /// Elementwise mean over each block of `group` consecutive rows
    /// (R x C -> R/group x C).
    pub fn group_mean(&self, group: usize) -> Result<Var<'t>> {
        let (x, r, c) = self.groups(group)?;
        let mut out = vec![0.0; r / group * c];
        for (i, row) in x.data().chunks(c.max(1)).take(r).enumerate() {
            for (o, v) in out[i / group * c..(i / group + 1) * c].iter_mut().zip(row) {
                *o += v / group as f64;
            }
        }
        Ok(self.tape.push(Tensor::raw(vec![r / group, c], out), Op::GroupMean { x: self.id, group }, &[self.id]))
    }

    /// Elementwise max over each block of `group` consecutive rows
    /// (R x C -> R/group x C). Ties go to the lowest row.
    pub fn group_max(&self, group: usize) -> Result<Var<'t>> {
        let (x, r, c) = self.groups(group)?;
        let d = x.data();
        let mut out = Vec::with_capacity(r / group * c);
        let mut argmax = Vec::with_capacity(r / group * c);
        for g in 0..r / group {
            for j in 0..c {
                let mut best = g * group;
                for i in g * group + 1..(g + 1) * group {
                    if d[i * c + j] > d[best * c + j] {
                        best = i;
                    }
                }
                out.push(d[best * c + j]);
                argmax.push(best * c + j);
            }
        }
        Ok(self.tape.push(Tensor::raw(vec![r / group, c], out), Op::GroupMax { x: self.id, argmax }, &[self.id]))
    }

    /// For every row, the elementwise max over the *other* rows of its block
    /// (R x C -> R x C). Blocks of size one yield zeros. Ties go to the
    /// lowest row.
    pub fn group_max_others(&self, group: usize) -> Result<Var<'t>> {
        let (x, r, c) = self.groups(group)?;
        let d = x.data();
        let mut out = vec![0.0; r * c];
        let mut argmax = vec![usize::MAX; r * c];
        for row in 0..r {
            let g = row / group;
            for j in 0..c {
                let mut best: Option<usize> = None;
                for i in (g * group..(g + 1) * group).filter(|i| *i != row) {
                    if best.is_none_or(|b| d[i * c + j] > d[b * c + j]) {
                        best = Some(i);
                    }
                }
                if let Some(b) = best {
                    out[row * c + j] = d[b * c + j];
                    argmax[row * c + j] = b * c + j;
                }
            }
        }
        Ok(self.tape.push(Tensor::raw(vec![r, c], out), Op::GroupMaxOthers { x: self.id, argmax }, &[self.id]))
    }

    /// Repeats every row `times` times consecutively (R x C -> R·times x C).
    pub fn repeat_rows(&self, times: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        let mut out = Vec::with_capacity(r * times * c);
        for row in x.data().chunks(c.max(1)).take(r) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        Ok(self.tape.push(Tensor::raw(vec![r * times, c], out), Op::RepeatRows { x: self.id, times }, &[self.id]))
    }

    /// Stride-1 2-D convolution with zero "same" padding.
    /// `x`: B x Cin x H x W, `w`: Cout x Cin x kh x kw (odd kernel), `b`: Cout.
    pub fn conv2d(&self, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(w)?;
        self.same_tape(b)?;
        let (x, wv, bv) = (self.value(), w.value(), b.value());
        let (&[nb, ci, h, wd], &[co, wci, kh, kw]) = (x.shape(), wv.shape()) else {
            return shape_err(format!("conv2d of {:?} with kernel {:?}", x.shape(), wv.shape()));
        };
        if wci != ci || kh % 2 == 0 || kw % 2 == 0 || bv.shape() != [co] {
            return shape_err(format!("conv2d of {:?} with kernel {:?}, bias {:?}", x.shape(), wv.shape(), bv.shape()));
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let (xd, wdat) = (x.data(), wv.data());
        let mut out = vec![0.0; nb * co * h * wd];
        for n in 0..nb {
            for o in 0..co {
                let base = (n * co + o) * h * wd;
                out[base..base + h * wd].iter_mut().for_each(|v| *v = bv.data()[o]);
                for c in 0..ci {
                    let xb = (n * ci + c) * h * wd;
                    for u in 0..kh {
                        for v in 0..kw {
                            let wt = wdat[((o * ci + c) * kh + u) * kw + v];
                            for i in 0..h {
                                let Some(si) = (i + u).checked_sub(ph).filter(|s| *s < h) else { continue };
                                for j in 0..wd {
                                    let Some(sj) = (j + v).checked_sub(pw).filter(|s| *s < wd) else { continue };
                                    out[base + i * wd + j] += wt * xd[xb + si * wd + sj];
                                }
                            }
                        }
                    }
                }
            }
        }
        let op = Op::Conv2d { x: self.id, w: w.id, b: b.id };
        Ok(self.tape.push(Tensor::raw(vec![nb, co, h, wd], out), op, &[self.id, w.id, b.id]))
    }

    /// Max pooling with a `k x k` window and stride `stride` in ceil mode:
    /// windows start at every multiple of the stride inside the input and are
    /// clipped at the border, so the output is ⌈H/stride⌉ x ⌈W/stride⌉.
    /// Ties go to the first position in row-major order.
    pub fn max_pool2d(&self, k: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let &[nb, c, h, w] = x.shape() else {
            return shape_err(format!("max_pool2d of {:?}", x.shape()));
        };
        if k == 0 || stride == 0 {
            return Err(Error::Invalid("pool window and stride must be positive".into()));
        }
        let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
        let d = x.data();
        let mut out = Vec::with_capacity(nb * c * ho * wo);
        let mut argmax = Vec::with_capacity(nb * c * ho * wo);
        for plane in 0..nb * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + i * stride * w + j * stride;
                    for u in i * stride..(i * stride + k).min(h) {
                        for v in j * stride..(j * stride + k).min(w) {
                            let idx = base + u * w + v;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.tape.push(Tensor::raw(vec![nb, c, ho, wo], out), Op::MaxPool2d { x: self.id, argmax }, &[self.id]))
    }

    /// Weighted sum rate per example from received powers.
    ///
    /// `p` is B x K x K with `p[b, k, j] = |h_k^H w_j|²`; the result (B) holds
    /// `Σ_k α_k log2((Σ_j p_kj + σ_k²) / (Σ_{j≠k} p_kj + σ_k²))`.
    pub fn weighted_rates(&self, weights: &[f64], noise: &[f64]) -> Result<Var<'t>> {
        let p = self.value();
        let &[nb, k, k2] = p.shape() else {
            return shape_err(format!("weighted_rates of {:?}", p.shape()));
        };
        if k != k2 || weights.len() != k || noise.len() != k {
            return shape_err(format!("weighted_rates of {:?} with {} weights, {} noise powers", p.shape(), weights.len(), noise.len()));
        }
        let d = p.data();
        let out = (0..nb)
            .map(|b| {
                (0..k)
                    .map(|u| {
                        let row = &d[(b * k + u) * k..(b * k + u + 1) * k];
                        let interference: f64 = row.iter().enumerate().filter(|(j, _)| *j != u).map(|(_, v)| v).sum::<f64>() + noise[u];
                        let total = interference + row[u];
                        weights[u] * (total.ln() - interference.ln()) / LN_2
                    })
                    .sum()
            })
            .collect();
        let op = Op::WeightedRates { p: self.id, weights: weights.to_vec(), noise: noise.to_vec() };
        Ok(self.tape.push(Tensor::raw(vec![nb], out), op, &[self.id]))
    }
}

/// Contributions of `node`'s output gradient `g` to its inputs.
fn adjoint(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = &node.value;
    let zip_map = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
        Tensor::raw(a.shape().to_vec(), a.data().iter().zip(g.data()).map(|(x, gi)| f(*x, *gi)).collect())
    };
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Mul(a, b) => vec![(*a, zip_map(val(*b), &|y, gi| y * gi)), (*b, zip_map(val(*a), &|x, gi| x * gi))],
        Op::Div(a, b) => {
            let (x, y) = (val(*a), val(*b));
            let gb = x.data().iter().zip(y.data()).zip(g.data()).map(|((x, y), gi)| -gi * x / (y * y)).collect();
            vec![(*a, zip_map(y, &|y, gi| gi / y)), (*b, Tensor::raw(y.shape().to_vec(), gb))]
        }
        Op::Neg(a) => vec![(*a, g.map(|v| -v))],
        Op::Scale(a, c) => vec![(*a, g.map(|v| c * v))],
        Op::Relu(a) => vec![(*a, zip_map(val(*a), &|x, gi| if x > 0.0 { gi } else { 0.0 }))],
        Op::Sigmoid(a) => vec![(*a, zip_map(out, &|s, gi| gi * s * (1.0 - s)))],
        Op::Tanh(a) => vec![(*a, zip_map(out, &|t, gi| gi * (1.0 - t * t)))],
        Op::Log(a) => vec![(*a, zip_map(val(*a), &|x, gi| gi / x))],
        Op::Sqrt(a) => vec![(*a, zip_map(out, &|s, gi| gi / (2.0 * s)))],
        Op::Square(a) => vec![(*a, zip_map(val(*a), &|x, gi| 2.0 * x * gi))],
        Op::Cos(a) => vec![(*a, zip_map(val(*a), &|x, gi| -x.sin() * gi))],
        Op::Sin(a) => vec![(*a, zip_map(val(*a), &|x, gi| x.cos() * gi))],
        Op::MatMul { a, b, batch, m, k, n, trans_b } => {
            let (av, bv) = (val(*a), val(*b));
            let mut ga = vec![0.0; batch * m * k];
            let mut gb = vec![0.0; batch * k * n];
            for i in 0..*batch {
                let (gs, asl, bsl) = (&g.data()[i * m * n..], &av.data()[i * m * k..], &bv.data()[i * k * n..]);
                if *trans_b {
                    // C = A Bᵀ, B stored n x k
                    gemm(*m, *n, *k, gs, false, bsl, false, &mut ga[i * m * k..], 0.0);
                    gemm(*n, *m, *k, gs, true, asl, false, &mut gb[i * k * n..], 0.0);
                } else {
                    gemm(*m, *n, *k, gs, false, bsl, true, &mut ga[i * m * k..], 0.0);
                    gemm(*k, *m, *n, asl, true, gs, false, &mut gb[i * k * n..], 0.0);
                }
            }
            vec![(*a, Tensor::raw(av.shape().to_vec(), ga)), (*b, Tensor::raw(bv.shape().to_vec(), gb))]
        }
        Op::Dense { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (r, i) = (xv.shape()[0], xv.shape()[1]);
            let o = wv.shape()[1];
            let mut gx = vec![0.0; r * i];
            gemm(r, o, i, g.data(), false, wv.data(), true, &mut gx, 0.0);
            let mut gw = vec![0.0; i * o];
            gemm(i, r, o, xv.data(), true, g.data(), false, &mut gw, 0.0);
            let mut gbias = vec![0.0; o];
            for row in g.data().chunks(o.max(1)) {
                for (acc, v) in gbias.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![
                (*x, Tensor::raw(vec![r, i], gx)),
                (*w, Tensor::raw(vec![i, o], gw)),
                (*b, Tensor::raw(vec![o], gbias)),
            ]
        }
        Op::MulColumn { x, s } | Op::DivColumn { x, s } => {
            let divide = matches!(node.op, Op::DivColumn { .. });
            let (xv, sv) = (val(*x), val(*s));
            let c = xv.shape()[1];
            let mut gx = g.data().to_vec();
            let mut gs = vec![0.0; sv.len()];
            for (r, f) in sv.data().iter().enumerate() {
                let (xr, gr) = (&xv.data()[r * c..(r + 1) * c], &g.data()[r * c..(r + 1) * c]);
                let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for v in &mut gx[r * c..(r + 1) * c] {
                    if divide {
                        *v /= f;
                    } else {
                        *v *= f;
                    }
                }
                gs[r] = if divide { -dot / (f * f) } else { dot };
            }
            vec![(*x, Tensor::raw(xv.shape().to_vec(), gx)), (*s, Tensor::raw(sv.shape().to_vec(), gs))]
        }
        Op::Reshape(a) => vec![(*a, Tensor::raw(val(*a).shape().to_vec(), g.data().to_vec()))],
        Op::ConcatCols(ids) => {
            let rows = out.shape()[0];
            let total = out.shape()[1];
            let mut offset = 0;
            ids.iter()
                .map(|id| {
                    let w = val(*id).shape()[1];
                    let data = (0..rows).flat_map(|r| g.data()[r * total + offset..r * total + offset + w].iter().copied()).collect();
                    offset += w;
                    (*id, Tensor::raw(vec![rows, w], data))
                })
                .collect()
        }
        Op::SliceCols { x, start } => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            let len = out.shape()[1];
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + start + len].copy_from_slice(&g.data()[i * len..(i + 1) * len]);
            }
            vec![(*x, Tensor::raw(vec![r, c], gx))]
        }
        Op::SumCols(x) => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            let gx = (0..r).flat_map(|i| std::iter::repeat_n(g.data()[i], c)).collect();
            vec![(*x, Tensor::raw(vec![r, c], gx))]
        }
        Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.data()[0]))],
        Op::Mean(x) => {
            let n = val(*x).len() as f64;
            vec![(*x, Tensor::full(val(*x).shape(), g.data()[0] / n))]
        }
        Op::GroupMean { x, group } => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            let gx = (0..r).flat_map(|i| g.data()[i / group * c..(i / group + 1) * c].iter().map(|v| v / *group as f64)).collect();
            vec![(*x, Tensor::raw(vec![r, c], gx))]
        }
        Op::GroupMax { x, argmax } | Op::GroupMaxOthers { x, argmax } => {
            let mut gx = vec![0.0; val(*x).len()];
            for (src, gi) in argmax.iter().zip(g.data()) {
                if *src != usize::MAX {
                    gx[*src] += gi;
                }
            }
            vec![(*x, Tensor::raw(val(*x).shape().to_vec(), gx))]
        }
        Op::RepeatRows { x, times } => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            let mut gx = vec![0.0; r * c];
            for (i, row) in g.data().chunks(c.max(1)).enumerate().take(r * times) {
                for (acc, v) in gx[i / times * c..(i / times + 1) * c].iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![(*x, Tensor::raw(vec![r, c], gx))]
        }
        Op::Conv2d { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let &[nb, ci, h, wd] = xv.shape() else { unreachable!() };
            let &[co, _, kh, kw] = wv.shape() else { unreachable!() };
            let (ph, pw) = (kh / 2, kw / 2);
            let (xd, wdat, gd) = (xv.data(), wv.data(), g.data());
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wdat.len()];
            let mut gb = vec![0.0; co];
            for n in 0..nb {
                for o in 0..co {
                    let base = (n * co + o) * h * wd;
                    gb[o] += gd[base..base + h * wd].iter().sum::<f64>();
                    for c in 0..ci {
                        let xb = (n * ci + c) * h * wd;
                        for u in 0..kh {
                            for v in 0..kw {
                                let widx = ((o * ci + c) * kh + u) * kw + v;
                                let wt = wdat[widx];
                                let mut acc = 0.0;
                                for i in 0..h {
                                    let Some(si) = (i + u).checked_sub(ph).filter(|s| *s < h) else { continue };
                                    for j in 0..wd {
                                        let Some(sj) = (j + v).checked_sub(pw).filter(|s| *s < wd) else { continue };
                                        let go = gd[base + i * wd + j];
                                        acc += go * xd[xb + si * wd + sj];
                                        gx[xb + si * wd + sj] += go * wt;
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
            vec![
                (*x, Tensor::raw(xv.shape().to_vec(), gx)),
                (*w, Tensor::raw(wv.shape().to_vec(), gw)),
                (*b, Tensor::raw(vec![co], gb)),
            ]
        }
        Op::MaxPool2d { x, argmax } => {
            let mut gx = vec![0.0; val(*x).len()];
            for (src, gi) in argmax.iter().zip(g.data()) {
                gx[*src] += gi;
            }
            vec![(*x, Tensor::raw(val(*x).shape().to_vec(), gx))]
        }
        Op::WeightedRates { p, weights, noise } => {
            let pv = val(*p);
            let &[nb, k, _] = pv.shape() else { unreachable!() };
            let d = pv.data();
            let mut gp = vec![0.0; d.len()];
            for b in 0..nb {
                for u in 0..k {
                    let off = (b * k + u) * k;
                    let row = &d[off..off + k];
                    let interference: f64 = row.iter().enumerate().filter(|(j, _)| *j != u).map(|(_, v)| v).sum::<f64>() + noise[u];
                    let total = interference + row[u];
                    let scale = g.data()[b] * weights[u] / LN_2;
                    for j in 0..k {
                        gp[off + j] = if j == u { scale / total } else { scale * (1.0 / total - 1.0 / interference) };
                    }
                }
            }
            vec![(*p, Tensor::raw(pv.shape().to_vec(), gp))]
        }
    }
}
