//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation evaluates
//! eagerly, stores its output value, and remembers which nodes it consumed.
//! [`Graph::backward`] walks the arena in reverse creation order, which is a
//! valid topological order because inputs always exist before their consumers.

use super::tensor::{gemm, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Square,
    Sqrt,
    Recip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// How the right operand of a binary op is laid over the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `1 × n` over `m × n`.
    Row,
    /// `m × 1` over `m × n`.
    Col,
    Scalar,
}

impl Bcast {
    #[inline]
    fn index(self, i: usize, cols: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Row => i % cols,
            Bcast::Col => i / cols,
            Bcast::Scalar => 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var, Bcast),
    Unary(Unary, Var),
    Scale(Var, f64),
    Offset(Var),
    LinComb(Vec<(f64, Var)>),
    Sum(Var),
    SumCols(Var),
    SumRows(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    RowMatVec(Var, Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: gradients of every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient buffer, or zeros when the node received no gradient.
    pub fn get_or_zero(&self, v: Var) -> Vec<f64> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }

    pub fn take(&mut self, v: Var) -> Vec<f64> {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node created after the graph had `len` nodes. Handles to
    /// dropped nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(dim_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), bv.data(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn bcast_mode(&self, a: Var, b: Var, op: &'static str) -> Result<Bcast> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Ok(Bcast::Same)
        } else if bv.numel() == 1 {
            Ok(Bcast::Scalar)
        } else if bv.rows() == 1 && bv.cols() == av.cols() && bv.shape().len() <= 2 {
            Ok(Bcast::Row)
        } else if bv.cols() == 1 && bv.rows() == av.rows() && av.shape().len() == 2 {
            Ok(Bcast::Col)
        } else {
            Err(dim_err(op, av, bv))
        }
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let mode = self.bcast_mode(a, b, name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let bd = bv.data();
        let out: Vec<f64> = match kind {
            Binary::Add => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bd[mode.index(i, cols)])
                .collect(),
            Binary::Sub => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x - bd[mode.index(i, cols)])
                .collect(),
            Binary::Mul => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * bd[mode.index(i, cols)])
                .collect(),
        };
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(kind, a, b, mode), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let av = self.value(a);
        let bad = match kind {
            Unary::Log => av.data().iter().find(|&&x| !(x > 0.0)),
            Unary::Sqrt => av.data().iter().find(|&&x| !(x >= 0.0)),
            Unary::Recip => av.data().iter().find(|&&x| x == 0.0 || x.is_nan()),
            _ => None,
        };
        if let Some(bad) = bad {
            return Err(Error::Domain(format!("{kind:?} of {bad}")));
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |x| -x,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Square => |x| x * x,
            Unary::Sqrt => f64::sqrt,
            Unary::Recip => |x| 1.0 / x,
        };
        let value = av.map(f);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Unary(kind, a), rg))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a).expect("neg is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a).expect("square is total")
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Recip, a)
    }

    /// `c · a`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `a + c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    /// `Σ cᵢ·vᵢ` over equally shaped operands.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::contract("lincomb of no terms"))?;
        let shape = self.value(first.1).shape().to_vec();
        let mut out = vec![0.0; self.value(first.1).numel()];
        let mut rg = false;
        for &(c, v) in terms {
            let vv = self.value(v);
            if vv.shape() != shape.as_slice() {
                return Err(dim_err("lincomb", self.value(first.1), vv));
            }
            if c != 0.0 {
                for (o, x) in out.iter_mut().zip(vv.data()) {
                    *o += c * x;
                }
            }
            rg |= self.rg(v);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::LinComb(terms.to_vec()), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `m × n → m × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let out: Vec<f64> = av.data().chunks(n).map(|r| r.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, 1, out).expect("shape"), Op::SumCols(a), rg)
    }

    /// Column sums: `m × n → 1 × n`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut out = vec![0.0; n];
        for r in av.data().chunks(n) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::row(out), Op::SumRows(a), rg)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of no parts"))?;
        let m = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != m {
                return Err(dim_err("concat", self.value(*first), pv));
            }
            total += pv.cols();
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, total, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if len == 0 || start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: av.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::Slice(a, start), rg))
    }

    /// Row gather; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::contract(format!("row index {i} out of {m}")));
            }
            out.extend_from_slice(av.row_slice(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(idx.len(), n, out)?,
            Op::Gather(a, idx.to_vec()),
            rg,
        ))
    }

    /// Per-row matrix-vector product. Row `r` of `mat` (`m × (p·q)`) is read
    /// as a row-major `p × q` matrix and multiplied by row `r` of `vec`
    /// (`m × q`), giving an `m × p` result.
    pub fn row_matvec(&mut self, mat: Var, vec: Var) -> Result<Var> {
        let (mv, vv) = (self.value(mat), self.value(vec));
        let (m, q) = (vv.rows(), vv.cols());
        if mv.rows() != m || mv.cols() % q != 0 {
            return Err(dim_err("row_matvec", mv, vv));
        }
        let p = mv.cols() / q;
        let mut out = vec![0.0; m * p];
        for r in 0..m {
            let mr = mv.row_slice(r);
            let vr = vv.row_slice(r);
            for i in 0..p {
                out[r * p + i] = mr[i * q..(i + 1) * q]
                    .iter()
                    .zip(vr)
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        let rg = self.rg(mat) || self.rg(vec);
        Ok(self.push(Tensor::matrix(m, p, out)?, Op::RowMatVec(mat, vec), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        self.backward_with_seed(loss, vec![1.0])
    }

    /// Vector-Jacobian product: propagates `seed` (same shape as `out`).
    pub fn backward_with_seed(&self, out: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.value(out).numel() {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.value(out).shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[out.0] = Some(seed);
        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let shapes = self.nodes[..n]
            .iter()
            .map(|nd| nd.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_nt_acc(m, n, k, g, bv.data(), ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_tn_acc(k, m, n, av.data(), g, gb);
                }
            }
            Op::Binary(kind, a, b, mode) => {
                let cols = out.cols();
                let (av, bv) = (self.value(*a), self.value(*b));
                match kind {
                    Binary::Add | Binary::Sub => {
                        if let Some(ga) = self.acc(grads, *a) {
                            for (x, gi) in ga.iter_mut().zip(g) {
                                *x += gi;
                            }
                        }
                        let sign = if *kind == Binary::Add { 1.0 } else { -1.0 };
                        if let Some(gb) = self.acc(grads, *b) {
                            for (i, gi) in g.iter().enumerate() {
                                gb[mode.index(i, cols)] += sign * gi;
                            }
                        }
                    }
                    Binary::Mul => {
                        if let Some(ga) = self.acc(grads, *a) {
                            let bd = bv.data();
                            for (i, (x, gi)) in ga.iter_mut().zip(g).enumerate() {
                                *x += gi * bd[mode.index(i, cols)];
                            }
                        }
                        if let Some(gb) = self.acc(grads, *b) {
                            for (i, (gi, ai)) in g.iter().zip(av.data()).enumerate() {
                                gb[mode.index(i, cols)] += gi * ai;
                            }
                        }
                    }
                }
            }
            Op::Unary(kind, a) => {
                let av = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    let (x, y) = (av.data(), out.data());
                    match kind {
                        Unary::Neg => ga.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi),
                        Unary::Exp => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * y[i];
                            }
                        }
                        Unary::Log => {
                            for i in 0..g.len() {
                                ga[i] += g[i] / x[i];
                            }
                        }
                        Unary::Tanh => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * (1.0 - y[i] * y[i]);
                            }
                        }
                        Unary::Sigmoid => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * y[i] * (1.0 - y[i]);
                            }
                        }
                        Unary::Square => {
                            for i in 0..g.len() {
                                ga[i] += 2.0 * g[i] * x[i];
                            }
                        }
                        Unary::Sqrt => {
                            for i in 0..g.len() {
                                if y[i] > 0.0 {
                                    ga[i] += 0.5 * g[i] / y[i];
                                }
                            }
                        }
                        Unary::Recip => {
                            for i in 0..g.len() {
                                ga[i] -= g[i] * y[i] * y[i];
                            }
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi);
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::LinComb(terms) => {
                for &(c, v) in terms {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SumCols(a) => {
                let n = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, d) in ga.iter_mut().enumerate() {
                        *d += g[i / n];
                    }
                }
            }
            Op::SumRows(a) => {
                let n = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, d) in ga.iter_mut().enumerate() {
                        *d += g[i % n];
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for (r, row) in gp.chunks_mut(pc).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + pc];
                            row.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += pc;
                }
            }
            Op::Slice(a, start) => {
                let n = self.value(*a).cols();
                let len = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, row) in g.chunks(len).enumerate() {
                        let dst = &mut ga[r * n + start..r * n + start + len];
                        dst.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Gather(a, idx) => {
                let n = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (k, &i) in idx.iter().enumerate() {
                        let dst = &mut ga[i * n..(i + 1) * n];
                        dst.iter_mut()
                            .zip(&g[k * n..(k + 1) * n])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::RowMatVec(mat, vec) => {
                let (mv, vv) = (self.value(*mat), self.value(*vec));
                let q = vv.cols();
                let p = out.cols();
                if let Some(gm) = self.acc(grads, *mat) {
                    for r in 0..out.rows() {
                        let vr = vv.row_slice(r);
                        for i in 0..p {
                            let gi = g[r * p + i];
                            let dst = &mut gm[r * p * q + i * q..r * p * q + (i + 1) * q];
                            dst.iter_mut().zip(vr).for_each(|(d, x)| *d += gi * x);
                        }
                    }
                }
                if let Some(gv) = self.acc(grads, *vec) {
                    for r in 0..out.rows() {
                        let mr = mv.row_slice(r);
                        let dst = &mut gv[r * q..(r + 1) * q];
                        for i in 0..p {
                            let gi = g[r * p + i];
                            dst.iter_mut()
                                .zip(&mr[i * q..(i + 1) * q])
                                .for_each(|(d, x)| *d += gi * x);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
