use super::{gemm, gemm_strided, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LinComb(Vec<(Var, f64)>),
    MatMul(Var, Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
        act: Activation,
    },
    Unary(Var, Activation),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows(Vec<(Var, usize)>),
    RowMatVec {
        m: Var,
        v: Var,
    },
    /// Scalar-valued fused function with its input gradients precomputed
    /// during the forward pass.
    ScalarFn {
        inputs: Vec<Var>,
        local_grads: Vec<Tensor>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers; [`Tape::backward`] walks the record from the end.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Nodes the loss does not
    /// depend on get a zero tensor of matching shape.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// `b` broadcasts against `a` when its shape is a suffix of `a`'s shape.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    a == b || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op, needs: bool) -> Result<Var> {
        check_finite(name, &data)?;
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), op, needs))
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if broadcast_ok(sa, sb) {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let da = self.value(a).data();
        let db = self.value(b).data();
        let nb = db.len();
        da.iter().enumerate().map(|(i, &x)| f(x, db[i % nb])).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("add", a, b)?;
        let data = self.zip_broadcast(a, b, |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("add", self.shape(a).to_vec(), data, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("sub", a, b)?;
        let data = self.zip_broadcast(a, b, |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("sub", self.shape(a).to_vec(), data, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("mul", a, b)?;
        let data = self.zip_broadcast(a, b, |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("mul", self.shape(a).to_vec(), data, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push_checked("scale", self.shape(a).to_vec(), data, Op::Scale(a, c), needs)
    }

    /// `sum_i c_i * x_i` over same-shaped inputs.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::usage("lincomb needs at least one term"))?;
        let shape = self.shape(first).to_vec();
        let mut data = vec![0.0; self.value(first).len()];
        let mut needs = false;
        for &(v, c) in terms {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::Shape {
                    op: "lincomb",
                    lhs: shape,
                    rhs: self.shape(v).to_vec(),
                });
            }
            for (o, x) in data.iter_mut().zip(self.value(v).data()) {
                *o += c * x;
            }
            needs |= self.needs(v);
        }
        self.push_checked("lincomb", shape, data, Op::LinComb(terms.to_vec()), needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("matmul", vec![m, n], out, Op::MatMul(a, b), needs)
    }

    /// Fused affine layer `act(x W + b)` with `x: [n, in]`, `W: [in, out]`,
    /// `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::Shape {
                op: "dense",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if sb != [sw[1]] {
            return Err(Error::Shape {
                op: "dense bias",
                lhs: sw.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (n, k, m) = (sx[0], sx[1], sw[1]);
        let bias = self.value(b).data();
        let mut out: Vec<f64> = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        gemm_strided(
            n,
            k,
            m,
            self.value(x).data(),
            (k as isize, 1),
            self.value(w).data(),
            (m as isize, 1),
            1.0,
            &mut out,
        );
        if act != Activation::Identity {
            for v in out.iter_mut() {
                *v = act.apply(*v);
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push_checked("dense", vec![n, m], out, Op::Dense { x, w, b, act }, needs)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| act.apply(x)).collect();
        let needs = self.needs(a);
        let name = match act {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        };
        self.push_checked(name, self.shape(a).to_vec(), data, Op::Unary(a, act), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x.exp()).collect();
        let needs = self.needs(a);
        self.push_checked("exp", self.shape(a).to_vec(), data, Op::Exp(a), needs)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x.ln()).collect();
        let needs = self.needs(a);
        self.push_checked("log", self.shape(a).to_vec(), data, Op::Log(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push_checked("reduce_sum", vec![1], vec![s], Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(a);
        self.push_checked("reduce_mean", vec![1], vec![s], Op::Mean(a), needs)
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let needs = self.needs(a);
        self.push_checked("l2_norm", vec![1], vec![s], Op::L2Norm(a), needs)
    }

    /// Concatenates along the last axis; all parts share their leading
    /// dimensions.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat needs at least one input"))?;
        let rows = self.value(first).rows();
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            total += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let mut shape = lead;
        shape.push(total);
        self.push_checked("concat", shape, data, Op::ConcatCols(parts.to_vec()), needs)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        if len == 0 || start + len > cols {
            return Err(Error::Shape {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let needs = self.needs(x);
        self.push_checked("slice", shape, data, Op::SliceCols { x, start }, needs)
    }

    /// Stacks selected rows of (possibly different) matrices into a new
    /// `[refs.len(), cols]` matrix.
    pub fn gather_rows(&mut self, refs: &[(Var, usize)]) -> Result<Var> {
        let &(first, _) = refs
            .first()
            .ok_or_else(|| Error::usage("gather_rows needs at least one row"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::with_capacity(refs.len() * cols);
        let mut needs = false;
        for &(v, r) in refs {
            let t = self.value(v);
            if t.cols() != cols || r >= t.rows() {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: vec![r, cols],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.row(r));
            needs |= self.needs(v);
        }
        self.push_checked("gather_rows", vec![refs.len(), cols], data, Op::GatherRows(refs.to_vec()), needs)
    }

    /// Row-wise matrix-vector product: each row of `m` (`[b, p*q]`) is read
    /// as a row-major `p x q` matrix and multiplied by the matching row of
    /// `v` (`[b, q]`), giving `[b, p]`.
    pub fn row_matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 2 || sm[0] != sv[0] || sv[1] == 0 || sm[1] % sv[1] != 0 {
            return Err(Error::Shape {
                op: "row_matvec",
                lhs: sm.to_vec(),
                rhs: sv.to_vec(),
            });
        }
        let (b, q) = (sv[0], sv[1]);
        let p = sm[1] / q;
        let (md, vd) = (self.value(m).data(), self.value(v).data());
        let mut out = vec![0.0; b * p];
        for r in 0..b {
            let vr = &vd[r * q..(r + 1) * q];
            for i in 0..p {
                let mr = &md[r * p * q + i * q..r * p * q + (i + 1) * q];
                out[r * p + i] = mr.iter().zip(vr).map(|(a, b)| a * b).sum();
            }
        }
        let needs = self.needs(m) || self.needs(v);
        self.push_checked("row_matvec", vec![b, p], out, Op::RowMatVec { m, v }, needs)
    }

    /// Records a scalar function whose gradients with respect to `inputs`
    /// were computed alongside its value.
    pub fn scalar_fn(&mut self, name: &'static str, inputs: &[Var], value: f64, local_grads: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != local_grads.len() {
            return Err(Error::usage(format!("{name}: {} inputs but {} gradients", inputs.len(), local_grads.len())));
        }
        for (&v, g) in inputs.iter().zip(&local_grads) {
            if self.shape(v) != g.shape() {
                return Err(Error::Shape {
                    op: name,
                    lhs: self.shape(v).to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            check_finite(name, g.data())?;
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push_checked(
            name,
            vec![1],
            vec![value],
            Op::ScalarFn {
                inputs: inputs.to_vec(),
                local_grads,
            },
            needs,
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::from_parts_unchecked(node.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.acc(grads, *a, |ga| add_into(ga, g, 1.0));
                self.acc(grads, *b, |gb| {
                    let nb = gb.len();
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += sign * gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let nb = vb.len();
                self.acc(grads, *a, |ga| {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += gi * vb[i % nb];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += gi * va[i];
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |ga| add_into(ga, g, *c)),
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    self.acc(grads, v, |gv| add_into(gv, g, c));
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G B^T, dB = A^T G
                self.acc(grads, *a, |ga| {
                    gemm_strided(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), 1.0, ga)
                });
                self.acc(grads, *b, |gb| {
                    gemm_strided(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), 1.0, gb)
                });
            }
            Op::Dense { x, w, b, act } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, k, m) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
                let dy: Vec<f64> = if *act == Activation::Identity {
                    g.to_vec()
                } else {
                    g.iter().zip(out).map(|(gi, y)| gi * act.grad_from_output(*y)).collect()
                };
                self.acc(grads, *x, |gx| {
                    gemm_strided(n, m, k, &dy, (m as isize, 1), tw.data(), (1, m as isize), 1.0, gx)
                });
                self.acc(grads, *w, |gw| {
                    gemm_strided(k, n, m, tx.data(), (1, k as isize), &dy, (m as isize, 1), 1.0, gw)
                });
                self.acc(grads, *b, |gb| {
                    for r in 0..n {
                        add_into(gb, &dy[r * m..(r + 1) * m], 1.0);
                    }
                });
            }
            Op::Unary(a, act) => self.acc(grads, *a, |ga| {
                for ((o, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *o += gi * act.grad_from_output(*y);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for ((o, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *o += gi * y;
                }
            }),
            Op::Log(a) => {
                let va = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(va) {
                        *o += gi / x;
                    }
                })
            }
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let scale = g[0] / self.value(*a).len() as f64;
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += scale))
            }
            Op::L2Norm(a) => {
                let norm = out[0];
                if norm > 0.0 {
                    let va = self.value(*a).data();
                    self.acc(grads, *a, |ga| add_into(ga, va, g[0] / norm));
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.acc(grads, p, |gp| {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * c..(r + 1) * c],
                                &g[r * total + offset..r * total + offset + c],
                                1.0,
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (rows, cols) = (tx.rows(), tx.cols());
                let len = node.value.cols();
                self.acc(grads, *x, |gx| {
                    for r in 0..rows {
                        add_into(
                            &mut gx[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                            1.0,
                        );
                    }
                });
            }
            Op::GatherRows(refs) => {
                let cols = node.value.cols();
                for (i, &(v, r)) in refs.iter().enumerate() {
                    self.acc(grads, v, |gv| {
                        add_into(&mut gv[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols], 1.0)
                    });
                }
            }
            Op::RowMatVec { m, v } => {
                let (tm, tv) = (self.value(*m), self.value(*v));
                let (b, q) = (tv.shape()[0], tv.shape()[1]);
                let p = node.value.cols();
                let (md, vd) = (tm.data(), tv.data());
                self.acc(grads, *m, |gm| {
                    for r in 0..b {
                        for i in 0..p {
                            let gi = g[r * p + i];
                            let base = r * p * q + i * q;
                            add_into(&mut gm[base..base + q], &vd[r * q..(r + 1) * q], gi);
                        }
                    }
                });
                self.acc(grads, *v, |gv| {
                    for r in 0..b {
                        for i in 0..p {
                            let gi = g[r * p + i];
                            let base = r * p * q + i * q;
                            add_into(&mut gv[r * q..(r + 1) * q], &md[base..base + q], gi);
                        }
                    }
                });
            }
            Op::ScalarFn { inputs, local_grads } => {
                for (&v, lg) in inputs.iter().zip(local_grads) {
                    self.acc(grads, v, |gv| add_into(gv, lg.data(), g[0]));
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}
