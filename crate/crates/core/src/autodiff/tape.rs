use std::borrow::Cow;

use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Square(Var),
    Sqrt(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    MaxAxis(Var, usize, Vec<usize>),
    LogSumExpAxis(Var, usize),
    LogSoftmax(Var),
    BroadcastTo(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a forward pass.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them. A tape is built for one forward pass and
/// dropped after [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `shape` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn axis_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Folds a gradient of the broadcast output back onto a suffix-shaped input.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    for (i, g) in grad.data().iter().enumerate() {
        out[i % n] += g;
    }
    Tensor::from_parts(shape.to_vec(), out)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies the value of `v` into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = if sa == sb || is_suffix(sb, sa) {
            sa.to_vec()
        } else if is_suffix(sa, sb) {
            sb.to_vec()
        } else {
            return Err(AutodiffError::Shape {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let data = (0..n).map(|i| f(da[i % da.len()], db[i % db.len()])).collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(out_shape, data), op, rg))
    }

    /// Matrix product of `(m, k)` and `(k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let value = matmul_raw(self.value(a), self.value(b), false, false);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.value(b).data().contains(&0.0) {
            return Err(AutodiffError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(AutodiffError::Domain {
                op: "log",
                detail: format!("argument {bad} is not strictly positive"),
            });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(AutodiffError::Domain {
                op: "sqrt",
                detail: format!("argument {bad} is negative"),
            });
        }
        Ok(self.unary(a, Op::Sqrt(a), f64::sqrt))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(), AutodiffError> {
        if axis >= self.shape(a).len() {
            return Err(AutodiffError::Axis {
                op,
                axis,
                shape: self.shape(a).to_vec(),
            });
        }
        Ok(())
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("sum_axis", a, axis)?;
        let t = self.value(a);
        let (outer, n, inner) = axis_dims(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let shape = drop_axis(t.shape(), axis);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis(a, axis), rg))
    }

    /// Maximum over `axis`. Ties resolve to the lowest index, which also
    /// receives the whole gradient.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("max_axis", a, axis)?;
        let t = self.value(a);
        let (outer, n, inner) = axis_dims(t.shape(), axis);
        let d = t.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    let j = o * inner + i;
                    if k == 0 || d[base + i] > out[j] {
                        out[j] = d[base + i];
                        arg[j] = k;
                    }
                }
            }
        }
        let shape = drop_axis(t.shape(), axis);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxAxis(a, axis, arg), rg))
    }

    /// Minimum over `axis`, lowest index on ties.
    pub fn min_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let n = self.neg(a);
        let m = self.max_axis(n, axis)?;
        Ok(self.neg(m))
    }

    /// `log Σ exp` over `axis`, shifted by the running maximum.
    pub fn logsumexp_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("logsumexp_axis", a, axis)?;
        let t = self.value(a);
        let (outer, n, inner) = axis_dims(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| d[(o * n + k) * inner + i];
                let m = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).map(|k| (at(k) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        let shape = drop_axis(t.shape(), axis);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LogSumExpAxis(a, axis), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let Some(&n) = t.shape().last() else {
            return Err(AutodiffError::Axis {
                op: "log_softmax",
                axis: 0,
                shape: vec![],
            });
        };
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = t.shape().to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a), rg))
    }

    /// Repeats `a` over leading dimensions; `a`'s shape must be a suffix of `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if !is_suffix(sa, shape) {
            return Err(AutodiffError::Shape {
                op: "broadcast",
                lhs: sa.to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let d = self.value(a).data();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| d[i % d.len()]).collect();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::BroadcastTo(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() || shape.contains(&0) {
            return Err(AutodiffError::Shape {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Shape {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(AutodiffError::Axis {
                op: "concat",
                axis,
                shape: s0,
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != s0.len() || (0..s.len()).any(|k| k != axis && s[k] != s0[k]) {
                return Err(AutodiffError::Shape {
                    op: "concat",
                    lhs: s0,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat(parts.to_vec(), axis),
            rg,
        ))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.check_axis("slice", a, axis)?;
        let t = self.value(a);
        let (outer, n, inner) = axis_dims(t.shape(), axis);
        if len == 0 || start + len > n {
            return Err(AutodiffError::Shape {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let d = t.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Slice(a, axis, start), rg))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            Tensor::from_parts(
                a.shape().to_vec(),
                g.data().iter().zip(a.data()).map(|(&gi, &ai)| f(gi, ai)).collect(),
            )
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_raw(g, val(*b), false, true));
                acc(*b, matmul_raw(val(*a), g, true, false));
            }
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()));
                acc(*b, reduce_to(g, val(*b).shape()));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()));
                acc(*b, reduce_to(&g.map(|x| -x), val(*b).shape()));
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                let n = g.len();
                let is_div = matches!(node.op, Op::Div(..));
                let mut ga = Vec::with_capacity(n);
                let mut gb = Vec::with_capacity(n);
                for (i, &gi) in g.data().iter().enumerate() {
                    let (x, y) = (da[i % da.len()], db[i % db.len()]);
                    if is_div {
                        ga.push(gi / y);
                        gb.push(-gi * x / (y * y));
                    } else {
                        ga.push(gi * y);
                        gb.push(gi * x);
                    }
                }
                let shape = out.shape().to_vec();
                acc(*a, reduce_to(&Tensor::from_parts(shape.clone(), ga), val(*a).shape()));
                acc(*b, reduce_to(&Tensor::from_parts(shape, gb), val(*b).shape()));
            }
            Op::Exp(a) => acc(*a, zip(out, &|gi, o| gi * o)),
            Op::Log(a) => acc(*a, zip(val(*a), &|gi, x| gi / x)),
            Op::Neg(a) => acc(*a, g.map(|x| -x)),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                acc(*a, zip(val(*a), &|gi, x| if x > 0.0 { gi } else { gi * s }))
            }
            Op::Tanh(a) => acc(*a, zip(out, &|gi, o| gi * (1.0 - o * o))),
            Op::Square(a) => acc(*a, zip(val(*a), &|gi, x| 2.0 * gi * x)),
            Op::Sqrt(a) => acc(*a, zip(out, &|gi, o| 0.5 * gi / o)),
            Op::Softplus(a) => acc(*a, zip(val(*a), &|gi, x| gi * sigmoid(x))),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(*a, zip(val(*a), &|gi, x| if x >= lo && x <= hi { gi } else { 0.0 }))
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, g.map(|x| c * x))
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let t = val(*a);
                acc(*a, Tensor::full(t.shape(), g.item() / t.len() as f64))
            }
            Op::SumAxis(a, axis) => {
                let shape = val(*a).shape();
                let (outer, n, inner) = axis_dims(shape, *axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            d[(o * n + k) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                acc(*a, Tensor::from_parts(shape.to_vec(), d))
            }
            Op::MaxAxis(a, axis, arg) => {
                let shape = val(*a).shape();
                let (outer, n, inner) = axis_dims(shape, *axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let j = o * inner + i;
                        d[(o * n + arg[j]) * inner + i] = g.data()[j];
                    }
                }
                acc(*a, Tensor::from_parts(shape.to_vec(), d))
            }
            Op::LogSumExpAxis(a, axis) => {
                let t = val(*a);
                let (outer, n, inner) = axis_dims(t.shape(), *axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            let idx = (o * n + k) * inner + i;
                            let j = o * inner + i;
                            d[idx] = g.data()[j] * (t.data()[idx] - out.data()[j]).exp();
                        }
                    }
                }
                acc(*a, Tensor::from_parts(t.shape().to_vec(), d))
            }
            Op::LogSoftmax(a) => {
                let n = *out.shape().last().unwrap();
                let mut d = Vec::with_capacity(out.len());
                for (grow, orow) in g.data().chunks(n).zip(out.data().chunks(n)) {
                    let gs: f64 = grow.iter().sum();
                    d.extend(grow.iter().zip(orow).map(|(gi, o)| gi - o.exp() * gs));
                }
                acc(*a, Tensor::from_parts(out.shape().to_vec(), d))
            }
            Op::BroadcastTo(a) => acc(*a, reduce_to(g, val(*a).shape())),
            Op::Reshape(a) => acc(*a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec())),
            Op::Concat(parts, axis) => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let inner: usize = out.shape()[*axis + 1..].iter().product();
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let ps = val(*p).shape();
                    let len = ps[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        let base = o * total + offset;
                        d.extend_from_slice(&g.data()[base..base + len]);
                    }
                    offset += len;
                    acc(*p, Tensor::from_parts(ps.to_vec(), d));
                }
            }
            Op::Slice(a, axis, start) => {
                let shape = val(*a).shape();
                let (outer, n, inner) = axis_dims(shape, *axis);
                let len = out.shape()[*axis];
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * n + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*a, Tensor::from_parts(shape.to_vec(), d))
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `op(a) · op(b)` for rank-2 tensors, where `op` optionally transposes.
fn matmul_raw(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    // Transposed operands are copied out so the inner loop is a contiguous
    // row update; the summation order over `p` is unchanged.
    let a_n: Cow<'_, [f64]> = if ta { Cow::Owned(transposed(a)) } else { Cow::Borrowed(a.data()) };
    let b_n: Cow<'_, [f64]> = if tb { Cow::Owned(transposed(b)) } else { Cow::Borrowed(b.data()) };
    let (m, k) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
    let n = if tb { b.shape()[0] } else { b.shape()[1] };
    let mut out = vec![0.0; m * n];
    for (row, arow) in out.chunks_exact_mut(n).zip(a_n.chunks_exact(k)) {
        for (&av, brow) in arow.iter().zip(b_n.chunks_exact(n)) {
            for (r, &bv) in row.iter_mut().zip(brow) {
                *r += av * bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

fn transposed(t: &Tensor) -> Vec<f64> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let d = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    out
}
