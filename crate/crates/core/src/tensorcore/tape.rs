//! Reverse-mode differentiation over a linear record of operations.
//!
//! Nodes are appended in evaluation order, so the record is already
//! topologically sorted and `backward` is a single reverse sweep.

use std::sync::Arc;

use super::{ensure_finite, SparseMatrix, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    LogSoftmax(Var),
    Spmm(Arc<SparseMatrix>, Var),
    SegmentMean { input: Var, ids: Arc<Vec<usize>>, counts: Vec<usize> },
    Sum(Var),
    Mean(Var),
    BceWithLogits { logits: Var, targets: Arc<Tensor>, mask: Arc<Vec<bool>>, n: usize },
    BernoulliKl { logits: Var, teacher: Arc<Tensor>, mask: Option<Arc<Vec<bool>>>, n: usize },
    Rmse { a: Var, b: Var, mask: Option<Arc<Vec<bool>>>, n: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::Shape {
            op,
            left: a.shape,
            right: b.shape,
        });
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn count_mask(mask: &[bool], len: usize, op: &'static str) -> Result<usize, TensorError> {
    if mask.len() != len {
        return Err(TensorError::Shape {
            op,
            left: [1, mask.len()],
            right: [1, len],
        });
    }
    match mask.iter().filter(|m| **m).count() {
        0 => Err(TensorError::FullyMasked { op }),
        n => Ok(n),
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        ensure_finite(&value, name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (a parameter).
    pub fn param(&mut self, t: Tensor) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, true, "param")
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, false, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg, "matmul")
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let v = Tensor { shape: x.shape, data };
        let rg = self.rg(a) || self.rg(b);
        self.push(v, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip(a, b, Op::Mul(a, b), "mul", |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let x = self.value(a);
        let v = Tensor {
            shape: x.shape,
            data: x.data.iter().map(|p| p * s).collect(),
        };
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg, "scale")
    }

    /// Adds a `1 × c` bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(TensorError::Shape {
                op: "add_bias",
                left: x.shape,
                right: b.shape,
            });
        }
        let c = x.cols();
        let data = x.data.iter().enumerate().map(|(k, &p)| p + b.data[k % c]).collect();
        let v = Tensor { shape: x.shape, data };
        let rg = self.rg(a) || self.rg(bias);
        self.push(v, Op::AddBias(a, bias), rg, "add_bias")
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: fn(f64) -> f64) -> Result<Var, TensorError> {
        let x = self.value(a);
        let v = Tensor {
            shape: x.shape,
            data: x.data.iter().map(|&p| f(p)).collect(),
        };
        let rg = self.rg(a);
        self.push(v, op, rg, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Relu(a), "relu", |p| p.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let c = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for i in 0..x.rows() {
            let row = x.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        let v = Tensor {
            shape: [x.rows(), c],
            data,
        };
        let rg = self.rg(a);
        self.push(v, Op::LogSoftmax(a), rg, "log_softmax")
    }

    pub fn spmm(&mut self, m: Arc<SparseMatrix>, h: Var) -> Result<Var, TensorError> {
        let v = m.spmm(self.value(h))?;
        let rg = self.rg(h);
        self.push(v, Op::Spmm(m, h), rg, "spmm")
    }

    /// Mean of the rows sharing each id. Ids must be sorted and cover
    /// `0..groups` with every group non-empty.
    pub fn segment_mean(&mut self, z: Var, ids: Arc<Vec<usize>>, groups: usize) -> Result<Var, TensorError> {
        let x = self.value(z);
        if ids.len() != x.rows() {
            return Err(TensorError::Shape {
                op: "segment_mean",
                left: x.shape,
                right: [ids.len(), 1],
            });
        }
        let mut counts = vec![0usize; groups];
        let mut prev = 0;
        for &g in ids.iter() {
            if g >= groups || g < prev {
                return Err(TensorError::Segments { groups });
            }
            counts[g] += 1;
            prev = g;
        }
        if counts.contains(&0) {
            return Err(TensorError::Segments { groups });
        }
        let c = x.cols();
        let mut out = Tensor::zeros(groups, c);
        for (i, &g) in ids.iter().enumerate() {
            for (o, &p) in out.data[g * c..(g + 1) * c].iter_mut().zip(x.row(i)) {
                *o += p;
            }
        }
        for g in 0..groups {
            let inv = 1.0 / counts[g] as f64;
            for o in &mut out.data[g * c..(g + 1) * c] {
                *o *= inv;
            }
        }
        let rg = self.rg(z);
        self.push(out, Op::SegmentMean { input: z, ids, counts }, rg, "segment_mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg, "mean")
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against 0/1 targets over
    /// unmasked entries.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Tensor>, mask: Arc<Vec<bool>>) -> Result<Var, TensorError> {
        let z = self.value(logits);
        same_shape("bce_with_logits", z, &targets)?;
        let n = count_mask(&mask, z.len(), "bce_with_logits")?;
        let mut total = 0.0;
        for k in 0..z.len() {
            if mask[k] {
                total += softplus(z.data[k]) - targets.data[k] * z.data[k];
            }
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(total / n as f64),
            Op::BceWithLogits { logits, targets, mask, n },
            rg,
            "bce_with_logits",
        )
    }

    /// Mean Bernoulli KL(teacher ∥ sigmoid(`logits`)) over unmasked entries.
    /// `teacher` holds probabilities.
    pub fn bernoulli_kl(&mut self, logits: Var, teacher: Arc<Tensor>, mask: Option<Arc<Vec<bool>>>) -> Result<Var, TensorError> {
        let z = self.value(logits);
        same_shape("bernoulli_kl", z, &teacher)?;
        let n = match &mask {
            Some(m) => count_mask(m, z.len(), "bernoulli_kl")?,
            None => z.len().max(1),
        };
        let mut total = 0.0;
        for k in 0..z.len() {
            if mask.as_ref().is_some_and(|m| !m[k]) {
                continue;
            }
            let (p, x) = (teacher.data[k], z.data[k]);
            let kl = xlogx(p) + xlogx(1.0 - p) + p * softplus(-x) + (1.0 - p) * softplus(x);
            total += kl.max(0.0);
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(total / n as f64),
            Op::BernoulliKl { logits, teacher, mask, n },
            rg,
            "bernoulli_kl",
        )
    }

    /// Root of the mean squared difference over unmasked entries. The
    /// gradient at zero distance is defined as zero.
    pub fn rmse(&mut self, a: Var, b: Var, mask: Option<Arc<Vec<bool>>>) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("rmse", x, y)?;
        let n = match &mask {
            Some(m) => count_mask(m, x.len(), "rmse")?,
            None => x.len().max(1),
        };
        let mut ss = 0.0;
        for k in 0..x.len() {
            if mask.as_ref().is_some_and(|m| !m[k]) {
                continue;
            }
            let d = x.data[k] - y.data[k];
            ss += d * d;
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar((ss / n as f64).sqrt()), Op::Rmse { a, b, mask, n }, rg, "rmse")
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let shape = self.value(loss).shape;
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            ensure_finite(g, "backward")?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], t);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, g.matmul(&val(*b).transpose()).expect("matmul grad shape"));
                }
                if self.rg(*b) {
                    // Aᵀ·G as a scatter over the non-zeros of A
                    let (x, m) = (val(*a), g.cols());
                    let mut gb = Tensor::zeros(x.cols(), m);
                    for i in 0..x.rows() {
                        let grow = g.row(i);
                        for (p, &xv) in x.row(i).iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb.data[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += xv * gv;
                            }
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(
                    *b,
                    Tensor {
                        shape: g.shape,
                        data: g.data.iter().map(|v| -v).collect(),
                    },
                );
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let ga = g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
                let gb = g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                send(*a, Tensor { shape: g.shape, data: ga });
                send(*b, Tensor { shape: g.shape, data: gb });
            }
            Op::Scale(a, s) => send(
                *a,
                Tensor {
                    shape: g.shape,
                    data: g.data.iter().map(|v| v * s).collect(),
                },
            ),
            Op::AddBias(a, bias) => {
                send(*a, g.clone());
                let c = g.cols();
                let mut gb = Tensor::zeros(1, c);
                for (k, v) in g.data.iter().enumerate() {
                    gb.data[k % c] += v;
                }
                send(*bias, gb);
            }
            Op::Relu(a) => {
                let x = val(*a);
                let data = g.data.iter().zip(&x.data).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                send(*a, Tensor { shape: g.shape, data });
            }
            Op::Sigmoid(a) => {
                let data = g.data.iter().zip(&node.value.data).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                send(*a, Tensor { shape: g.shape, data });
            }
            Op::LogSoftmax(a) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(g.len());
                for i in 0..g.rows() {
                    let grow = g.row(i);
                    let total: f64 = grow.iter().sum();
                    for (gv, out) in grow.iter().zip(&node.value.data[i * c..(i + 1) * c]) {
                        data.push(gv - out.exp() * total);
                    }
                }
                send(*a, Tensor { shape: g.shape, data });
            }
            Op::Spmm(m, h) => send(*h, m.spmm_transposed(g)),
            Op::SegmentMean { input, ids, counts } => {
                let c = g.cols();
                let mut gz = Tensor::zeros(ids.len(), c);
                for (i, &grp) in ids.iter().enumerate() {
                    let inv = 1.0 / counts[grp] as f64;
                    for (o, &gv) in gz.data[i * c..(i + 1) * c].iter_mut().zip(g.row(grp)) {
                        *o = gv * inv;
                    }
                }
                send(*input, gz);
            }
            Op::Sum(a) => {
                let x = val(*a);
                send(
                    *a,
                    Tensor {
                        shape: x.shape,
                        data: vec![g.item(); x.len()],
                    },
                );
            }
            Op::Mean(a) => {
                let x = val(*a);
                send(
                    *a,
                    Tensor {
                        shape: x.shape,
                        data: vec![g.item() / x.len().max(1) as f64; x.len()],
                    },
                );
            }
            Op::BceWithLogits { logits, targets, mask, n } => {
                let z = val(*logits);
                let scale = g.item() / *n as f64;
                let data = (0..z.len())
                    .map(|k| if mask[k] { (sigmoid(z.data[k]) - targets.data[k]) * scale } else { 0.0 })
                    .collect();
                send(*logits, Tensor { shape: z.shape, data });
            }
            Op::BernoulliKl { logits, teacher, mask, n } => {
                let z = val(*logits);
                let scale = g.item() / *n as f64;
                let data = (0..z.len())
                    .map(|k| {
                        if mask.as_ref().is_some_and(|m| !m[k]) {
                            0.0
                        } else {
                            (sigmoid(z.data[k]) - teacher.data[k]) * scale
                        }
                    })
                    .collect();
                send(*logits, Tensor { shape: z.shape, data });
            }
            Op::Rmse { a, b, mask, n } => {
                let r = node.value.item();
                let (x, y) = (val(*a), val(*b));
                let scale = if r > 0.0 { g.item() / (*n as f64 * r) } else { 0.0 };
                let ga: Vec<f64> = (0..x.len())
                    .map(|k| {
                        if mask.as_ref().is_some_and(|m| !m[k]) {
                            0.0
                        } else {
                            (x.data[k] - y.data[k]) * scale
                        }
                    })
                    .collect();
                if self.rg(*b) {
                    send(
                        *b,
                        Tensor {
                            shape: x.shape,
                            data: ga.iter().map(|v| -v).collect(),
                        },
                    );
                }
                send(*a, Tensor { shape: x.shape, data: ga });
            }
        }
    }
}
