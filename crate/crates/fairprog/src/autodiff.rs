//! Reverse-mode differentiation over dense row-major `f64` tensors.
//!
//! A [`Tape`] records forward operations as they execute; [`Tape::backward`]
//! replays them in reverse to accumulate gradients for every node. The op set
//! is the minimum needed for small feed-forward networks, input triggers, and
//! the training losses used elsewhere in this crate: no views, no implicit
//! broadcasting (row repetition is an explicit op), no convolutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense tensor: a shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("tensor", format!("extents must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} implies {numel} values, got {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor values must be finite"));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], values: vec![v] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len()], values }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Scalar contents; errors when the tensor has more than one element.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.values[0])
        } else {
            Err(Error::shape("item", format!("expected scalar, got shape {:?}", self.shape)))
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count: trailing extent for rank-2, 1 for rank-1.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = if self.shape.len() == 2 { self.shape[1] } else { self.values.len() };
        &self.values[i * c..(i + 1) * c]
    }
}

/// Identifier of a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Softmax { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    Slice { x: NodeId, start: usize, end: usize },
    Mean { x: NodeId },
    Sum { x: NodeId },
    Scale { x: NodeId, c: f64 },
    RepeatRow { x: NodeId, n: usize },
    Reshape { x: NodeId },
    Scatter { x: NodeId, indices: Vec<usize> },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
    MmdLoss { probs: NodeId, groups: Vec<usize>, bandwidth: f64 },
    StraightThroughOneHot { x: NodeId },
}

struct Node {
    op: Op,
    out: Tensor,
}

/// Gradients of one scalar loss with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor {
            shape: self.shapes[id.0].clone(),
            values: self.grads[id.0].clone(),
        }
    }
}

/// Records a computation graph; nodes are appended in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn softmax_rows(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[r * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out[r * cols + j] /= sum;
        }
    }
    out
}

fn rbf(a: &[f64], b: &[f64], inv_two_h2: f64) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    (-d2 * inv_two_h2).exp()
}

/// Biased V-statistic squared MMD between two sets of rows under an RBF kernel.
fn mmd2(rows: &[f64], cols: usize, ga: &[usize], gb: &[usize], inv_two_h2: f64) -> f64 {
    let row = |i: usize| &rows[i * cols..(i + 1) * cols];
    let mut within_a = 0.0;
    for &i in ga {
        for &j in ga {
            within_a += rbf(row(i), row(j), inv_two_h2);
        }
    }
    let mut within_b = 0.0;
    for &i in gb {
        for &j in gb {
            within_b += rbf(row(i), row(j), inv_two_h2);
        }
    }
    let mut cross = 0.0;
    for &i in ga {
        for &j in gb {
            cross += rbf(row(i), row(j), inv_two_h2);
        }
    }
    let (na, nb) = (ga.len() as f64, gb.len() as f64);
    within_a / (na * na) + within_b / (nb * nb) - 2.0 * cross / (na * nb)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].out
    }

    fn push(&mut self, op: Op, out: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, out });
        id
    }

    /// Registers an input tensor (parameter or data) as a leaf node.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    fn rank2(&self, op: &str, id: NodeId) -> Result<(usize, usize)> {
        let s = self.value(id).shape();
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(Error::shape(op, format!("expected rank-2 tensor, got shape {s:?}")))
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner extents differ: [{m}, {k}] x [{k2}, {n}]")));
        }
        let values = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Op::MatMul { a, b }, Tensor { shape: vec![m, n], values }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("add", format!("{sa:?} vs {sb:?}")));
        }
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let shape = sa.to_vec();
        Ok(self.push(Op::Add { a, b }, Tensor { shape, values }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa:?} vs {sb:?}")));
        }
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let shape = sa.to_vec();
        Ok(self.push(Op::Mul { a, b }, Tensor { shape, values }))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out = Tensor {
            shape: self.value(x).shape().to_vec(),
            values: self.value(x).values().iter().map(|&v| f(v)).collect(),
        };
        self.push(op, out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { x })
    }

    /// Row-wise softmax; a rank-1 tensor is treated as a single row.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let (rows, cols) = if t.shape().len() == 2 { (t.shape()[0], t.shape()[1]) } else { (1, t.len()) };
        let values = softmax_rows(t.values(), rows, cols);
        let shape = t.shape().to_vec();
        self.push(Op::Softmax { x }, Tensor { shape, values })
    }

    /// Concatenation along the last axis: two `[n, a]`/`[n, b]` tensors give
    /// `[n, a + b]`; two vectors concatenate end to end.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        match (ta.shape().len(), tb.shape().len()) {
            (1, 1) => {
                let mut values = ta.values().to_vec();
                values.extend_from_slice(tb.values());
                let shape = vec![values.len()];
                Ok(self.push(Op::Concat { a, b }, Tensor { shape, values }))
            }
            (2, 2) => {
                if ta.shape()[0] != tb.shape()[0] {
                    return Err(Error::shape(
                        "concat",
                        format!("row counts differ: {:?} vs {:?}", ta.shape(), tb.shape()),
                    ));
                }
                let (n, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut values = Vec::with_capacity(n * (ca + cb));
                for r in 0..n {
                    values.extend_from_slice(ta.row(r));
                    values.extend_from_slice(tb.row(r));
                }
                Ok(self.push(Op::Concat { a, b }, Tensor { shape: vec![n, ca + cb], values }))
            }
            _ => Err(Error::shape(
                "concat",
                format!("ranks differ: {:?} vs {:?}", ta.shape(), tb.shape()),
            )),
        }
    }

    /// Contiguous slice `[start, end)` along the last axis.
    pub fn slice(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        let last = *t.shape().last().unwrap();
        if start >= end || end > last {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} out of bounds for last extent {last}"),
            ));
        }
        if t.shape().len() == 1 {
            let values = t.values()[start..end].to_vec();
            let shape = vec![end - start];
            Ok(self.push(Op::Slice { x, start, end }, Tensor { shape, values }))
        } else {
            let (n, c) = (t.shape()[0], t.shape()[1]);
            let mut values = Vec::with_capacity(n * (end - start));
            for r in 0..n {
                values.extend_from_slice(&t.values()[r * c + start..r * c + end]);
            }
            Ok(self.push(Op::Slice { x, start, end }, Tensor { shape: vec![n, end - start], values }))
        }
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let m = t.values().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean { x }, Tensor::scalar(m))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).values().iter().sum::<f64>();
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| c * v, Op::Scale { x, c })
    }

    /// Tiles a vector (or single row) into `n` identical rows.
    pub fn repeat_row(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let t = self.value(x);
        let cols = match t.shape().len() {
            1 => t.shape()[0],
            2 if t.shape()[0] == 1 => t.shape()[1],
            _ => {
                return Err(Error::shape(
                    "repeat_row",
                    format!("expected a vector or single row, got {:?}", t.shape()),
                ))
            }
        };
        let mut values = Vec::with_capacity(n * cols);
        for _ in 0..n {
            values.extend_from_slice(t.values());
        }
        Ok(self.push(Op::RepeatRow { x, n }, Tensor { shape: vec![n, cols], values }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} ({} values) to {shape:?}", t.shape(), t.len()),
            ));
        }
        let values = t.values().to_vec();
        Ok(self.push(Op::Reshape { x }, Tensor { shape, values }))
    }

    /// Places a vector into a zero vector of length `len` at `indices`
    /// (`out[indices[i]] = x[i]`); indices must be distinct and in range.
    pub fn scatter(&mut self, x: NodeId, len: usize, indices: Vec<usize>) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 1 || t.len() != indices.len() {
            return Err(Error::shape(
                "scatter",
                format!("expected vector of length {}, got {:?}", indices.len(), t.shape()),
            ));
        }
        let mut values = vec![0.0; len];
        let mut seen = vec![false; len];
        for (&idx, &v) in indices.iter().zip(t.values()) {
            if idx >= len {
                return Err(Error::shape("scatter", format!("index {idx} out of range {len}")));
            }
            if seen[idx] {
                return Err(Error::invalid(format!("scatter index {idx} repeated")));
            }
            seen[idx] = true;
            values[idx] = v;
        }
        Ok(self.push(Op::Scatter { x, indices }, Tensor { shape: vec![len], values }))
    }

    /// Mean over rows of the negative log softmax probability of each row's
    /// label class.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (n, k) = self.rank2("cross_entropy", logits)?;
        if k < 2 {
            return Err(Error::shape("cross_entropy", format!("need at least 2 classes, got {k}")));
        }
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} logit rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let t = self.value(logits);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let loss = total / n as f64;
        Ok(self.push(Op::CrossEntropy { logits, labels: labels.to_vec() }, Tensor::scalar(loss)))
    }

    /// Squared MMD between group-conditional rows of `probs` under an RBF
    /// kernel `exp(-||a-b||^2 / (2 h^2))`, averaged over all group pairs.
    /// Biased V-statistic estimator.
    pub fn mmd_loss(&mut self, probs: NodeId, groups: &[usize], bandwidth: f64) -> Result<NodeId> {
        let (n, _k) = self.rank2("mmd_loss", probs)?;
        if groups.len() != n {
            return Err(Error::shape("mmd_loss", format!("{n} rows but {} group labels", groups.len())));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let ids = group_indices(groups);
        if ids.len() < 2 {
            return Err(Error::invalid("mmd_loss needs at least two groups"));
        }
        let t = self.value(probs);
        let cols = t.cols();
        let inv = 1.0 / (2.0 * bandwidth * bandwidth);
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                total += mmd2(t.values(), cols, &ids[i].1, &ids[j].1, inv);
                pairs += 1;
            }
        }
        let loss = total / pairs as f64;
        Ok(self.push(
            Op::MmdLoss { probs, groups: groups.to_vec(), bandwidth },
            Tensor::scalar(loss),
        ))
    }

    /// Row-wise one-hot at the argmax (ties break to the lowest index); the
    /// backward pass copies the incoming gradient to the input unchanged.
    pub fn straight_through_one_hot(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let (rows, cols) = if t.shape().len() == 2 { (t.shape()[0], t.shape()[1]) } else { (1, t.len()) };
        let mut values = vec![0.0; t.len()];
        for r in 0..rows {
            let row = &t.values()[r * cols..(r + 1) * cols];
            values[r * cols + argmax_tie_lowest(row)] = 1.0;
        }
        let shape = t.shape().to_vec();
        self.push(Op::StraightThroughOneHot { x }, Tensor { shape, values })
    }

    /// Gradients of a scalar `loss` node with respect to every node.
    /// Leaves never reached by the backward sweep keep zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.out.len()]).collect();
        grads[loss.0][0] = 1.0;

        // Nodes are appended in topological order, so one reverse sweep
        // visits each exactly once with its output gradient complete.
        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let n = self.value(*b).shape()[1];
                    let av = self.value(*a).values();
                    let bv = self.value(*b).values();
                    // dA = G B^T
                    let da = &mut grads[a.0];
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * bv[p * n + j];
                            }
                            da[r * k + p] += s;
                        }
                    }
                    // dB = A^T G
                    let db = &mut grads[b.0];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for r in 0..m {
                                s += av[r * k + p] * g[r * n + j];
                            }
                            db[p * n + j] += s;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (t, &gv) in grads[a.0].iter_mut().zip(&g) {
                        *t += gv;
                    }
                    for (t, &gv) in grads[b.0].iter_mut().zip(&g) {
                        *t += gv;
                    }
                }
                Op::Mul { a, b } => {
                    let bv = self.value(*b).values().to_vec();
                    for ((t, &gv), &x) in grads[a.0].iter_mut().zip(&g).zip(&bv) {
                        *t += gv * x;
                    }
                    let av = self.value(*a).values().to_vec();
                    for ((t, &gv), &x) in grads[b.0].iter_mut().zip(&g).zip(&av) {
                        *t += gv * x;
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).values();
                    for ((t, &gv), &v) in grads[x.0].iter_mut().zip(&g).zip(xv) {
                        if v > 0.0 {
                            *t += gv;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let out = self.nodes[i].out.values();
                    for ((t, &gv), &o) in grads[x.0].iter_mut().zip(&g).zip(out) {
                        *t += gv * (1.0 - o * o);
                    }
                }
                Op::Sigmoid { x } => {
                    let out = self.nodes[i].out.values();
                    for ((t, &gv), &s) in grads[x.0].iter_mut().zip(&g).zip(out) {
                        *t += gv * s * (1.0 - s);
                    }
                }
                Op::Softmax { x } => {
                    let out = &self.nodes[i].out;
                    let (rows, cols) =
                        if out.shape().len() == 2 { (out.shape()[0], out.shape()[1]) } else { (1, out.len()) };
                    let ov = out.values();
                    let gx = &mut grads[x.0];
                    for r in 0..rows {
                        let mut dot = 0.0;
                        for j in 0..cols {
                            dot += g[r * cols + j] * ov[r * cols + j];
                        }
                        for j in 0..cols {
                            gx[r * cols + j] += ov[r * cols + j] * (g[r * cols + j] - dot);
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if ta.shape().len() == 1 {
                        let ca = ta.len();
                        for (t, &gv) in grads[a.0].iter_mut().zip(&g[..ca]) {
                            *t += gv;
                        }
                        for (t, &gv) in grads[b.0].iter_mut().zip(&g[ca..]) {
                            *t += gv;
                        }
                    } else {
                        let (n, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                        let c = ca + cb;
                        for r in 0..n {
                            for j in 0..ca {
                                grads[a.0][r * ca + j] += g[r * c + j];
                            }
                            for j in 0..cb {
                                grads[b.0][r * cb + j] += g[r * c + ca + j];
                            }
                        }
                    }
                }
                Op::Slice { x, start, end } => {
                    let t = self.value(*x);
                    if t.shape().len() == 1 {
                        for (j, &gv) in g.iter().enumerate() {
                            grads[x.0][start + j] += gv;
                        }
                    } else {
                        let (n, c) = (t.shape()[0], t.shape()[1]);
                        let w = end - start;
                        for r in 0..n {
                            for j in 0..w {
                                grads[x.0][r * c + start + j] += g[r * w + j];
                            }
                        }
                    }
                }
                Op::Mean { x } => {
                    let n = self.value(*x).len() as f64;
                    let gv = g[0] / n;
                    for t in grads[x.0].iter_mut() {
                        *t += gv;
                    }
                }
                Op::Sum { x } => {
                    let gv = g[0];
                    for t in grads[x.0].iter_mut() {
                        *t += gv;
                    }
                }
                Op::Scale { x, c } => {
                    for (t, &gv) in grads[x.0].iter_mut().zip(&g) {
                        *t += gv * c;
                    }
                }
                Op::RepeatRow { x, n } => {
                    let cols = self.value(*x).len();
                    for r in 0..*n {
                        for j in 0..cols {
                            grads[x.0][j] += g[r * cols + j];
                        }
                    }
                }
                Op::Reshape { x } => {
                    for (t, &gv) in grads[x.0].iter_mut().zip(&g) {
                        *t += gv;
                    }
                }
                Op::Scatter { x, indices } => {
                    for (j, &idx) in indices.iter().enumerate() {
                        grads[x.0][j] += g[idx];
                    }
                }
                Op::CrossEntropy { logits, labels } => {
                    let t = self.value(*logits);
                    let (n, k) = (t.shape()[0], t.shape()[1]);
                    let probs = softmax_rows(t.values(), n, k);
                    let scale = g[0] / n as f64;
                    let gl = &mut grads[logits.0];
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == label { 1.0 } else { 0.0 };
                            gl[r * k + j] += scale * (probs[r * k + j] - target);
                        }
                    }
                }
                Op::MmdLoss { probs, groups, bandwidth } => {
                    let t = self.value(*probs);
                    let cols = t.cols();
                    let ids = group_indices(groups);
                    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
                    let pairs = ids.len() * (ids.len() - 1) / 2;
                    let scale = g[0] / pairs as f64;
                    let rows_v = t.values();
                    let row = |i: usize| &rows_v[i * cols..(i + 1) * cols];
                    let gp = &mut grads[probs.0];
                    // d k(a, b) / d a = k(a, b) (b - a) / h^2
                    let add_pair = |gp: &mut Vec<f64>, i: usize, j: usize, w: f64| {
                        let kij = rbf(row(i), row(j), inv);
                        for d in 0..cols {
                            let diff = rows_v[j * cols + d] - rows_v[i * cols + d];
                            gp[i * cols + d] += w * kij * diff * (2.0 * inv);
                        }
                    };
                    for a in 0..ids.len() {
                        for b in a + 1..ids.len() {
                            let (ga, gb) = (&ids[a].1, &ids[b].1);
                            let (na, nb) = (ga.len() as f64, gb.len() as f64);
                            for &i in ga {
                                for &j in ga {
                                    add_pair(gp, i, j, scale * 2.0 / (na * na));
                                }
                                for &j in gb {
                                    add_pair(gp, i, j, -scale * 2.0 / (na * nb));
                                }
                            }
                            for &i in gb {
                                for &j in gb {
                                    add_pair(gp, i, j, scale * 2.0 / (nb * nb));
                                }
                                for &j in ga {
                                    add_pair(gp, i, j, -scale * 2.0 / (na * nb));
                                }
                            }
                        }
                    }
                }
                Op::StraightThroughOneHot { x } => {
                    for (t, &gv) in grads[x.0].iter_mut().zip(&g) {
                        *t += gv;
                    }
                }
            }
            grads[i] = g;
        }

        let shapes = self.nodes.iter().map(|n| n.out.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Distinct group labels with their member row indices, ordered by label.
fn group_indices(groups: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &gl) in groups.iter().enumerate() {
        match out.binary_search_by_key(&gl, |e| e.0) {
            Ok(pos) => out[pos].1.push(i),
            Err(pos) => out.insert(pos, (gl, vec![i])),
        }
    }
    out
}

/// Index of the maximum value; ties break to the lowest index.
pub fn argmax_tie_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
