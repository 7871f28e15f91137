//! Minimal reverse-mode tensor graph.
//!
//! One graph instance covers one truncated-BPTT window: nodes hold 2-D
//! row-major values, the op enum records parents, and `backward` walks the
//! node list in reverse accumulating gradients into the [`ParamStore`].
//! Hidden state is re-seeded as constants at window boundaries, which is
//! exactly the truncation.

use crate::error::{Error, Result};
use crate::network::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Const,
    Param(ParamId),
    /// Rows of a parameter matrix (embedding lookup).
    Gather { param: ParamId, rows: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    /// Broadcast a 1×n bias over the rows of a.
    AddRow { a: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: S },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    /// Row-wise softmax.
    SoftmaxRow { a: NodeId },
    Ln { a: NodeId },
    OneMinus { a: NodeId },
    /// Stack scalar nodes into a 1×k row.
    Stack { parts: Vec<NodeId> },
    /// Stack 1×n rows into an m×n matrix.
    ConcatRows { parts: Vec<NodeId> },
    SumAll { a: NodeId },
    SliceCols { a: NodeId, start: usize, len: usize },
    /// Scalar sum of per-bit binary cross entropies against fixed targets,
    /// taking pre-sigmoid logits.
    BceWithLogits { logits: NodeId, targets: Vec<S> },
    /// Scalar -log softmax(logits)[target].
    CeWithLogits { logits: NodeId, target: usize },
}

struct Node<S: Scalar> {
    op: Op<S>,
    rows: usize,
    cols: usize,
    value: Vec<S>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn softplus<S: Scalar>(z: S) -> S {
    // max(z, 0) + ln(1 + exp(-|z|))
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> S {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn push(&mut self, op: Op<S>, rows: usize, cols: usize, value: Vec<S>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<S>) -> NodeId {
        self.push(Op::Const, rows, cols, value)
    }

    pub fn scalar_const(&mut self, v: S) -> NodeId {
        self.constant(1, 1, vec![v])
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.push(Op::Param(id), p.rows, p.cols, p.value.clone())
    }

    pub fn gather(&mut self, store: &ParamStore<S>, id: ParamId, rows: Vec<usize>) -> NodeId {
        let p = store.get(id);
        let mut value = Vec::with_capacity(rows.len() * p.cols);
        for &r in &rows {
            value.extend_from_slice(&p.value[r * p.cols..(r + 1) * p.cols]);
        }
        let cols = p.cols;
        let n = rows.len();
        self.push(Op::Gather { param: id, rows }, n, cols, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul {m}x{k} by {k2}x{n}"
            )));
        }
        let mut value = vec![S::zero(); m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == S::zero() {
                        continue;
                    }
                    for j in 0..n {
                        value[i * n + j] = value[i * n + j] + x * bv[p * n + j];
                    }
                }
            }
        }
        Ok(self.push(Op::MatMul { a, b }, m, n, value))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(a);
        let (br, bn) = self.shape(bias);
        if br != 1 || bn != n {
            return Err(Error::ShapeMismatch(format!(
                "add_row {m}x{n} with bias {br}x{bn}"
            )));
        }
        let value = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| x + self.nodes[bias.0].value[i % n])
            .collect();
        Ok(self.push(Op::AddRow { a, bias }, m, n, value))
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::ShapeMismatch(format!(
                "elementwise {}x{} with {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.elementwise(a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(Op::Add { a, b }, m, n, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.elementwise(a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(Op::Mul { a, b }, m, n, value))
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| x * c).collect();
        self.push(Op::Scale { a, c }, m, n, value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid { a }, m, n, value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh { a }, m, n, value)
    }

    pub fn softmax_row(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let mut value = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &self.nodes[a.0].value[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&x| (x - mx).exp()).collect();
            let z: S = exps.iter().cloned().sum();
            value.extend(exps.into_iter().map(|e| e / z));
        }
        self.push(Op::SoftmaxRow { a }, m, n, value)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| x.ln()).collect();
        self.push(Op::Ln { a }, m, n, value)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| S::one() - x).collect();
        self.push(Op::OneMinus { a }, m, n, value)
    }

    pub fn stack_scalars(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let mut value = Vec::with_capacity(parts.len());
        for &p in &parts {
            if self.shape(p) != (1, 1) {
                return Err(Error::ShapeMismatch("stack expects 1x1 nodes".into()));
            }
            value.push(self.nodes[p.0].value[0]);
        }
        let k = parts.len();
        Ok(self.push(Op::Stack { parts }, 1, k, value))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let n = match parts.first() {
            Some(&p) => self.shape(p).1,
            None => return Err(Error::ShapeMismatch("concat of zero rows".into())),
        };
        let mut value = Vec::new();
        for &p in &parts {
            if self.shape(p) != (1, n) {
                return Err(Error::ShapeMismatch("concat expects 1xN rows".into()));
            }
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let m = parts.len();
        Ok(self.push(Op::ConcatRows { parts }, m, n, value))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total: S = self.nodes[a.0].value.iter().cloned().sum();
        self.push(Op::SumAll { a }, 1, 1, vec![total])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, S::from_f64_lossy(1.0 / (m * n) as f64))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(Error::ShapeMismatch(format!(
                "slice [{start}, {}) of width {n}",
                start + len
            )));
        }
        let mut value = Vec::with_capacity(m * len);
        for i in 0..m {
            value.extend_from_slice(&self.nodes[a.0].value[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Op::SliceCols { a, start, len }, m, len, value))
    }

    /// Sum over bits of BCE against fixed 0/1 targets, from logits.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Vec<S>) -> Result<NodeId> {
        let (m, n) = self.shape(logits);
        if m != 1 || targets.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "bce targets {} for logits {m}x{n}",
                targets.len()
            )));
        }
        let loss: S = self.nodes[logits.0]
            .value
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        Ok(self.push(Op::BceWithLogits { logits, targets }, 1, 1, vec![loss]))
    }

    /// -log softmax(logits)[target].
    pub fn ce_with_logits(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let (m, n) = self.shape(logits);
        if m != 1 {
            return Err(Error::ShapeMismatch("ce expects a 1xN logits row".into()));
        }
        if target >= n {
            return Err(Error::TokenOutOfRange {
                token: target,
                vocab_size: n,
            });
        }
        let row = &self.nodes[logits.0].value;
        let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let lse: S = mx
            + row
                .iter()
                .map(|&x| (x - mx).exp())
                .sum::<S>()
                .ln();
        let loss = lse - row[target];
        Ok(self.push(Op::CeWithLogits { logits, target }, 1, 1, vec![loss]))
    }

    /// Reverse-mode sweep from a scalar `loss`, accumulating into parameter
    /// gradients. The graph stays usable for value reads afterwards.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<S>) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            let add_grad = |grads: &mut Vec<Option<Vec<S>>>, id: NodeId, delta: Vec<S>| {
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(delta) {
                            *a = *a + d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Const => {}
                Op::Param(pid) => {
                    let p = store.get_mut(*pid);
                    for (pg, d) in p.grad.iter_mut().zip(&g) {
                        *pg = *pg + *d;
                    }
                }
                Op::Gather { param, rows } => {
                    let p = store.get_mut(*param);
                    let cols = p.cols;
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            p.grad[r * cols + c] = p.grad[r * cols + c] + g[i * cols + c];
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.shape(*a);
                    let (_, n) = self.shape(*b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    // dA = G * B^T
                    let mut da = vec![S::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == S::zero() {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] = da[i * k + p] + gij * bv[p * n + j];
                            }
                        }
                    }
                    // dB = A^T * G
                    let mut db = vec![S::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == S::zero() {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] = db[p * n + j] + aip * g[i * n + j];
                            }
                        }
                    }
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::AddRow { a, bias } => {
                    let (m, n) = self.shape(*a);
                    add_grad(&mut grads, *a, g.clone());
                    let mut dbias = vec![S::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            dbias[j] = dbias[j] + g[i * n + j];
                        }
                    }
                    add_grad(&mut grads, *bias, dbias);
                }
                Op::Add { a, b } => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::Mul { a, b } => {
                    let da: Vec<S> = g
                        .iter()
                        .zip(&self.nodes[b.0].value)
                        .map(|(&d, &y)| d * y)
                        .collect();
                    let db: Vec<S> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&d, &x)| d * x)
                        .collect();
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::Scale { a, c } => {
                    add_grad(&mut grads, *a, g.iter().map(|&d| d * *c).collect());
                }
                Op::Sigmoid { a } => {
                    let da = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&d, &y)| d * y * (S::one() - y))
                        .collect();
                    add_grad(&mut grads, *a, da);
                }
                Op::Tanh { a } => {
                    let da = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&d, &y)| d * (S::one() - y * y))
                        .collect();
                    add_grad(&mut grads, *a, da);
                }
                Op::SoftmaxRow { a } => {
                    let (m, n) = self.shape(*a);
                    let y = &node.value;
                    let mut da = vec![S::zero(); m * n];
                    for i in 0..m {
                        let dot: S = (0..n).map(|j| g[i * n + j] * y[i * n + j]).sum();
                        for j in 0..n {
                            da[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                    add_grad(&mut grads, *a, da);
                }
                Op::Ln { a } => {
                    let da = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&d, &x)| d / x)
                        .collect();
                    add_grad(&mut grads, *a, da);
                }
                Op::OneMinus { a } => {
                    add_grad(&mut grads, *a, g.iter().map(|&d| -d).collect());
                }
                Op::Stack { parts } => {
                    for (i, &p) in parts.iter().enumerate() {
                        add_grad(&mut grads, p, vec![g[i]]);
                    }
                }
                Op::ConcatRows { parts } => {
                    let n = node.cols;
                    for (i, &p) in parts.iter().enumerate() {
                        add_grad(&mut grads, p, g[i * n..(i + 1) * n].to_vec());
                    }
                }
                Op::SumAll { a } => {
                    let (m, n) = self.shape(*a);
                    add_grad(&mut grads, *a, vec![g[0]; m * n]);
                }
                Op::SliceCols { a, start, len } => {
                    let (m, n) = self.shape(*a);
                    let mut da = vec![S::zero(); m * n];
                    for i in 0..m {
                        for j in 0..*len {
                            da[i * n + start + j] = g[i * len + j];
                        }
                    }
                    add_grad(&mut grads, *a, da);
                }
                Op::BceWithLogits { logits, targets } => {
                    let da = self.nodes[logits.0]
                        .value
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| g[0] * (sigmoid(z) - y))
                        .collect();
                    add_grad(&mut grads, *logits, da);
                }
                Op::CeWithLogits { logits, target } => {
                    let row = &self.nodes[logits.0].value;
                    let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let exps: Vec<S> = row.iter().map(|&x| (x - mx).exp()).collect();
                    let z: S = exps.iter().cloned().sum();
                    let da = exps
                        .iter()
                        .enumerate()
                        .map(|(j, &e)| {
                            let p = e / z;
                            let y = if j == *target { S::one() } else { S::zero() };
                            g[0] * (p - y)
                        })
                        .collect();
                    add_grad(&mut grads, *logits, da);
                }
            }
        }
        Ok(())
    }
}
