use std::collections::BTreeMap;

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {node} ({op}): {message}")]
    Shape {
        node: usize,
        op: String,
        message: String,
    },
    #[error("leaf '{0}' is not bound")]
    UnboundLeaf(String),
    #[error("leaf '{name}' expects shape {expected:?}, got {actual:?}")]
    BindingShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: String },
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("backward seed node {node} has shape {shape:?}, expected a scalar")]
    SeedNotScalar { node: usize, shape: Vec<usize> },
    #[error("seed adjoint has {actual} elements, node {node} has {expected}")]
    SeedAdjointShape {
        node: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
}

/// Handle to a node inside one [`Graph`]. Ids are only meaningful for the
/// graph that returned them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        name: String,
    },
    Add(NodeId, NodeId),
    /// `[m × n]` matrix plus length-`n` bias vector, broadcast over rows.
    /// The only broadcast the graph supports.
    AddBias {
        matrix: NodeId,
        bias: NodeId,
    },
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Softmax over the last axis (whole vector for rank 1, per row for
    /// rank 2), computed with max subtraction.
    Softmax(NodeId),
    /// Rectangular sub-block of a rank-2 node.
    Slice {
        input: NodeId,
        row_start: usize,
        row_len: usize,
        col_start: usize,
        col_len: usize,
    },
    /// Stack along axis 0: vectors end-to-end, matrices by rows.
    Concat(Vec<NodeId>),
    /// Sum of all elements, yielding a scalar (shape `[1]`).
    Sum(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::AddBias { .. } => "add_bias",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softmax(..) => "softmax",
            Op::Slice { .. } => "slice",
            Op::Concat(..) => "concat",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Static computation graph over [`Tensor`] values.
///
/// Nodes are appended in topological order (an op can only reference
/// already-built nodes), every shape is inferred and checked at
/// construction, and the structure is immutable once built. Evaluation
/// state lives in per-call [`Evaluation`] workspaces.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.leaves.iter().map(|(n, id)| (n.as_str(), *id))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape });
        id
    }

    fn err(&self, op: &str, message: String) -> GraphError {
        GraphError::Shape {
            node: self.nodes.len(),
            op: op.to_string(),
            message,
        }
    }

    pub fn leaf(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, GraphError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(self.err("leaf", format!("invalid leaf shape {shape:?}")));
        }
        if self.leaves.contains_key(name) {
            return Err(self.err("leaf", format!("duplicate leaf name '{name}'")));
        }
        let id = self.push(
            Op::Leaf {
                name: name.to_string(),
            },
            shape.to_vec(),
        );
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    fn check_id(&self, id: NodeId, op: &str) -> Result<(), GraphError> {
        if id.0 >= self.nodes.len() {
            return Err(self.err(op, format!("references unknown node {}", id.0)));
        }
        Ok(())
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<Vec<usize>, GraphError> {
        self.check_id(a, op)?;
        self.check_id(b, op)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(self.err(op, format!("operand shapes differ: {sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn add_bias(&mut self, matrix: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        self.check_id(matrix, "add_bias")?;
        self.check_id(bias, "add_bias")?;
        let (ms, bs) = (self.shape(matrix).to_vec(), self.shape(bias));
        if ms.len() != 2 || bs.len() != 1 || bs[0] != ms[1] {
            return Err(self.err(
                "add_bias",
                format!("expected [m × n] matrix and [n] bias, got {ms:?} and {bs:?}"),
            ));
        }
        Ok(self.push(Op::AddBias { matrix, bias }, ms))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.check_id(a, "matmul")?;
        self.check_id(b, "matmul")?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.err(
                "matmul",
                format!("incompatible operand shapes {sa:?} x {sb:?}"),
            ));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul(a, b), shape))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.check_id(x, "sigmoid")?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Sigmoid(x), shape))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.check_id(x, "tanh")?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Tanh(x), shape))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.check_id(x, "softmax")?;
        let shape = self.shape(x).to_vec();
        if shape.len() > 2 {
            return Err(self.err("softmax", format!("expected rank 1 or 2, got {shape:?}")));
        }
        Ok(self.push(Op::Softmax(x), shape))
    }

    pub fn slice(
        &mut self,
        input: NodeId,
        row_start: usize,
        row_len: usize,
        col_start: usize,
        col_len: usize,
    ) -> Result<NodeId, GraphError> {
        self.check_id(input, "slice")?;
        let s = self.shape(input);
        if s.len() != 2 {
            return Err(self.err("slice", format!("expected a rank-2 node, got {s:?}")));
        }
        if row_len == 0
            || col_len == 0
            || row_start + row_len > s[0]
            || col_start + col_len > s[1]
        {
            return Err(self.err(
                "slice",
                format!(
                    "rows {row_start}..{} cols {col_start}..{} out of bounds for {s:?}",
                    row_start + row_len,
                    col_start + col_len
                ),
            ));
        }
        Ok(self.push(
            Op::Slice {
                input,
                row_start,
                row_len,
                col_start,
                col_len,
            },
            vec![row_len, col_len],
        ))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        if inputs.is_empty() {
            return Err(self.err("concat", "needs at least one input".to_string()));
        }
        for &id in inputs {
            self.check_id(id, "concat")?;
        }
        let first = self.shape(inputs[0]).to_vec();
        let shape = match first.len() {
            1 => {
                let mut total = 0;
                for &id in inputs {
                    let s = self.shape(id);
                    if s.len() != 1 {
                        return Err(self.err("concat", format!("rank mismatch: {s:?}")));
                    }
                    total += s[0];
                }
                vec![total]
            }
            2 => {
                let cols = first[1];
                let mut rows = 0;
                for &id in inputs {
                    let s = self.shape(id);
                    if s.len() != 2 || s[1] != cols {
                        return Err(self.err(
                            "concat",
                            format!("inputs must share column count {cols}, got {s:?}"),
                        ));
                    }
                    rows += s[0];
                }
                vec![rows, cols]
            }
            _ => return Err(self.err("concat", format!("expected rank 1 or 2, got {first:?}"))),
        };
        Ok(self.push(Op::Concat(inputs.to_vec()), shape))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.check_id(x, "sum")?;
        Ok(self.push(Op::Sum(x), vec![1]))
    }

    /// Evaluate every node given bound leaves.
    ///
    /// Deterministic: identical bindings produce bit-identical values. Any
    /// node producing a non-finite value aborts with an error naming it.
    pub fn forward(&self, bindings: &Bindings) -> Result<Evaluation, GraphError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Leaf { name } => bindings.values[idx]
                    .clone()
                    .ok_or_else(|| GraphError::UnboundLeaf(name.clone()))?,
                Op::Add(a, b) => {
                    let (a, b) = (&values[a.0], &values[b.0]);
                    let data = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| x + y)
                        .collect();
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::AddBias { matrix, bias } => {
                    let (m, b) = (&values[matrix.0], &values[bias.0]);
                    let n = b.len();
                    let data = m
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x + b.data()[i % n])
                        .collect();
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::Mul(a, b) => {
                    let (a, b) = (&values[a.0], &values[b.0]);
                    let data = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| x * y)
                        .collect();
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&values[a.0], &values[b.0]);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut out = vec![0.0; m * n];
                    matmul(ta.data(), tb.data(), m, k, n, &mut out);
                    Tensor::from_raw_unchecked(node.shape.clone(), out)
                }
                Op::Sigmoid(x) => {
                    let data = values[x.0].data().iter().map(|&v| sigmoid(v)).collect();
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::Tanh(x) => {
                    let data = values[x.0].data().iter().map(|v| v.tanh()).collect();
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::Softmax(x) => {
                    let t = &values[x.0];
                    let cols = t.cols();
                    let mut data = t.data().to_vec();
                    for row in data.chunks_mut(cols) {
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for v in row.iter_mut() {
                            *v = (*v - max).exp();
                            sum += *v;
                        }
                        for v in row.iter_mut() {
                            *v /= sum;
                        }
                    }
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::Slice {
                    input,
                    row_start,
                    row_len,
                    col_start,
                    col_len,
                } => {
                    let t = &values[input.0];
                    let cols = t.cols();
                    let mut data = Vec::with_capacity(row_len * col_len);
                    for r in *row_start..row_start + row_len {
                        let base = r * cols + col_start;
                        data.extend_from_slice(&t.data()[base..base + col_len]);
                    }
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::Concat(inputs) => {
                    let mut data = Vec::new();
                    for id in inputs {
                        data.extend_from_slice(values[id.0].data());
                    }
                    Tensor::from_raw_unchecked(node.shape.clone(), data)
                }
                Op::Sum(x) => {
                    let s: f64 = values[x.0].data().iter().sum();
                    Tensor::from_raw_unchecked(vec![1], vec![s])
                }
            };
            if value.first_non_finite().is_some() {
                return Err(GraphError::NonFinite {
                    node: idx,
                    op: node.op.name().to_string(),
                });
            }
            values.push(value);
        }
        Ok(Evaluation { values })
    }

    /// Reverse-mode gradients of a scalar node w.r.t. the given leaves.
    ///
    /// `forward` must already have been evaluated; gradients accumulate
    /// (sum) across fan-out.
    pub fn backward(
        &self,
        eval: &Evaluation,
        seed: NodeId,
        wrt: &[NodeId],
    ) -> Result<Gradients, GraphError> {
        self.check_backward_ids(seed, wrt)?;
        let seed_shape = self.shape(seed);
        if seed_shape.iter().product::<usize>() != 1 {
            return Err(GraphError::SeedNotScalar {
                node: seed.0,
                shape: seed_shape.to_vec(),
            });
        }
        self.backward_seeded(eval, seed, &[1.0], wrt)
    }

    /// Generalization of [`Graph::backward`]: seed an arbitrary adjoint at
    /// `seed` (used to fuse softmax/cross-entropy during training).
    pub fn backward_seeded(
        &self,
        eval: &Evaluation,
        seed: NodeId,
        seed_adjoint: &[f64],
        wrt: &[NodeId],
    ) -> Result<Gradients, GraphError> {
        self.check_backward_ids(seed, wrt)?;
        let expected: usize = self.shape(seed).iter().product();
        if seed_adjoint.len() != expected {
            return Err(GraphError::SeedAdjointShape {
                node: seed.0,
                expected,
                actual: seed_adjoint.len(),
            });
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[seed.0] = Some(seed_adjoint.to_vec());

        // Reverse insertion order is a valid reverse topological order.
        for idx in (0..=seed.0).rev() {
            let Some(dout) = adjoints[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {
                    adjoints[idx] = Some(dout);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, a.0, eval.len_of(*a), |acc| {
                        for (o, d) in acc.iter_mut().zip(&dout) {
                            *o += d;
                        }
                    });
                    accumulate(&mut adjoints, b.0, eval.len_of(*b), |acc| {
                        for (o, d) in acc.iter_mut().zip(&dout) {
                            *o += d;
                        }
                    });
                }
                Op::AddBias { matrix, bias } => {
                    let n = eval.len_of(*bias);
                    accumulate(&mut adjoints, matrix.0, eval.len_of(*matrix), |acc| {
                        for (o, d) in acc.iter_mut().zip(&dout) {
                            *o += d;
                        }
                    });
                    accumulate(&mut adjoints, bias.0, n, |acc| {
                        for (i, d) in dout.iter().enumerate() {
                            acc[i % n] += d;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (eval.values[a.0].data(), eval.values[b.0].data());
                    accumulate(&mut adjoints, a.0, va.len(), |acc| {
                        for i in 0..acc.len() {
                            acc[i] += dout[i] * vb[i];
                        }
                    });
                    accumulate(&mut adjoints, b.0, vb.len(), |acc| {
                        for i in 0..acc.len() {
                            acc[i] += dout[i] * va[i];
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&eval.values[a.0], &eval.values[b.0]);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA += dOut · Bᵀ
                    accumulate(&mut adjoints, a.0, m * k, |acc| {
                        for i in 0..m {
                            for j in 0..n {
                                let d = dout[i * n + j];
                                if d != 0.0 {
                                    for kk in 0..k {
                                        acc[i * k + kk] += d * tb.data()[kk * n + j];
                                    }
                                }
                            }
                        }
                    });
                    // dB += Aᵀ · dOut
                    accumulate(&mut adjoints, b.0, k * n, |acc| {
                        for i in 0..m {
                            for kk in 0..k {
                                let av = ta.data()[i * k + kk];
                                if av != 0.0 {
                                    for j in 0..n {
                                        acc[kk * n + j] += av * dout[i * n + j];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = eval.values[idx].data();
                    accumulate(&mut adjoints, x.0, y.len(), |acc| {
                        for i in 0..acc.len() {
                            acc[i] += dout[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = eval.values[idx].data();
                    accumulate(&mut adjoints, x.0, y.len(), |acc| {
                        for i in 0..acc.len() {
                            acc[i] += dout[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
                Op::Softmax(x) => {
                    let y = eval.values[idx].data();
                    let cols = eval.values[idx].cols();
                    accumulate(&mut adjoints, x.0, y.len(), |acc| {
                        for (r, chunk) in y.chunks(cols).enumerate() {
                            let base = r * cols;
                            let dot: f64 = (0..cols).map(|c| dout[base + c] * chunk[c]).sum();
                            for c in 0..cols {
                                acc[base + c] += chunk[c] * (dout[base + c] - dot);
                            }
                        }
                    });
                }
                Op::Slice {
                    input,
                    row_start,
                    row_len,
                    col_start,
                    col_len,
                } => {
                    let cols = eval.values[input.0].cols();
                    accumulate(&mut adjoints, input.0, eval.len_of(*input), |acc| {
                        for r in 0..*row_len {
                            for c in 0..*col_len {
                                acc[(row_start + r) * cols + col_start + c] +=
                                    dout[r * col_len + c];
                            }
                        }
                    });
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for id in inputs {
                        let len = eval.len_of(*id);
                        let piece = &dout[offset..offset + len];
                        accumulate(&mut adjoints, id.0, len, |acc| {
                            for (o, d) in acc.iter_mut().zip(piece) {
                                *o += d;
                            }
                        });
                        offset += len;
                    }
                }
                Op::Sum(x) => {
                    let d = dout[0];
                    accumulate(&mut adjoints, x.0, eval.len_of(*x), |acc| {
                        for o in acc.iter_mut() {
                            *o += d;
                        }
                    });
                }
            }
        }

        let mut out: BTreeMap<NodeId, Tensor> = BTreeMap::new();
        for &leaf in wrt {
            let shape = self.shape(leaf).to_vec();
            let data = adjoints[leaf.0]
                .take()
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            if data.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::NonFinite {
                    node: leaf.0,
                    op: "gradient".to_string(),
                });
            }
            out.insert(leaf, Tensor::from_raw_unchecked(shape, data));
        }
        Ok(Gradients { by_leaf: out })
    }

    fn check_backward_ids(&self, seed: NodeId, wrt: &[NodeId]) -> Result<(), GraphError> {
        if seed.0 >= self.nodes.len() {
            return Err(GraphError::UnknownNode(seed.0));
        }
        for &leaf in wrt {
            if leaf.0 >= self.nodes.len() {
                return Err(GraphError::UnknownNode(leaf.0));
            }
            if !matches!(self.nodes[leaf.0].op, Op::Leaf { .. }) {
                return Err(GraphError::NotALeaf(leaf.0));
            }
        }
        Ok(())
    }
}

fn accumulate(
    adjoints: &mut [Option<Vec<f64>>],
    idx: usize,
    len: usize,
    write: impl FnOnce(&mut Vec<f64>),
) {
    let slot = adjoints[idx].get_or_insert_with(|| vec![0.0; len]);
    write(slot);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                let brow = &b[kk * n..kk * n + n];
                let orow = &mut out[i * n..i * n + n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
}

/// Per-call leaf bindings for one graph evaluation.
pub struct Bindings<'g> {
    graph: &'g Graph,
    values: Vec<Option<Tensor>>,
}

impl<'g> Bindings<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            values: vec![None; graph.nodes.len()],
        }
    }

    pub fn set(&mut self, leaf: NodeId, value: Tensor) -> Result<(), GraphError> {
        if leaf.0 >= self.graph.nodes.len() {
            return Err(GraphError::UnknownNode(leaf.0));
        }
        let Op::Leaf { name } = &self.graph.nodes[leaf.0].op else {
            return Err(GraphError::NotALeaf(leaf.0));
        };
        let expected = self.graph.shape(leaf);
        if value.shape() != expected {
            return Err(GraphError::BindingShape {
                name: name.clone(),
                expected: expected.to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        self.values[leaf.0] = Some(value);
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<(), GraphError> {
        let id = self
            .graph
            .leaf_id(name)
            .ok_or_else(|| GraphError::UnboundLeaf(name.to_string()))?;
        self.set(id, value)
    }
}

/// Forward values for every node of one evaluation.
#[derive(Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.values[id.0].len()
    }
}

/// Gradients for the requested leaves of one backward pass.
#[derive(Debug)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn expect(&self, leaf: NodeId) -> &Tensor {
        self.by_leaf.get(&leaf).expect("gradient was requested")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_scalar(graph: &Graph, bindings: &Bindings, node: NodeId) -> f64 {
        graph.forward(bindings).unwrap().value(node).scalar_value()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1]).unwrap();
        let y = g.sigmoid(x).unwrap();
        let mut b = Bindings::new(&g);
        b.set(x, Tensor::scalar(0.0).unwrap()).unwrap();
        assert_eq!(eval_scalar(&g, &b, y), 0.5);
    }

    #[test]
    fn matmul_hand_check() {
        let mut g = Graph::new();
        let a = g.leaf("a", &[2, 2]).unwrap();
        let b = g.leaf("b", &[2, 1]).unwrap();
        let c = g.matmul(a, b).unwrap();
        let mut bind = Bindings::new(&g);
        bind.set(a, Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        bind.set(b, Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap())
            .unwrap();
        let eval = g.forward(&bind).unwrap();
        assert_eq!(eval.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_of_uniform_logits() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[3]).unwrap();
        let y = g.softmax(x).unwrap();
        let mut b = Bindings::new(&g);
        b.set(x, Tensor::vector(&[0.0, 0.0, 0.0]).unwrap()).unwrap();
        let eval = g.forward(&b).unwrap();
        for v in eval.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_gradient() {
        // f(x) = x·x at x = 3 → df/dx = 6
        let mut g = Graph::new();
        let x = g.leaf("x", &[1]).unwrap();
        let f = g.mul(x, x).unwrap();
        let mut b = Bindings::new(&g);
        b.set(x, Tensor::scalar(3.0).unwrap()).unwrap();
        let eval = g.forward(&b).unwrap();
        let grads = g.backward(&eval, f, &[x]).unwrap();
        assert_eq!(grads.expect(x).data(), &[6.0]);
    }

    #[test]
    fn product_rule_gradient() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1]).unwrap();
        let y = g.leaf("y", &[1]).unwrap();
        let f = g.mul(x, y).unwrap();
        let mut b = Bindings::new(&g);
        b.set(x, Tensor::scalar(2.0).unwrap()).unwrap();
        b.set(y, Tensor::scalar(5.0).unwrap()).unwrap();
        let eval = g.forward(&b).unwrap();
        let grads = g.backward(&eval, f, &[x, y]).unwrap();
        assert_eq!(grads.expect(x).data(), &[5.0]);
        assert_eq!(grads.expect(y).data(), &[2.0]);
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        // f = x·x + x → df/dx = 2x + 1 = 7 at x = 3
        let mut g = Graph::new();
        let x = g.leaf("x", &[1]).unwrap();
        let sq = g.mul(x, x).unwrap();
        let f = g.add(sq, x).unwrap();
        let mut b = Bindings::new(&g);
        b.set(x, Tensor::scalar(3.0).unwrap()).unwrap();
        let eval = g.forward(&b).unwrap();
        let grads = g.backward(&eval, f, &[x]).unwrap();
        assert_eq!(grads.expect(x).data(), &[7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_seed() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[2]).unwrap();
        let y = g.tanh(x).unwrap();
        let mut b = Bindings::new(&g);
        b.set(x, Tensor::vector(&[0.1, 0.2]).unwrap()).unwrap();
        let eval = g.forward(&b).unwrap();
        let err = g.backward(&eval, y, &[x]).unwrap_err();
        assert!(matches!(err, GraphError::SeedNotScalar { .. }));
    }

    #[test]
    fn binding_shape_mismatch_names_leaf() {
        let mut g = Graph::new();
        let x = g.leaf("input", &[2, 3]).unwrap();
        let mut b = Bindings::new(&g);
        let err = b.set(x, Tensor::zeros(&[3, 2])).unwrap_err();
        match err {
            GraphError::BindingShape { name, .. } => assert_eq!(name, "input"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unbound_leaf_is_reported() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1]).unwrap();
        let _ = g.tanh(x).unwrap();
        let b = Bindings::new(&g);
        assert!(matches!(
            g.forward(&b),
            Err(GraphError::UnboundLeaf(name)) if name == "x"
        ));
    }

    #[test]
    fn construction_shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.leaf("a", &[2, 3]).unwrap();
        let b = g.leaf("b", &[4, 5]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[2, 3]).unwrap();
        let top = g.slice(x, 0, 1, 0, 3).unwrap();
        let bottom = g.slice(x, 1, 1, 0, 3).unwrap();
        let back = g.concat(&[top, bottom]).unwrap();
        let total = g.sum(back).unwrap();
        let mut b = Bindings::new(&g);
        let t = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        b.set(x, t.clone()).unwrap();
        let eval = g.forward(&b).unwrap();
        assert_eq!(eval.value(back).data(), t.data());
        assert_eq!(eval.value(total).scalar_value(), 21.0);
        let grads = g.backward(&eval, total, &[x]).unwrap();
        assert_eq!(grads.expect(x).data(), &[1.0; 6]);
    }

    #[test]
    fn deterministic_forward_backward() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1, 4]).unwrap();
        let w = g.leaf("w", &[4, 4]).unwrap();
        let h = g.matmul(x, w).unwrap();
        let a = g.tanh(h).unwrap();
        let s = g.sum(a).unwrap();
        let xv = Tensor::new(vec![1, 4], vec![0.3, -0.7, 0.11, 0.9]).unwrap();
        let wv = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64) * 0.07 - 0.5).collect())
            .unwrap();

        let run = || {
            let mut b = Bindings::new(&g);
            b.set(x, xv.clone()).unwrap();
            b.set(w, wv.clone()).unwrap();
            let eval = g.forward(&b).unwrap();
            let grads = g.backward(&eval, s, &[x, w]).unwrap();
            (
                eval.value(s).scalar_value().to_bits(),
                grads.expect(x).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
