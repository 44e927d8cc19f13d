use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// The fixed operation vocabulary. Each variant carries whatever the
/// backward pass needs besides the input values.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddRow { x: NodeId, bias: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Tanh { x: NodeId },
    Gelu { x: NodeId },
    Softmax { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, mask: Vec<bool> },
    Reshape { x: NodeId },
    Transpose { x: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    Dropout { x: NodeId, keep: Vec<bool>, scale: f64 },
    Sum { x: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// A single-use computation tape. Nodes are appended in execution order, so
/// node ids are already a topological order and `backward` walks them once
/// in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.node(id).value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        let n = self.node(id);
        if n.value.len() != 1 {
            return Err(AutogradError::NotScalar {
                op: "scalar_value",
                shape: n.shape.clone(),
            });
        }
        Ok(n.value[0])
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    /// Registers a tensor's current data as a leaf. Gradient is tracked iff
    /// the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Like [`Graph::leaf`] but records the node id back into the tensor so
    /// its gradient can be collected after `backward`.
    pub fn register(&mut self, t: &mut Tensor) -> NodeId {
        let id = self.leaf(t);
        t.set_node_id(Some(id));
        id
    }

    /// A leaf that never tracks gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<NodeId> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(AutogradError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), data, false))
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let va = &self.node(a).value;
        let vb = &self.node(b).value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = va[i * k + p];
                let brow = &vb[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, vec![m, n], out, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutogradError::ShapeMismatch {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, shape, out, needs))
    }

    /// Broadcast add of a `[d]` bias over the last axis of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != d {
            return Err(AutogradError::ShapeMismatch {
                op: "add_row",
                left: sx,
                right: sb,
            });
        }
        let vb = self.node(bias).value.clone();
        let out: Vec<f64> = self
            .node(x)
            .value
            .iter()
            .enumerate()
            .map(|(i, v)| v + vb[i % d])
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddRow { x, bias }, sx, out, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutogradError::ShapeMismatch {
                op: "mul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, shape, out, needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let out: Vec<f64> = self.node(x).value.iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Scale { x, factor }, shape, out, needs))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<f64> = self.node(x).value.iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Tanh { x }, shape, out, needs))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<f64> = self.node(x).value.iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Gelu { x }, shape, out, needs))
    }

    /// Softmax along the last axis, with max-subtraction for stability.
    /// NaN inputs propagate NaN.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.softmax_impl(x, None)
    }

    /// Softmax along the last axis restricted to `mask`-true entries.
    /// Masked entries produce exactly 0.0 and receive zero gradient. A row
    /// with no allowed entry comes out all zero.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let numel = self.node(x).value.len();
        if mask.len() != numel {
            return Err(AutogradError::AuxLength {
                op: "masked_softmax",
                expected: numel,
                got: mask.len(),
            });
        }
        self.softmax_impl(x, Some(mask.to_vec()))
    }

    fn softmax_impl(&mut self, x: NodeId, mask: Option<Vec<bool>>) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 {
            return Err(AutogradError::ShapeMismatch {
                op: "softmax",
                left: shape,
                right: vec![],
            });
        }
        let v = &self.node(x).value;
        let rows = v.len() / d;
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let allowed = |j: usize| mask.as_ref().map_or(true, |m| m[r * d + j]);
            let mut maxv = f64::NEG_INFINITY;
            for j in 0..d {
                if allowed(j) && row[j] > maxv {
                    maxv = row[j];
                }
            }
            if maxv == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut sum = 0.0;
            for j in 0..d {
                if allowed(j) {
                    let e = (row[j] - maxv).exp();
                    out[r * d + j] = e;
                    sum += e;
                }
            }
            for j in 0..d {
                if allowed(j) {
                    out[r * d + j] /= sum;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Softmax { x }, shape, out, needs))
    }

    /// Per-row normalization to zero mean / unit variance over the last
    /// axis, followed by the affine `gain * xhat + bias`. Variance epsilon
    /// is 1e-5.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(id);
            if s.len() != 1 || s[0] != d {
                let _ = name;
                return Err(AutogradError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape,
                    right: s.to_vec(),
                });
            }
        }
        let v = &self.node(x).value;
        let vg = &self.node(gain).value;
        let vb = &self.node(bias).value;
        let rows = v.len() / d;
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let (mean, rstd) = row_stats(row);
            for j in 0..d {
                out[r * d + j] = vg[j] * ((row[j] - mean) * rstd) + vb[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Op::LayerNorm { x, gain, bias }, shape, out, needs))
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "embedding",
                left: st,
                right: vec![ids.len()],
            });
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(AutogradError::IndexOutOfRange { index: bad, rows });
        }
        let v = &self.node(table).value;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&v[i * d..(i + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Op::Embedding { table, ids: ids.to_vec() },
            vec![ids.len(), d],
            out,
            needs,
        ))
    }

    /// Mean negative log-softmax probability over unmasked positions.
    /// Positions with `mask[i] == false` contribute nothing.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "cross_entropy",
                left: shape,
                right: vec![targets.len()],
            });
        }
        let (t, classes) = (shape[0], shape[1]);
        if targets.len() != t {
            return Err(AutogradError::AuxLength {
                op: "cross_entropy targets",
                expected: t,
                got: targets.len(),
            });
        }
        if mask.len() != t {
            return Err(AutogradError::AuxLength {
                op: "cross_entropy mask",
                expected: t,
                got: mask.len(),
            });
        }
        let active = mask.iter().filter(|&&m| m).count();
        if active == 0 {
            return Err(AutogradError::EmptyLoss);
        }
        for i in 0..t {
            if mask[i] && targets[i] >= classes {
                return Err(AutogradError::TargetOutOfRange {
                    position: i,
                    target: targets[i],
                    classes,
                });
            }
        }
        let v = &self.node(logits).value;
        let mut total = 0.0;
        for i in 0..t {
            if !mask[i] {
                continue;
            }
            let row = &v[i * classes..(i + 1) * classes];
            total -= log_softmax_at(row, targets[i]);
        }
        let loss = total / active as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            vec![1],
            vec![loss],
            needs,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let numel = self.node(x).value.len();
        let expected: usize = new_shape.iter().product();
        if expected != numel {
            return Err(AutogradError::DataLength {
                shape: new_shape.to_vec(),
                expected,
                got: numel,
            });
        }
        let value = self.node(x).value.clone();
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape { x }, new_shape.to_vec(), value, needs))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "transpose",
                left: s,
                right: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        let v = &self.node(x).value;
        let mut out = vec![0.0; v.len()];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Transpose { x }, vec![n, m], out, needs))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "slice_cols",
                left: s,
                right: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        if start + len > n {
            return Err(AutogradError::SliceOutOfRange { start, len, cols: n });
        }
        let v = &self.node(x).value;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SliceCols { x, start, len }, vec![m, len], out, needs))
    }

    /// Vertical stack of 2-D tensors with equal widths.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let n = self.shape(parts[0]).to_vec();
        if n.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "concat_rows",
                left: n,
                right: vec![],
            });
        }
        let width = n[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != width {
                return Err(AutogradError::ShapeMismatch {
                    op: "concat_rows",
                    left: n.clone(),
                    right: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * width);
        for &p in parts {
            out.extend_from_slice(&self.node(p).value);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatRows { parts: parts.to_vec() },
            vec![rows, width],
            out,
            needs,
        ))
    }

    /// Horizontal stack of 2-D tensors with equal heights.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let s0 = self.shape(parts[0]).to_vec();
        if s0.len() != 2 {
            return Err(AutogradError::ShapeMismatch {
                op: "concat_cols",
                left: s0,
                right: vec![],
            });
        }
        let rows = s0[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(AutogradError::ShapeMismatch {
                    op: "concat_cols",
                    left: s0.clone(),
                    right: s.to_vec(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let v = &self.node(p).value;
                out.extend_from_slice(&v[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatCols { parts: parts.to_vec() },
            vec![rows, total],
            out,
            needs,
        ))
    }

    /// Inverted dropout with an explicit seeded generator: kept entries are
    /// scaled by `1/(1-p)`. `p == 0` is the identity (returns `x` itself).
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutogradError::ShapeMismatch {
                op: "dropout probability out of [0,1)",
                left: vec![],
                right: vec![],
            });
        }
        if p == 0.0 {
            return Ok(x);
        }
        let numel = self.node(x).value.len();
        let keep: Vec<bool> = (0..numel).map(|_| rng.gen::<f64>() >= p).collect();
        let scale = 1.0 / (1.0 - p);
        let v = &self.node(x).value;
        let out: Vec<f64> = v
            .iter()
            .zip(&keep)
            .map(|(&val, &k)| if k { val * scale } else { 0.0 })
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::Dropout { x, keep, scale }, shape, out, needs))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.node(x).value.iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Op::Sum { x }, vec![1], vec![total], needs))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Repeated calls on the same graph
    /// recompute from scratch and produce bit-identical gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let loss_node = self.node(loss);
        if loss_node.value.len() != 1 {
            return Err(AutogradError::NotScalar {
                op: "backward",
                shape: loss_node.shape.clone(),
            });
        }
        for node in &mut self.nodes {
            node.grad = if node.needs_grad {
                Some(vec![0.0; node.value.len()])
            } else {
                None
            };
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing trainable reaches the loss
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let gout = self.nodes[id].grad.clone().expect("needs_grad nodes have grads");
            let op = self.nodes[id].op.clone();
            self.propagate(NodeId(id), &op, &gout);
        }
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, delta: &[f64]) {
        if let Some(g) = self.nodes[id.0].grad.as_mut() {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
    }

    fn propagate(&mut self, out: NodeId, op: &Op, gout: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.shape(*a);
                    (s[0], s[1])
                };
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let vb = &self.node(*b).value;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout[i * n + j];
                            for p in 0..k {
                                da[i * k + p] += g * vb[p * n + j];
                            }
                        }
                    }
                    self.add_grad(*a, &da);
                }
                if self.needs(*b) {
                    let va = &self.node(*a).value;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = va[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += aip * gout[i * n + j];
                            }
                        }
                    }
                    self.add_grad(*b, &db);
                }
            }
            Op::Add { a, b } => {
                self.add_grad(*a, gout);
                self.add_grad(*b, gout);
            }
            Op::AddRow { x, bias } => {
                self.add_grad(*x, gout);
                if self.needs(*bias) {
                    let d = self.shape(*bias)[0];
                    let mut db = vec![0.0; d];
                    for (i, g) in gout.iter().enumerate() {
                        db[i % d] += g;
                    }
                    self.add_grad(*bias, &db);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let vb = self.node(*b).value.clone();
                    let da: Vec<f64> = gout.iter().zip(&vb).map(|(g, v)| g * v).collect();
                    self.add_grad(*a, &da);
                }
                if self.needs(*b) {
                    let va = self.node(*a).value.clone();
                    let db: Vec<f64> = gout.iter().zip(&va).map(|(g, v)| g * v).collect();
                    self.add_grad(*b, &db);
                }
            }
            Op::Scale { x, factor } => {
                let dx: Vec<f64> = gout.iter().map(|g| g * factor).collect();
                self.add_grad(*x, &dx);
            }
            Op::Tanh { x } => {
                let y = &self.node(out).value;
                let dx: Vec<f64> = gout.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.add_grad(*x, &dx);
            }
            Op::Gelu { x } => {
                let vx = self.node(*x).value.clone();
                let dx: Vec<f64> = gout.iter().zip(&vx).map(|(g, &v)| g * gelu_grad(v)).collect();
                self.add_grad(*x, &dx);
            }
            Op::Softmax { x } => {
                // Masked entries have y == 0, so the same formula covers
                // both the plain and the masked variant.
                let y = &self.node(out).value;
                let d = *self.shape(out).last().unwrap();
                let rows = y.len() / d;
                let mut dx = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gout[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::LayerNorm { x, gain, bias } => {
                let d = *self.shape(*x).last().unwrap();
                let vx = self.node(*x).value.clone();
                let vg = self.node(*gain).value.clone();
                let rows = vx.len() / d;
                let mut dx = vec![0.0; vx.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let row = &vx[r * d..(r + 1) * d];
                    let gr = &gout[r * d..(r + 1) * d];
                    let (mean, rstd) = row_stats(row);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * vg[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let inv_d = 1.0 / d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * vg[j];
                        dx[r * d + j] =
                            rstd * (dxh - inv_d * sum_dxhat - xhat[j] * inv_d * sum_dxhat_xhat);
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*gain, &dgain);
                self.add_grad(*bias, &dbias);
            }
            Op::Embedding { table, ids } => {
                if self.needs(*table) {
                    let d = self.shape(*table)[1];
                    let mut dt = vec![0.0; self.node(*table).value.len()];
                    for (i, &row) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[row * d + j] += gout[i * d + j];
                        }
                    }
                    self.add_grad(*table, &dt);
                }
            }
            Op::CrossEntropy { logits, targets, mask } => {
                let s = self.shape(*logits).to_vec();
                let (t, classes) = (s[0], s[1]);
                let v = self.node(*logits).value.clone();
                let active = mask.iter().filter(|&&m| m).count() as f64;
                let g = gout[0] / active;
                let mut dl = vec![0.0; v.len()];
                for i in 0..t {
                    if !mask[i] {
                        continue;
                    }
                    let row = &v[i * classes..(i + 1) * classes];
                    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|x| (x - maxv).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..classes {
                        let p = exps[j] / sum;
                        dl[i * classes + j] = g * (p - if j == targets[i] { 1.0 } else { 0.0 });
                    }
                }
                self.add_grad(*logits, &dl);
            }
            Op::Reshape { x } => {
                self.add_grad(*x, gout);
            }
            Op::Transpose { x } => {
                let s = self.shape(*x).to_vec();
                let (m, n) = (s[0], s[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = gout[j * m + i];
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::SliceCols { x, start, len } => {
                if self.needs(*x) {
                    let s = self.shape(*x).to_vec();
                    let (m, n) = (s[0], s[1]);
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..*len {
                            dx[i * n + start + j] = gout[i * len + j];
                        }
                    }
                    self.add_grad(*x, &dx);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.node(p).value.len();
                    if self.needs(p) {
                        let dp = gout[offset..offset + n].to_vec();
                        self.add_grad(p, &dp);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = self.shape(out)[0];
                let total = self.shape(out)[1];
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.needs(p) {
                        let mut dp = vec![0.0; rows * w];
                        for i in 0..rows {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&gout[i * total + col..i * total + col + w]);
                        }
                        self.add_grad(p, &dp);
                    }
                    col += w;
                }
            }
            Op::Dropout { x, keep, scale } => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(keep)
                    .map(|(g, &k)| if k { g * scale } else { 0.0 })
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Sum { x } => {
                let g = gout[0];
                let n = self.node(*x).value.len();
                self.add_grad(*x, &vec![g; n]);
            }
        }
    }

    /// Moves this graph's gradient for `t` (located via `t.node_id`) into
    /// the tensor's own grad buffer. No-op for frozen tensors.
    pub fn accumulate_grad_into(&self, t: &mut Tensor) -> Result<()> {
        if !t.requires_grad() {
            return Ok(());
        }
        let Some(id) = t.node_id() else {
            return Ok(());
        };
        if let Some(g) = self.grad(id) {
            let g = g.to_vec();
            t.accumulate_grad(&g)?;
        }
        Ok(())
    }
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|x| (x - maxv).exp()).sum();
    (row[index] - maxv) - sum.ln()
}

// tanh-approximation GELU
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
