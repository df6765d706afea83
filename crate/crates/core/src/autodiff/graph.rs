//! Define-then-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is built once from named inputs and operation nodes, then
//! evaluated any number of times with different bindings. Nodes are appended
//! in topological order by construction (an operand must exist before its
//! consumer), so the node list itself is the evaluation schedule and its
//! reverse is the backward schedule.
//!
//! ```
//! use fastadv::autodiff::Graph;
//! use fastadv::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input("x");
//! let y = g.mul(x, x);
//! g.output("y", y);
//! let x0 = Tensor::scalar(3.0);
//! let out = g.forward([("x", &x0)]).unwrap();
//! assert_eq!(out["y"].data(), &[9.0]);
//! let grads = g.backward("y").unwrap();
//! assert_eq!(grads["x"].data(), &[6.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds. Reductions produce shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[m,k] × [k,n]`.
    MatMul(NodeId, NodeId),
    /// `[m,n] + [n]` broadcast over rows.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    /// Fused softmax cross-entropy against target rows, averaged over rows.
    SoftmaxCrossEntropy { logits: NodeId, targets: NodeId },
    /// `max_{j≠y} z_j − z_y`, averaged over rows; labels are class indices.
    MarginLoss { logits: NodeId, labels: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    /// Sum of squares of every element.
    SqNorm(NodeId),
    /// Sum of squares of each row: `[m,n] → [m]`.
    RowSqNorm(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::MarginLoss { .. } => "margin_loss",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SqNorm(_) => "sq_norm",
            Op::RowSqNorm(_) => "row_sq_norm",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddBias(a, b) => {
                vec![a, b]
            }
            Op::SoftmaxCrossEntropy { logits, targets } => vec![logits, targets],
            Op::MarginLoss { logits, labels } => vec![logits, labels],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SqNorm(a)
            | Op::RowSqNorm(a) => vec![a],
        }
    }
}

/// Values keyed by input or output name.
pub type TensorMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug)]
pub struct Graph<T: Real = f64> {
    nodes: Vec<Op>,
    inputs: Vec<(String, NodeId)>,
    outputs: Vec<(String, NodeId)>,
    values: Vec<Option<Tensor<T>>>,
    // Saved forward state: softmax probabilities (cross-entropy) or the
    // competing class index per row (margin).
    saved: Vec<Option<Vec<T>>>,
    evaluated: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            values: Vec::new(),
            saved: Vec::new(),
            evaluated: false,
        }
    }

    fn push(&mut self, op: Op) -> NodeId {
        for operand in op.operands() {
            assert!(
                operand.0 < self.nodes.len(),
                "operand {} does not precede its consumer",
                operand.0
            );
        }
        self.nodes.push(op);
        self.values.push(None);
        self.saved.push(None);
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a named free input. Declaring the same name twice returns the
    /// existing node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(id) = self.input_id(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.push((name.to_string(), id));
        id
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, targets })
    }

    pub fn margin_loss(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        self.push(Op::MarginLoss { logits, labels })
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SqNorm(a))
    }

    pub fn row_sq_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowSqNorm(a))
    }

    pub fn output(&mut self, name: &str, node: NodeId) {
        self.outputs.retain(|(n, _)| n != name);
        self.outputs.push((name.to_string(), node));
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|(n, _)| n.as_str())
    }

    /// Value computed for a node by the last forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(id.0).and_then(|v| v.as_ref())
    }

    pub fn output_value(&self, name: &str) -> Option<&Tensor<T>> {
        self.output_id(name).and_then(|id| self.value(id))
    }

    /// Evaluates every node and returns clones of the named outputs.
    pub fn forward<'a, I>(&mut self, bindings: I) -> Result<TensorMap<T>>
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    {
        self.evaluate(bindings)?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.values[id.0].clone().expect("evaluated")))
            .collect())
    }

    /// Evaluates every node, keeping the values inside the graph.
    pub fn evaluate<'a, I>(&mut self, bindings: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    {
        self.evaluated = false;
        for v in self.values.iter_mut() {
            *v = None;
        }
        for (name, tensor) in bindings {
            let id = self.input_id(name).ok_or_else(|| {
                Error::InvalidArgument(format!("no input named '{name}' in graph"))
            })?;
            let mut t = tensor.clone();
            t.clear_grad();
            self.values[id.0] = Some(t);
        }
        if let Some((name, id)) = self
            .inputs
            .iter()
            .find(|(_, id)| self.values[id.0].is_none())
        {
            return Err(Error::Node {
                node: id.0,
                message: format!("input '{name}' not bound"),
            });
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i], Op::Input(_)) {
                continue;
            }
            let (value, saved) = self.eval_node(i)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: self.nodes[i].name(),
                });
            }
            self.values[i] = Some(value);
            self.saved[i] = saved;
        }
        self.evaluated = true;
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.values[id.0].as_ref().expect("operand evaluated")
    }

    fn shape_err(&self, node: usize, message: String) -> Error {
        Error::Node {
            node,
            message: format!("{}: {message}", self.nodes[node].name()),
        }
    }

    fn eval_node(&self, i: usize) -> Result<(Tensor<T>, Option<Vec<T>>)> {
        let op = &self.nodes[i];
        let out = match *op {
            Op::Input(_) => unreachable!(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                if ta.shape() != tb.shape() {
                    return Err(self.shape_err(
                        i,
                        format!("operand shapes {:?} and {:?}", ta.shape(), tb.shape()),
                    ));
                }
                let f: fn(T, T) -> T = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                (ta.zip_map(tb, f)?, None)
            }
            Op::Scale(a, factor) => {
                let c = T::from_f64_lossy(factor);
                (self.val(a).map(|v| v * c), None)
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (sa, sb) = (ta.shape(), tb.shape());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(self.shape_err(i, format!("cannot multiply {sa:?} by {sb:?}")));
                }
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut c = vec![T::zero(); m * n];
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
                    &mut c,
                    n as isize,
                    1,
                );
                (Tensor::new(vec![m, n], c)?, None)
            }
            Op::AddBias(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let n = ta.cols();
                if ta.shape().len() != 2 || tb.len() != n {
                    return Err(self.shape_err(
                        i,
                        format!("bias {:?} for matrix {:?}", tb.shape(), ta.shape()),
                    ));
                }
                let mut out = ta.clone();
                for r in 0..out.rows() {
                    for (v, &bias) in out.row_mut(r).iter_mut().zip(tb.data()) {
                        *v = *v + bias;
                    }
                }
                (out, None)
            }
            Op::Relu(a) => (self.val(a).map(|v| if v > T::zero() { v } else { T::zero() }), None),
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (z, t) = (self.val(logits), self.val(targets));
                if z.shape().len() != 2 || z.shape() != t.shape() {
                    return Err(self.shape_err(
                        i,
                        format!("logits {:?} vs targets {:?}", z.shape(), t.shape()),
                    ));
                }
                let (rows, cols) = (z.rows(), z.cols());
                let mut probs = vec![T::zero(); rows * cols];
                let mut total = T::zero();
                for r in 0..rows {
                    let zr = z.row(r);
                    let max = zr.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let mut denom = T::zero();
                    for (p, &v) in probs[r * cols..(r + 1) * cols].iter_mut().zip(zr) {
                        *p = (v - max).exp();
                        denom = denom + *p;
                    }
                    let log_denom = denom.ln();
                    let mut row_loss = T::zero();
                    for (j, (&v, &tj)) in zr.iter().zip(t.row(r)).enumerate() {
                        probs[r * cols + j] = probs[r * cols + j] / denom;
                        if tj != T::zero() {
                            row_loss = row_loss - tj * (v - max - log_denom);
                        }
                    }
                    total = total + row_loss;
                }
                let n = T::from_usize(rows.max(1)).unwrap();
                (Tensor::scalar(total / n), Some(probs))
            }
            Op::MarginLoss { logits, labels } => {
                let (z, y) = (self.val(logits), self.val(labels));
                if z.shape().len() != 2 || y.len() != z.rows() || z.cols() < 2 {
                    return Err(self.shape_err(
                        i,
                        format!("logits {:?} vs labels {:?}", z.shape(), y.shape()),
                    ));
                }
                let mut rivals = Vec::with_capacity(z.rows());
                let mut total = T::zero();
                for r in 0..z.rows() {
                    let label = label_index(y.data()[r], z.cols())
                        .ok_or_else(|| self.shape_err(i, format!("bad label at row {r}")))?;
                    let zr = z.row(r);
                    let mut best: Option<usize> = None;
                    for j in 0..zr.len() {
                        if j != label && best.is_none_or(|b| zr[j] > zr[b]) {
                            best = Some(j);
                        }
                    }
                    let best = best.unwrap();
                    total = total + zr[best] - zr[label];
                    rivals.push(T::from_usize(best).unwrap());
                }
                let n = T::from_usize(z.rows().max(1)).unwrap();
                (Tensor::scalar(total / n), Some(rivals))
            }
            Op::Sum(a) => (Tensor::scalar(self.val(a).sum()), None),
            Op::Mean(a) => {
                let t = self.val(a);
                let n = T::from_usize(t.len().max(1)).unwrap();
                (Tensor::scalar(t.sum() / n), None)
            }
            Op::SqNorm(a) => {
                let s = self.val(a).data().iter().map(|&v| v * v).sum();
                (Tensor::scalar(s), None)
            }
            Op::RowSqNorm(a) => {
                let t = self.val(a);
                let rows = (0..t.rows())
                    .map(|r| t.row(r).iter().map(|&v| v * v).sum())
                    .collect();
                (Tensor::new(vec![t.rows()], rows)?, None)
            }
        };
        Ok(out)
    }

    /// Gradients of a scalar output with respect to every input.
    pub fn backward(&mut self, output: &str) -> Result<TensorMap<T>> {
        self.backward_seeded(Some(output), Vec::new(), None)
    }

    /// Gradients of a scalar output with respect to the named inputs only;
    /// branches that cannot reach those inputs are skipped.
    pub fn backward_wrt(&mut self, output: &str, wrt: &[&str]) -> Result<TensorMap<T>> {
        self.backward_seeded(Some(output), Vec::new(), Some(wrt))
    }

    /// General backward pass: the scalar `output` (if any) is seeded with 1
    /// and each `(node, tensor)` seed adds an externally computed upstream
    /// gradient at that node. Used to inject gradients of quantities that are
    /// not graph nodes (the nuclear-norm subgradient).
    pub fn backward_seeded(
        &mut self,
        output: Option<&str>,
        seeds: Vec<(NodeId, Tensor<T>)>,
        wrt: Option<&[&str]>,
    ) -> Result<TensorMap<T>> {
        if !self.evaluated {
            return Err(Error::Backward("forward has not been run on this graph".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        if let Some(name) = output {
            let id = self
                .output_id(name)
                .ok_or_else(|| Error::Backward(format!("no output named '{name}'")))?;
            let v = self.val(id);
            if v.len() != 1 {
                return Err(Error::Backward(format!(
                    "output '{name}' is not scalar (shape {:?})",
                    v.shape()
                )));
            }
            grads[id.0] = Some(vec![T::one()]);
        }
        for (id, seed) in seeds {
            let v = self.val(id);
            if v.shape() != seed.shape() {
                return Err(Error::Backward(format!(
                    "seed shape {:?} for node {} of shape {:?}",
                    seed.shape(),
                    id.0,
                    v.shape()
                )));
            }
            accumulate(&mut grads[id.0], seed.data());
        }

        let targets: Vec<NodeId> = match wrt {
            None => self.inputs.iter().map(|&(_, id)| id).collect(),
            Some(names) => names
                .iter()
                .map(|name| {
                    self.input_id(name).ok_or_else(|| {
                        Error::Backward(format!("no input named '{name}'"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let mut needs = vec![false; n];
        for id in &targets {
            needs[id.0] = true;
        }
        for i in 0..n {
            if !needs[i] {
                needs[i] = self.nodes[i].operands().iter().any(|o| needs[o.0]);
            }
        }

        for i in (0..n).rev() {
            if matches!(self.nodes[i], Op::Input(_)) || !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &needs, &mut grads)?;
        }

        let mut out = TensorMap::new();
        for id in targets {
            let name = match &self.nodes[id.0] {
                Op::Input(name) => name.clone(),
                _ => unreachable!(),
            };
            let value = self.values[id.0].as_mut().expect("bound input");
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); value.len()]);
            value.set_grad(g.clone())?;
            out.insert(name, Tensor::new(value.shape().to_vec(), g)?);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[T],
        needs: &[bool],
        grads: &mut [Option<Vec<T>>],
    ) -> Result<()> {
        match self.nodes[i] {
            Op::Input(_) => {}
            Op::Add(a, b) => {
                if needs[a.0] {
                    accumulate(&mut grads[a.0], g);
                }
                if needs[b.0] {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs[a.0] {
                    accumulate(&mut grads[a.0], g);
                }
                if needs[b.0] {
                    let slot = slot(&mut grads[b.0], g.len());
                    for (s, &v) in slot.iter_mut().zip(g) {
                        *s = *s - v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                if needs[a.0] {
                    let slot = slot(&mut grads[a.0], g.len());
                    for ((s, &v), &other) in slot.iter_mut().zip(g).zip(tb.data()) {
                        *s = *s + v * other;
                    }
                }
                if needs[b.0] {
                    let slot = slot(&mut grads[b.0], g.len());
                    for ((s, &v), &other) in slot.iter_mut().zip(g).zip(ta.data()) {
                        *s = *s + v * other;
                    }
                }
            }
            Op::Scale(a, factor) => {
                let c = T::from_f64_lossy(factor);
                let slot = slot(&mut grads[a.0], g.len());
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s = *s + v * c;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs[a.0] {
                    // dA = dC · Bᵀ
                    let da = slot(&mut grads[a.0], m * k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        tb.data(),
                        1,
                        n as isize,
                        T::one(),
                        da,
                        k as isize,
                        1,
                    );
                }
                if needs[b.0] {
                    // dB = Aᵀ · dC
                    let db = slot(&mut grads[b.0], k * n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        ta.data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::one(),
                        db,
                        n as isize,
                        1,
                    );
                }
            }
            Op::AddBias(a, b) => {
                if needs[a.0] {
                    accumulate(&mut grads[a.0], g);
                }
                if needs[b.0] {
                    let cols = self.val(b).len();
                    let slot = slot(&mut grads[b.0], cols);
                    for row in g.chunks(cols) {
                        for (s, &v) in slot.iter_mut().zip(row) {
                            *s = *s + v;
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.val(a).data();
                let slot = slot(&mut grads[a.0], g.len());
                for ((s, &v), &xv) in slot.iter_mut().zip(g).zip(x) {
                    if xv > T::zero() {
                        *s = *s + v;
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let probs = self.saved[i].as_ref().expect("saved probabilities");
                let t = self.val(targets);
                let (rows, cols) = (t.rows(), t.cols());
                let scale = g[0] / T::from_usize(rows.max(1)).unwrap();
                if needs[logits.0] {
                    let slot = slot(&mut grads[logits.0], rows * cols);
                    for r in 0..rows {
                        let tr = t.row(r);
                        let mass: T = tr.iter().copied().sum();
                        for j in 0..cols {
                            let d = probs[r * cols + j] * mass - tr[j];
                            slot[r * cols + j] = slot[r * cols + j] + scale * d;
                        }
                    }
                }
                if needs[targets.0] {
                    // ∂/∂t_j of −Σ t log p = −log p_j
                    let slot = slot(&mut grads[targets.0], rows * cols);
                    for (s, &p) in slot.iter_mut().zip(probs) {
                        *s = *s - scale * p.ln();
                    }
                }
            }
            Op::MarginLoss { logits, labels } => {
                let rivals = self.saved[i].as_ref().expect("saved rivals");
                let y = self.val(labels);
                let cols = self.val(logits).cols();
                let rows = y.len();
                let scale = g[0] / T::from_usize(rows.max(1)).unwrap();
                if needs[logits.0] {
                    let slot = slot(&mut grads[logits.0], rows * cols);
                    for r in 0..rows {
                        let label = label_index(y.data()[r], cols).expect("validated label");
                        let rival = rivals[r].to_usize().unwrap();
                        slot[r * cols + rival] = slot[r * cols + rival] + scale;
                        slot[r * cols + label] = slot[r * cols + label] - scale;
                    }
                }
                // labels are indices; no gradient flows into them.
            }
            Op::Sum(a) => {
                let len = self.val(a).len();
                let slot = slot(&mut grads[a.0], len);
                for s in slot.iter_mut() {
                    *s = *s + g[0];
                }
            }
            Op::Mean(a) => {
                let len = self.val(a).len();
                let v = g[0] / T::from_usize(len.max(1)).unwrap();
                let slot = slot(&mut grads[a.0], len);
                for s in slot.iter_mut() {
                    *s = *s + v;
                }
            }
            Op::SqNorm(a) => {
                let x = self.val(a).data();
                let two = T::from_f64_lossy(2.0);
                let slot = slot(&mut grads[a.0], x.len());
                for (s, &xv) in slot.iter_mut().zip(x) {
                    *s = *s + two * xv * g[0];
                }
            }
            Op::RowSqNorm(a) => {
                let t = self.val(a);
                let cols = t.cols();
                let two = T::from_f64_lossy(2.0);
                let slot = slot(&mut grads[a.0], t.len());
                for (r, &gr) in g.iter().enumerate() {
                    for j in 0..cols {
                        let idx = r * cols + j;
                        slot[idx] = slot[idx] + two * t.data()[idx] * gr;
                    }
                }
            }
        }
        Ok(())
    }
}

fn label_index<T: Real>(v: T, classes: usize) -> Option<usize> {
    let idx = v.to_usize()?;
    (idx < classes && T::from_usize(idx)? == v).then_some(idx)
}

fn slot<T: Real>(g: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    g.get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Real>(g: &mut Option<Vec<T>>, upstream: &[T]) {
    match g {
        Some(existing) => {
            for (e, &u) in existing.iter_mut().zip(upstream) {
                *e = *e + u;
            }
        }
        None => *g = Some(upstream.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::one_hot;

    #[test]
    fn square_value_and_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x");
        let y = g.mul(x, x);
        g.output("y", y);
        let x0 = Tensor::scalar(3.0);
        let out = g.forward([("x", &x0)]).unwrap();
        assert_eq!(out["y"].data(), &[9.0]);
        let grads = g.backward("y").unwrap();
        assert_eq!(grads["x"].data(), &[6.0]);
        assert_eq!(g.value(x).unwrap().grad(), Some(&[6.0][..]));
    }

    #[test]
    fn uniform_softmax_ce_is_ln2() {
        let mut g = Graph::<f64>::new();
        let z = g.input("z");
        let t = g.input("t");
        let l = g.softmax_cross_entropy(z, t);
        g.output("loss", l);
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let target = one_hot::<f64>(&[0], 2);
        let out = g.forward([("z", &logits), ("t", &target)]).unwrap();
        assert!((out["loss"].data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::<f64>::new();
        let z = g.input("z");
        let t = g.input("t");
        let l = g.softmax_cross_entropy(z, t);
        g.output("loss", l);
        let logits = Tensor::matrix(1, 3, vec![1.0, 2.0, 0.5]).unwrap();
        let target = one_hot::<f64>(&[2], 3);
        g.forward([("z", &logits), ("t", &target)]).unwrap();
        let grads = g.backward_wrt("loss", &["z"]).unwrap();
        let e: Vec<f64> = logits.data().iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let expected = [e[0] / s, e[1] / s, e[2] / s - 1.0];
        for (a, b) in grads["z"].data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_matches_hand_multiplication() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        g.output("c", c);
        let ta = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tb = Tensor::matrix(3, 2, vec![1.0, -1.0, 0.0, 2.0, 3.0, 0.5]).unwrap();
        let out = g.forward([("a", &ta), ("b", &tb)]).unwrap();
        // row 0: (1+0+9, -1+4+1.5); row 1: (4+0+18, -4+10+3)
        assert_eq!(out["c"].data(), &[10.0, 4.5, 22.0, 9.0]);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        g.output("c", c);
        let ta = Tensor::<f64>::zeros(vec![2, 3]);
        let tb = Tensor::<f64>::zeros(vec![2, 2]);
        match g.forward([("a", &ta), ("b", &tb)]) {
            Err(Error::Node { node, .. }) => assert_eq!(node, c.index()),
            other => panic!("expected node error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_intermediate_aborts() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let b = g.mul(a, a);
        g.output("b", b);
        let ta = Tensor::scalar(1e200);
        assert!(matches!(
            g.forward([("a", &ta)]),
            Err(Error::NonFinite { node: 1, .. })
        ));
    }

    #[test]
    fn backward_requires_forward_and_scalar_output() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let b = g.relu(a);
        g.output("b", b);
        assert!(matches!(g.backward("b"), Err(Error::Backward(_))));
        let ta = Tensor::<f64>::zeros(vec![2]);
        g.forward([("a", &ta)]).unwrap();
        assert!(matches!(g.backward("b"), Err(Error::Backward(_))));
    }

    #[test]
    fn unbound_input_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let _b = g.input("b");
        let s = g.sum(a);
        g.output("s", s);
        let ta = Tensor::<f64>::zeros(vec![2]);
        assert!(g.forward([("a", &ta)]).is_err());
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let r = g.relu(a);
        let s = g.sum(r);
        g.output("s", s);
        let ta = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        g.forward([("a", &ta)]).unwrap();
        let grads = g.backward("s").unwrap();
        assert_eq!(grads["a"].data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn margin_loss_value_and_gradient() {
        let mut g = Graph::<f64>::new();
        let z = g.input("z");
        let y = g.input("y");
        let m = g.margin_loss(z, y);
        g.output("m", m);
        let logits = Tensor::matrix(1, 2, vec![2.0, 5.0]).unwrap();
        let labels = Tensor::new(vec![1], vec![0.0]).unwrap();
        let out = g.forward([("z", &logits), ("y", &labels)]).unwrap();
        assert_eq!(out["m"].data(), &[3.0]);
        let grads = g.backward_wrt("m", &["z"]).unwrap();
        assert_eq!(grads["z"].data(), &[-1.0, 1.0]);
    }

    #[test]
    fn external_seed_accumulates() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let d = g.scale(a, 3.0);
        let s = g.sum(d);
        g.output("s", s);
        let ta = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        g.forward([("a", &ta)]).unwrap();
        let seed = Tensor::new(vec![2], vec![10.0, -10.0]).unwrap();
        let grads = g.backward_seeded(Some("s"), vec![(d, seed)], None).unwrap();
        assert_eq!(grads["a"].data(), &[33.0, -27.0]);
    }
}
