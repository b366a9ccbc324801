use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};

/// Named tensors fed to graph inputs.
pub type Bindings = BTreeMap<String, Tensor>;

/// Gradients keyed by input name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Constant(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `scale * x + shift`
    ScaleShift {
        x: NodeId,
        scale: f64,
        shift: f64,
    },
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    MatMul(NodeId, NodeId),
    /// `[n, in] x [in, out] + [out]`
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// valid 1-D convolution: `[n, cin, len]`, `[f, cin, k]`, `[f]`
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
    },
    MeanPool(NodeId),
    /// `[b, c, t] -> [b * count, c, t / count]`, trailing steps dropped
    Segment {
        x: NodeId,
        count: usize,
    },
    ReshapeTail {
        x: NodeId,
        tail: Vec<usize>,
    },
    Select {
        x: NodeId,
        axis: usize,
        index: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    },
    Stack(Vec<NodeId>),
    /// `[b, l, d] x [b, d] -> [b, l]`
    BatchMatVec {
        m: NodeId,
        v: NodeId,
    },
    Softmax {
        x: NodeId,
        temperature: f64,
    },
    LogSoftmax {
        x: NodeId,
        temperature: f64,
    },
    L2Normalize(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScaleShift { .. } => "scale_shift",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::Conv1d { .. } => "conv1d",
            Op::MeanPool(_) => "mean_pool",
            Op::Segment { .. } => "segment",
            Op::ReshapeTail { .. } => "reshape",
            Op::Select { .. } => "select",
            Op::Slice { .. } => "slice",
            Op::Stack(_) => "stack",
            Op::BatchMatVec { .. } => "batch_matvec",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::L2Normalize(_) => "l2_normalize",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::ScaleShift { x, .. }
            | Op::Segment { x, .. }
            | Op::ReshapeTail { x, .. }
            | Op::Select { x, .. }
            | Op::Slice { x, .. }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. } => vec![*x],
            Op::Tanh(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumLast(x)
            | Op::MeanPool(x)
            | Op::L2Normalize(x) => vec![*x],
            Op::Affine { x, w, b } | Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Stack(xs) => xs.clone(),
            Op::BatchMatVec { m, v } => vec![*m, *v],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    label: Option<String>,
}

/// Directed acyclic expression graph. Nodes may only reference earlier
/// nodes, so insertion order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

/// Values of every evaluated node of one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    values: Vec<Option<Tensor>>,
}

impl Evaluation {
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node.0).and_then(|v| v.as_ref())
    }
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        for i in op.inputs() {
            assert!(i.0 < id.0, "graph node references a later node");
        }
        self.nodes.push(Node { op, label: None });
        id
    }

    /// Named free input; repeated calls with one name return the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant(t))
    }

    pub fn label(&mut self, node: NodeId, label: &str) -> NodeId {
        self.nodes[node.0].label = Some(label.to_string());
        node
    }

    pub fn set_output(&mut self, name: &str, node: NodeId) {
        self.outputs.insert(name.to_string(), node);
    }

    pub fn output(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(|s| s.as_str())
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
    pub fn scale_shift(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        self.push(Op::ScaleShift { x, scale, shift })
    }
    pub fn scale(&mut self, x: NodeId, scale: f64) -> NodeId {
        self.scale_shift(x, scale, 0.0)
    }
    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh(x))
    }
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }
    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }
    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Log(x))
    }
    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp(x))
    }
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }
    pub fn sum_last(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumLast(x))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine { x, w, b })
    }
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> NodeId {
        self.push(Op::Conv1d { x, w, b, stride })
    }
    pub fn mean_pool(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanPool(x))
    }
    pub fn segment(&mut self, x: NodeId, count: usize) -> NodeId {
        self.push(Op::Segment { x, count })
    }
    /// Keeps the total size; the leading dimension absorbs the remainder.
    pub fn reshape_tail(&mut self, x: NodeId, tail: &[usize]) -> NodeId {
        self.push(Op::ReshapeTail { x, tail: tail.to_vec() })
    }
    pub fn select(&mut self, x: NodeId, axis: usize, index: usize) -> NodeId {
        self.push(Op::Select { x, axis, index })
    }
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice { x, axis, start, end })
    }
    pub fn stack(&mut self, xs: &[NodeId]) -> NodeId {
        self.push(Op::Stack(xs.to_vec()))
    }
    pub fn batch_matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        self.push(Op::BatchMatVec { m, v })
    }
    pub fn softmax(&mut self, x: NodeId, temperature: f64) -> NodeId {
        self.push(Op::Softmax { x, temperature })
    }
    pub fn log_softmax(&mut self, x: NodeId, temperature: f64) -> NodeId {
        self.push(Op::LogSoftmax { x, temperature })
    }
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        self.push(Op::L2Normalize(x))
    }

    /// One LSTM cell step (gate order i, f, g, o). `state` is `(h, c)`;
    /// `None` means the zero initial state. Returns the new `(h, c)`.
    pub fn lstm_step(
        &mut self,
        x: NodeId,
        state: Option<(NodeId, NodeId)>,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
        hidden: usize,
    ) -> (NodeId, NodeId) {
        let mut gates = self.affine(x, wx, b);
        if let Some((h, _)) = state {
            let rec = self.matmul(h, wh);
            gates = self.add(gates, rec);
        }
        let gi = self.slice(gates, 1, 0, hidden);
        let gf = self.slice(gates, 1, hidden, 2 * hidden);
        let gg = self.slice(gates, 1, 2 * hidden, 3 * hidden);
        let go = self.slice(gates, 1, 3 * hidden, 4 * hidden);
        let i = self.sigmoid(gi);
        let g = self.tanh(gg);
        let o = self.sigmoid(go);
        let ig = self.mul(i, g);
        let c = match state {
            Some((_, c_prev)) => {
                let f = self.sigmoid(gf);
                let fc = self.mul(f, c_prev);
                self.add(fc, ig)
            }
            None => ig,
        };
        let tc = self.tanh(c);
        let h = self.mul(o, tc);
        (h, c)
    }

    fn describe(&self, id: NodeId) -> String {
        let node = &self.nodes[id.0];
        match &node.label {
            Some(l) => format!("#{} {} ({})", id.0, node.op.name(), l),
            None => match &node.op {
                Op::Input(name) => format!("#{} input `{}`", id.0, name),
                op => format!("#{} {}", id.0, op.name()),
            },
        }
    }

    fn shape_err(&self, id: NodeId, detail: String) -> Error {
        Error::ShapeMismatch {
            node: self.describe(id),
            detail,
        }
    }

    fn needed(&self, targets: &[NodeId]) -> Vec<bool> {
        let mut need = vec![false; self.nodes.len()];
        for t in targets {
            need[t.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if need[i] {
                for j in self.nodes[i].op.inputs() {
                    need[j.0] = true;
                }
            }
        }
        need
    }

    /// Evaluates every node the `targets` depend on.
    pub fn forward(&self, bindings: &Bindings, targets: &[NodeId]) -> Result<Evaluation> {
        let need = self.needed(targets);
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if !need[i] {
                continue;
            }
            let id = NodeId(i);
            let v = self.eval_node(id, &values, bindings)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(self.describe(id)));
            }
            values[i] = Some(v);
        }
        Ok(Evaluation { values })
    }

    /// Evaluates all named outputs.
    pub fn eval(&self, bindings: &Bindings) -> Result<BTreeMap<String, Tensor>> {
        let targets: Vec<NodeId> = self.outputs.values().copied().collect();
        let ev = self.forward(bindings, &targets)?;
        Ok(self
            .outputs
            .iter()
            .map(|(k, id)| (k.clone(), ev.values[id.0].clone().unwrap()))
            .collect())
    }

    /// Gradient of the scalar `output` with respect to every bound input.
    pub fn backward(&self, bindings: &Bindings, output: NodeId) -> Result<Gradients> {
        let ev = self.forward(bindings, &[output])?;
        self.backward_from(&ev, bindings, output)
    }

    /// Backward pass reusing a completed forward evaluation.
    pub fn backward_from(&self, ev: &Evaluation, bindings: &Bindings, output: NodeId) -> Result<Gradients> {
        self.backward_selected(ev, bindings, output, |_| true)
    }

    /// Like [`backward_from`](Self::backward_from) but only for the bound
    /// inputs accepted by `wrt`; other subgraphs are not differentiated.
    pub fn backward_selected(
        &self,
        ev: &Evaluation,
        bindings: &Bindings,
        output: NodeId,
        wrt: impl Fn(&str) -> bool,
    ) -> Result<Gradients> {
        let out = ev.values[output.0]
            .as_ref()
            .ok_or_else(|| Error::UnboundInput(format!("output {} not evaluated", output.0)))?;
        if out.len() != 1 {
            return Err(Error::NonScalarOutput {
                node: self.describe(output),
                shape: format!("{:?}", out.shape()),
            });
        }
        let mut live = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            live[i] = match &node.op {
                Op::Input(name) => bindings.contains_key(name) && wrt(name),
                op => op.inputs().iter().any(|j| live[j.0]),
            };
        }
        let mut grads = GradBuf {
            slots: vec![None; self.nodes.len()],
            live,
        };
        grads.slots[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            self.vjp(i, &g, ev, &mut grads);
            grads.slots[i] = Some(g);
        }
        let mut grads = grads.slots;
        let mut result = Gradients::new();
        for (name, t) in bindings.iter().filter(|(n, _)| wrt(n)) {
            let g = match self.inputs.get(name) {
                Some(id) => match grads[id.0].take() {
                    Some(g) => Tensor::from_parts(t.shape().to_vec(), g),
                    None => Tensor::zeros(t.shape()),
                },
                None => Tensor::zeros(t.shape()),
            };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            result.insert(name.clone(), g);
        }
        Ok(result)
    }

    fn eval_node(&self, id: NodeId, vals: &[Option<Tensor>], bindings: &Bindings) -> Result<Tensor> {
        let v = |n: &NodeId| vals[n.0].as_ref().expect("topological order");
        let op = &self.nodes[id.0].op;
        Ok(match op {
            Op::Input(name) => bindings
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnboundInput(name.clone()))?,
            Op::Constant(t) => t.clone(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.shape() != b.shape() {
                    return Err(self.shape_err(id, format!("operands {:?} and {:?} differ", a.shape(), b.shape())));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let out = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::from_parts(a.shape().to_vec(), out)
            }
            Op::ScaleShift { x, scale, shift } => map(v(x), |e| scale * e + shift),
            Op::Tanh(x) => map(v(x), libm::tanh),
            Op::Relu(x) => map(v(x), |e| e.max(0.0)),
            Op::Sigmoid(x) => map(v(x), sigmoid),
            Op::Log(x) => map(v(x), libm::log),
            Op::Exp(x) => map(v(x), libm::exp),
            Op::Sum(x) => Tensor::scalar(v(x).values().iter().sum()),
            Op::Mean(x) => {
                let x = v(x);
                Tensor::scalar(x.values().iter().sum::<f64>() / x.len() as f64)
            }
            Op::SumLast(x) => {
                let x = v(x);
                let (_, last) = split_last(x.shape());
                let out = x.values().chunks(last).map(|c| c.iter().sum()).collect();
                Tensor::from_parts(outer_shape(x.shape()), out)
            }
            Op::MeanPool(x) => {
                let x = v(x);
                if x.shape().len() < 2 {
                    return Err(self.shape_err(id, format!("needs rank >= 2, got {:?}", x.shape())));
                }
                let (_, last) = split_last(x.shape());
                let out = x
                    .values()
                    .chunks(last)
                    .map(|c| c.iter().sum::<f64>() / last as f64)
                    .collect();
                Tensor::from_parts(outer_shape(x.shape()), out)
            }
            Op::MatMul(a, b) => {
                let (a, b) = (v(a), v(b));
                let (m, k, n) = match (a.shape(), b.shape()) {
                    (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
                    (sa, sb) => return Err(self.shape_err(id, format!("cannot multiply {sa:?} by {sb:?}"))),
                };
                let mut out = vec![0.0; m * n];
                gemm(a.values(), b.values(), &mut out, m, k, n);
                Tensor::from_parts(vec![m, n], out)
            }
            Op::Affine { x, w, b } => {
                let (x, w, b) = (v(x), v(w), v(b));
                let (n, din, dout) = match (x.shape(), w.shape(), b.shape()) {
                    (&[n, din], &[din2, dout], &[db]) if din == din2 && db == dout => (n, din, dout),
                    (sx, sw, sb) => {
                        return Err(self.shape_err(id, format!("affine of {sx:?} with weight {sw:?} and bias {sb:?}")))
                    }
                };
                let mut out = Vec::with_capacity(n * dout);
                for _ in 0..n {
                    out.extend_from_slice(b.values());
                }
                gemm(x.values(), w.values(), &mut out, n, din, dout);
                Tensor::from_parts(vec![n, dout], out)
            }
            Op::Conv1d { x, w, b, stride } => {
                let (x, w, b) = (v(x), v(w), v(b));
                let dims = conv_dims(x.shape(), w.shape(), b.shape(), *stride).map_err(|d| self.shape_err(id, d))?;
                Tensor::from_parts(
                    vec![dims.n, dims.f, dims.lout],
                    conv_forward(x.values(), w.values(), b.values(), &dims),
                )
            }
            Op::Segment { x, count } => {
                let x = v(x);
                let (b, c, t) = match x.shape() {
                    &[b, c, t] => (b, c, t),
                    s => return Err(self.shape_err(id, format!("segment needs [b, c, t], got {s:?}"))),
                };
                if *count == 0 || t < *count {
                    return Err(self.shape_err(id, format!("cannot split {t} steps into {count} segments")));
                }
                let d = t / count;
                let mut out = Vec::with_capacity(b * c * d * count);
                for bi in 0..b {
                    for m in 0..*count {
                        for ch in 0..c {
                            let base = (bi * c + ch) * t + m * d;
                            out.extend_from_slice(&x.values()[base..base + d]);
                        }
                    }
                }
                Tensor::from_parts(vec![b * count, c, d], out)
            }
            Op::ReshapeTail { x, tail } => {
                let x = v(x);
                let inner: usize = tail.iter().product();
                if inner == 0 || x.len() % inner != 0 {
                    return Err(self.shape_err(id, format!("cannot reshape {:?} to [_, {tail:?}]", x.shape())));
                }
                let mut shape = vec![x.len() / inner];
                shape.extend_from_slice(tail);
                Tensor::from_parts(shape, x.values().to_vec())
            }
            Op::Select { x, axis, index } => {
                let x = v(x);
                if *axis >= x.shape().len() || *index >= x.shape()[*axis] || x.shape().len() < 2 {
                    return Err(self.shape_err(id, format!("select {index} on axis {axis} of {:?}", x.shape())));
                }
                let (outer, n, inner) = axis_split(x.shape(), *axis);
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    let base = (o * n + index) * inner;
                    out.extend_from_slice(&x.values()[base..base + inner]);
                }
                let mut shape = x.shape().to_vec();
                shape.remove(*axis);
                Tensor::from_parts(shape, out)
            }
            Op::Slice { x, axis, start, end } => {
                let x = v(x);
                if *axis >= x.shape().len() || start >= end || *end > x.shape()[*axis] {
                    return Err(self.shape_err(id, format!("slice {start}..{end} on axis {axis} of {:?}", x.shape())));
                }
                let (outer, n, inner) = axis_split(x.shape(), *axis);
                let mut out = Vec::with_capacity(outer * (end - start) * inner);
                for o in 0..outer {
                    out.extend_from_slice(&x.values()[(o * n + start) * inner..(o * n + end) * inner]);
                }
                let mut shape = x.shape().to_vec();
                shape[*axis] = end - start;
                Tensor::from_parts(shape, out)
            }
            Op::Stack(xs) => {
                if xs.is_empty() {
                    return Err(self.shape_err(id, "stack of zero tensors".into()));
                }
                let first = v(&xs[0]).shape().to_vec();
                for x in xs {
                    if v(x).shape() != first.as_slice() {
                        return Err(self.shape_err(id, format!("stack operands {:?} vs {:?}", first, v(x).shape())));
                    }
                }
                let b = first[0];
                let inner: usize = first[1..].iter().product();
                let mut out = Vec::with_capacity(b * xs.len() * inner);
                for bi in 0..b {
                    for x in xs {
                        out.extend_from_slice(&v(x).values()[bi * inner..(bi + 1) * inner]);
                    }
                }
                let mut shape = vec![b, xs.len()];
                shape.extend_from_slice(&first[1..]);
                Tensor::from_parts(shape, out)
            }
            Op::BatchMatVec { m, v: vv } => {
                let (m, vv) = (v(m), v(vv));
                let (b, l, d) = match (m.shape(), vv.shape()) {
                    (&[b, l, d], &[b2, d2]) if b == b2 && d == d2 => (b, l, d),
                    (sm, sv) => return Err(self.shape_err(id, format!("batch matvec {sm:?} x {sv:?}"))),
                };
                let mut out = vec![0.0; b * l];
                for bi in 0..b {
                    let vrow = &vv.values()[bi * d..(bi + 1) * d];
                    for li in 0..l {
                        let row = &m.values()[(bi * l + li) * d..(bi * l + li + 1) * d];
                        out[bi * l + li] = dot(row, vrow);
                    }
                }
                Tensor::from_parts(vec![b, l], out)
            }
            Op::Softmax { x, temperature } | Op::LogSoftmax { x, temperature } => {
                if !(*temperature > 0.0) {
                    return Err(self.shape_err(id, format!("temperature {temperature} must be positive")));
                }
                let x = v(x);
                let (_, last) = split_last(x.shape());
                let log = matches!(op, Op::LogSoftmax { .. });
                let mut out = Vec::with_capacity(x.len());
                for row in x.values().chunks(last) {
                    if log {
                        log_softmax_row(row, *temperature, &mut out);
                    } else {
                        softmax_row(row, *temperature, &mut out);
                    }
                }
                Tensor::from_parts(x.shape().to_vec(), out)
            }
            Op::L2Normalize(x) => {
                let x = v(x);
                let (_, last) = split_last(x.shape());
                let mut out = Vec::with_capacity(x.len());
                for (r, row) in x.values().chunks(last).enumerate() {
                    let norm = libm::sqrt(dot(row, row));
                    if norm == 0.0 {
                        return Err(Error::ZeroNorm {
                            node: self.describe(id),
                            row: r,
                        });
                    }
                    out.extend(row.iter().map(|e| e / norm));
                }
                Tensor::from_parts(x.shape().to_vec(), out)
            }
        })
    }

    fn vjp(&self, idx: usize, g: &[f64], ev: &Evaluation, grads: &mut GradBuf) {
        let op = &self.nodes[idx].op;
        let val = |n: &NodeId| ev.values[n.0].as_ref().expect("evaluated");
        let out = ev.values[idx].as_ref().expect("evaluated").values();
        match op {
            Op::Input(_) | Op::Constant(_) => {}
            Op::Add(a, b) => {
                grads.acc(*a, val(a).len(), |d| add_into(d, g));
                grads.acc(*b, val(b).len(), |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                grads.acc(*a, val(a).len(), |d| add_into(d, g));
                grads.acc(*b, val(b).len(), |d| {
                    for (d, g) in d.iter_mut().zip(g) {
                        *d -= g;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).values(), val(b).values());
                grads.acc(*a, av.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                grads.acc(*b, bv.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::ScaleShift { x, scale, .. } => {
                grads.acc(*x, g.len(), |d| {
                    for (d, g) in d.iter_mut().zip(g) {
                        *d += scale * g;
                    }
                });
            }
            Op::Tanh(x) | Op::Relu(x) | Op::Sigmoid(x) | Op::Exp(x) | Op::Log(x) => {
                let xv = val(x).values();
                grads.acc(*x, xv.len(), |d| {
                    for i in 0..d.len() {
                        let local = match op {
                            Op::Tanh(_) => 1.0 - out[i] * out[i],
                            Op::Relu(_) => (xv[i] > 0.0) as u8 as f64,
                            Op::Sigmoid(_) => out[i] * (1.0 - out[i]),
                            Op::Exp(_) => out[i],
                            _ => 1.0 / xv[i],
                        };
                        d[i] += g[i] * local;
                    }
                });
            }
            Op::Sum(x) => {
                let n = val(x).len();
                grads.acc(*x, n, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(x) => {
                let n = val(x).len();
                let s = g[0] / n as f64;
                grads.acc(*x, n, |d| d.iter_mut().for_each(|d| *d += s));
            }
            Op::SumLast(x) | Op::MeanPool(x) => {
                let xs = val(x);
                let (_, last) = split_last(xs.shape());
                let scale = if matches!(op, Op::MeanPool(_)) {
                    1.0 / last as f64
                } else {
                    1.0
                };
                grads.acc(*x, xs.len(), |d| {
                    for (r, chunk) in d.chunks_mut(last).enumerate() {
                        chunk.iter_mut().for_each(|e| *e += g[r] * scale);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                grads.acc(*a, m * k, |d| gemm_nt(g, bv.values(), d, m, n, k));
                grads.acc(*b, k * n, |d| gemm_tn(av.values(), g, d, m, k, n));
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(x), val(w));
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[1];
                grads.acc(*x, n * din, |d| gemm_nt(g, wv.values(), d, n, dout, din));
                grads.acc(*w, din * dout, |d| gemm_tn(xv.values(), g, d, n, din, dout));
                grads.acc(*b, dout, |d| {
                    for row in g.chunks(dout) {
                        add_into(d, row);
                    }
                });
            }
            Op::Conv1d { x, w, b, stride } => {
                let (xv, wv, bv) = (val(x), val(w), val(b));
                let dims = conv_dims(xv.shape(), wv.shape(), bv.shape(), *stride).expect("checked in forward");
                grads.acc(*x, xv.len(), |d| conv_grad_input(g, wv.values(), d, &dims));
                grads.acc(*w, wv.len(), |d| conv_grad_weight(g, xv.values(), d, &dims));
                grads.acc(*b, bv.len(), |d| {
                    for (i, row) in g.chunks(dims.lout).enumerate() {
                        d[i % dims.f] += row.iter().sum::<f64>();
                    }
                });
            }
            Op::Segment { x, count } => {
                let xs = val(x);
                let (b, c, t) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let dlen = t / count;
                grads.acc(*x, xs.len(), |dx| {
                    let mut k = 0;
                    for bi in 0..b {
                        for m in 0..*count {
                            for ch in 0..c {
                                let base = (bi * c + ch) * t + m * dlen;
                                add_into(&mut dx[base..base + dlen], &g[k..k + dlen]);
                                k += dlen;
                            }
                        }
                    }
                });
            }
            Op::ReshapeTail { x, .. } => {
                grads.acc(*x, g.len(), |d| add_into(d, g));
            }
            Op::Select { x, axis, index } => {
                let xs = val(x);
                let (outer, n, inner) = axis_split(xs.shape(), *axis);
                grads.acc(*x, xs.len(), |d| {
                    for o in 0..outer {
                        let base = (o * n + index) * inner;
                        add_into(&mut d[base..base + inner], &g[o * inner..(o + 1) * inner]);
                    }
                });
            }
            Op::Slice { x, axis, start, end } => {
                let xs = val(x);
                let (outer, n, inner) = axis_split(xs.shape(), *axis);
                let w = (end - start) * inner;
                grads.acc(*x, xs.len(), |d| {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        add_into(&mut d[base..base + w], &g[o * w..(o + 1) * w]);
                    }
                });
            }
            Op::Stack(xs) => {
                let first = val(&xs[0]);
                let b = first.shape()[0];
                let inner = first.len() / b;
                let k = xs.len();
                for (j, x) in xs.iter().enumerate() {
                    grads.acc(*x, first.len(), |d| {
                        for bi in 0..b {
                            let src = (bi * k + j) * inner;
                            add_into(&mut d[bi * inner..(bi + 1) * inner], &g[src..src + inner]);
                        }
                    });
                }
            }
            Op::BatchMatVec { m, v } => {
                let (mv, vv) = (val(m), val(v));
                let (b, l, d) = (mv.shape()[0], mv.shape()[1], mv.shape()[2]);
                grads.acc(*m, mv.len(), |dm| {
                    for bi in 0..b {
                        for li in 0..l {
                            let gi = g[bi * l + li];
                            let row = &mut dm[(bi * l + li) * d..(bi * l + li + 1) * d];
                            for (r, e) in row.iter_mut().zip(&vv.values()[bi * d..(bi + 1) * d]) {
                                *r += gi * e;
                            }
                        }
                    }
                });
                grads.acc(*v, vv.len(), |dv| {
                    for bi in 0..b {
                        for li in 0..l {
                            let gi = g[bi * l + li];
                            let row = &mv.values()[(bi * l + li) * d..(bi * l + li + 1) * d];
                            for (r, e) in dv[bi * d..(bi + 1) * d].iter_mut().zip(row) {
                                *r += gi * e;
                            }
                        }
                    }
                });
            }
            Op::Softmax { x, temperature } => {
                let (_, last) = split_last(val(x).shape());
                grads.acc(*x, out.len(), |d| {
                    for ((drow, yrow), grow) in d.chunks_mut(last).zip(out.chunks(last)).zip(g.chunks(last)) {
                        let s = dot(yrow, grow);
                        for i in 0..last {
                            drow[i] += yrow[i] * (grow[i] - s) / temperature;
                        }
                    }
                });
            }
            Op::LogSoftmax { x, temperature } => {
                let (_, last) = split_last(val(x).shape());
                grads.acc(*x, out.len(), |d| {
                    for ((drow, yrow), grow) in d.chunks_mut(last).zip(out.chunks(last)).zip(g.chunks(last)) {
                        let s: f64 = grow.iter().sum();
                        for i in 0..last {
                            drow[i] += (grow[i] - libm::exp(yrow[i]) * s) / temperature;
                        }
                    }
                });
            }
            Op::L2Normalize(x) => {
                let xs = val(x);
                let (_, last) = split_last(xs.shape());
                grads.acc(*x, xs.len(), |d| {
                    for (((drow, xrow), yrow), grow) in d
                        .chunks_mut(last)
                        .zip(xs.values().chunks(last))
                        .zip(out.chunks(last))
                        .zip(g.chunks(last))
                    {
                        let norm = libm::sqrt(dot(xrow, xrow));
                        let s = dot(yrow, grow);
                        for i in 0..last {
                            drow[i] += (grow[i] - yrow[i] * s) / norm;
                        }
                    }
                });
            }
        }
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.values().iter().map(|&e| f(e)).collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(row: &[f64], temperature: f64, out: &mut Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut total = 0.0;
    for &r in row {
        let e = libm::exp((r - max) / temperature);
        total += e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e /= total;
    }
}

fn log_softmax_row(row: &[f64], temperature: f64, out: &mut Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = row.iter().map(|&r| libm::exp((r - max) / temperature)).sum();
    let lse = libm::log(total);
    out.extend(row.iter().map(|&r| (r - max) / temperature - lse));
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().expect("nonempty shape");
    (shape.iter().product::<usize>() / last, last)
}

fn outer_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() == 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (d, g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

/// Gradient slots; nodes that do not depend on a bound input are skipped.
struct GradBuf {
    slots: Vec<Option<Vec<f64>>>,
    live: Vec<bool>,
}

impl GradBuf {
    fn acc(&mut self, node: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
        if !self.live[node.0] {
            return;
        }
        let slot = self.slots[node.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }
}

/// `out[m, n] += a[m, k] * b[k, n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m, k] += g[m, n] * b[k, n]^T`
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k, n] += a[m, k]^T * g[m, n]`
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    len: usize,
    f: usize,
    k: usize,
    stride: usize,
    lout: usize,
}

fn conv_dims(x: &[usize], w: &[usize], b: &[usize], stride: usize) -> core::result::Result<ConvDims, String> {
    match (x, w, b) {
        (&[n, cin, len], &[f, cin2, k], &[fb]) if cin == cin2 && f == fb && stride > 0 => {
            if len < k {
                return Err(format!("input length {len} shorter than kernel {k}"));
            }
            Ok(ConvDims {
                n,
                cin,
                len,
                f,
                k,
                stride,
                lout: (len - k) / stride + 1,
            })
        }
        _ => Err(format!(
            "conv1d of {x:?} with kernel {w:?}, bias {b:?}, stride {stride}"
        )),
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.f * d.lout];
    for ni in 0..d.n {
        for fi in 0..d.f {
            let orow = &mut out[(ni * d.f + fi) * d.lout..(ni * d.f + fi + 1) * d.lout];
            orow.iter_mut().for_each(|o| *o = b[fi]);
            for ci in 0..d.cin {
                let xrow = &x[(ni * d.cin + ci) * d.len..(ni * d.cin + ci + 1) * d.len];
                let wrow = &w[(fi * d.cin + ci) * d.k..(fi * d.cin + ci + 1) * d.k];
                for (o, out_v) in orow.iter_mut().enumerate() {
                    let s = o * d.stride;
                    *out_v += dot(wrow, &xrow[s..s + d.k]);
                }
            }
        }
    }
    out
}

fn conv_grad_input(g: &[f64], w: &[f64], dx: &mut [f64], d: &ConvDims) {
    for ni in 0..d.n {
        for fi in 0..d.f {
            let grow = &g[(ni * d.f + fi) * d.lout..(ni * d.f + fi + 1) * d.lout];
            for ci in 0..d.cin {
                let wrow = &w[(fi * d.cin + ci) * d.k..(fi * d.cin + ci + 1) * d.k];
                let xrow = &mut dx[(ni * d.cin + ci) * d.len..(ni * d.cin + ci + 1) * d.len];
                for (o, &gv) in grow.iter().enumerate() {
                    let s = o * d.stride;
                    for (xe, we) in xrow[s..s + d.k].iter_mut().zip(wrow) {
                        *xe += gv * we;
                    }
                }
            }
        }
    }
}

fn conv_grad_weight(g: &[f64], x: &[f64], dw: &mut [f64], d: &ConvDims) {
    for ni in 0..d.n {
        for fi in 0..d.f {
            let grow = &g[(ni * d.f + fi) * d.lout..(ni * d.f + fi + 1) * d.lout];
            for ci in 0..d.cin {
                let xrow = &x[(ni * d.cin + ci) * d.len..(ni * d.cin + ci + 1) * d.len];
                let wrow = &mut dw[(fi * d.cin + ci) * d.k..(fi * d.cin + ci + 1) * d.k];
                for (o, &gv) in grow.iter().enumerate() {
                    let s = o * d.stride;
                    for (we, xe) in wrow.iter_mut().zip(&xrow[s..s + d.k]) {
                        *we += gv * xe;
                    }
                }
            }
        }
    }
}
