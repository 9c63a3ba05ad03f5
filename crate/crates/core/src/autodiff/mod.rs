//! Reverse-mode automatic differentiation on an append-only graph.
//!
//! The backward pass does not run on a separate tape: every adjoint is
//! emitted as new nodes of the same graph, built from the same primitive
//! set. A gradient is therefore an ordinary expression and can itself be
//! differentiated, which is what gradient-norm penalties need.
//!
//! Values are computed eagerly as nodes are appended whenever all inputs
//! are known. [`Graph::forward`] re-evaluates the whole graph under new
//! variable bindings.

mod tensor;

use std::collections::HashMap;
use std::fmt;

pub use tensor::{Shape, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Variable,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    MatVec,
    Transpose,
    Outer,
    Sum,
    Mean,
    Index,
    Exp,
    Log,
    Abs,
    MaxReduce,
    Power,
    Sigmoid,
    Tanh,
    LeakyRelu,
    Sign,
    LeakyMask,
    ArgmaxMask,
}

impl OpKind {
    /// Every op that carries a derivative rule.
    pub const DIFFERENTIABLE: [OpKind; 19] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Neg,
        OpKind::MatVec,
        OpKind::Transpose,
        OpKind::Outer,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Index,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Abs,
        OpKind::MaxReduce,
        OpKind::Power,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::LeakyRelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Variable => "variable",
            OpKind::Constant => "constant",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::MatVec => "matvec",
            OpKind::Transpose => "transpose",
            OpKind::Outer => "outer",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Index => "index",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Abs => "abs",
            OpKind::MaxReduce => "max-reduce",
            OpKind::Power => "power",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::LeakyRelu => "leaky-relu",
            OpKind::Sign => "sign",
            OpKind::LeakyMask => "leaky-mask",
            OpKind::ArgmaxMask => "argmax-mask",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE
            .iter()
            .chain(&[
                OpKind::Variable,
                OpKind::Constant,
                OpKind::Sign,
                OpKind::LeakyMask,
                OpKind::ArgmaxMask,
            ])
            .copied()
            .find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Variable,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    MatVec(NodeId, NodeId),
    Transpose(NodeId),
    Outer(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Index(NodeId, usize),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    MaxReduce(NodeId),
    Power(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    // Piecewise-constant helpers used by derivative rules; zero derivative.
    Sign(NodeId),
    LeakyMask(NodeId, f64),
    ArgmaxMask(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Variable => OpKind::Variable,
            Op::Constant => OpKind::Constant,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::Neg(_) => OpKind::Neg,
            Op::MatVec(..) => OpKind::MatVec,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Outer(..) => OpKind::Outer,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Index(..) => OpKind::Index,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Abs(_) => OpKind::Abs,
            Op::MaxReduce(_) => OpKind::MaxReduce,
            Op::Power(..) => OpKind::Power,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Sign(_) => OpKind::Sign,
            Op::LeakyMask(..) => OpKind::LeakyMask,
            Op::ArgmaxMask(_) => OpKind::ArgmaxMask,
        }
    }

    fn inputs(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Variable | Op::Constant => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatVec(a, b) | Op::Outer(a, b) => {
                [Some(a), Some(b)]
            }
            Op::Neg(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Index(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::MaxReduce(a)
            | Op::Power(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Sign(a)
            | Op::LeakyMask(a, _)
            | Op::ArgmaxMask(a) => [Some(a), None],
        }
    }

    fn carries_derivative(&self) -> bool {
        !matches!(
            self,
            Op::Variable | Op::Constant | Op::Sign(_) | Op::LeakyMask(..) | Op::ArgmaxMask(_)
        )
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Shape,
    value: Option<Tensor>,
}

/// Variable → gradient-node mapping returned by [`Graph::grad`].
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    entries: HashMap<NodeId, NodeId>,
}

impl GradMap {
    pub fn get(&self, var: NodeId) -> Option<NodeId> {
        self.entries.get(&var).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concatenates the gradient values of `vars`, in order.
    pub fn flatten(&self, graph: &Graph, vars: &[NodeId]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for &v in vars {
            let g = self.get(v).ok_or(Error::NotVariable(v))?;
            out.extend_from_slice(graph.value(g)?.data());
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    transposes: HashMap<NodeId, NodeId>,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph whose derivative rule for `op` is deliberately wrong (scaled by
    /// 1.1). Only meant for negative controls of the gradient checks.
    #[doc(hidden)]
    pub fn with_faulty_rule(op: OpKind) -> Self {
        Graph {
            fault: Some(op),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn op_kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes[id.0]
            .value
            .as_ref()
            .ok_or(Error::UnboundVariable(id))
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        let t = self.value(id)?;
        if !t.shape().is_scalar() {
            return Err(Error::NotScalar(id));
        }
        Ok(t.item())
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(Op::Variable, value)
    }

    /// A variable without a value; it must be bound in [`Graph::forward`].
    pub fn input(&mut self, shape: Shape) -> NodeId {
        self.nodes.push(Node {
            op: Op::Variable,
            shape,
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(Op::Constant, value)
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId> {
        self.constant(Tensor::scalar(v))
    }

    pub fn vector(&mut self, v: Vec<f64>) -> Result<NodeId> {
        self.constant(Tensor::vector(v))
    }

    fn leaf(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if !value.is_finite() {
            return Err(Error::NonFinite { node: id, op: op.kind() });
        }
        self.nodes.push(Node {
            op,
            shape: value.shape(),
            value: Some(value),
        });
        Ok(id)
    }

    // ── primitives ──────────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product; either side may be a scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    /// Elementwise quotient; either side may be a scalar.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg(a))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.push(Op::MatVec(m, v))
    }

    pub fn transpose(&mut self, m: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(m))
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Outer(a, b))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.push(Op::Index(a, i))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs(a))
    }

    pub fn max_reduce(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::MaxReduce(a))
    }

    /// Elementwise `a^exponent` for a constant exponent.
    pub fn power(&mut self, a: NodeId, exponent: f64) -> Result<NodeId> {
        self.push(Op::Power(a, exponent))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakyRelu(a, slope))
    }

    // ── composites ──────────────────────────────────────────────────────

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// `max(0, a)`.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.leaky_relu(a, 0.0)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let c = self.scalar(c)?;
        self.mul(c, a)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let c = self.scalar(c)?;
        self.add(a, c)
    }

    pub fn reciprocal(&mut self, a: NodeId) -> Result<NodeId> {
        self.power(a, -1.0)
    }

    /// Left-to-right sum of same-shaped nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms.split_first().ok_or(Error::Empty("sum of terms"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn mean_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let total = self.add_all(terms)?;
        self.scale(total, 1.0 / terms.len() as f64)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        let [a, b] = op.inputs();
        let sa = a.map(|a| self.nodes[a.0].shape);
        let sb = b.map(|b| self.nodes[b.0].shape);
        let shape = infer_shape(&op, sa, sb)?;
        let va = a.and_then(|a| self.nodes[a.0].value.as_ref());
        let vb = b.and_then(|b| self.nodes[b.0].value.as_ref());
        let ready = (a.is_none() || va.is_some()) && (b.is_none() || vb.is_some());
        let value = if ready {
            let v = compute(&op, shape, va.expect("unary or binary op"), vb);
            if !v.is_finite() {
                return Err(Error::NonFinite { node: id, op: op.kind() });
            }
            Some(v)
        } else {
            None
        };
        self.nodes.push(Node { op, shape, value });
        Ok(id)
    }

    // ── evaluation ──────────────────────────────────────────────────────

    /// Re-evaluates every node with `bindings` overriding variable values.
    /// Returns the value of each node, indexed by node position.
    pub fn forward(&self, bindings: &HashMap<NodeId, Tensor>) -> Result<Vec<Tensor>> {
        for &id in bindings.keys() {
            if id.0 >= self.nodes.len() || !matches!(self.nodes[id.0].op, Op::Variable) {
                return Err(Error::NotVariable(id));
            }
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            let v = match &node.op {
                Op::Variable => {
                    let v = bindings
                        .get(&id)
                        .or(node.value.as_ref())
                        .ok_or(Error::UnboundVariable(id))?;
                    if v.shape() != node.shape {
                        return Err(Error::ShapeMismatch {
                            op: OpKind::Variable,
                            detail: format!("binding {} for {} variable {id}", v.shape(), node.shape),
                        });
                    }
                    v.clone()
                }
                Op::Constant => node.value.clone().expect("constants carry values"),
                op => {
                    let [a, b] = op.inputs();
                    let va = &values[a.expect("non-leaf op").0];
                    let vb = b.map(|b| &values[b.0]);
                    compute(op, node.shape, va, vb)
                }
            };
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    node: id,
                    op: node.op.kind(),
                });
            }
            values.push(v);
        }
        Ok(values)
    }

    /// Like [`Graph::forward`], but stores the new values in the graph.
    pub fn rebind(&mut self, bindings: &HashMap<NodeId, Tensor>) -> Result<()> {
        let values = self.forward(bindings)?;
        for (node, v) in self.nodes.iter_mut().zip(values) {
            node.value = Some(v);
        }
        Ok(())
    }

    // ── differentiation ─────────────────────────────────────────────────

    /// Appends the reverse-mode gradient of scalar `output` with respect to
    /// each variable in `wrt` and returns the resulting nodes.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<GradMap> {
        if !self.shape(output).is_scalar() {
            return Err(Error::NotScalar(output));
        }
        if wrt.is_empty() {
            return Err(Error::EmptyWrt);
        }
        for &v in wrt {
            if !matches!(self.nodes[v.0].op, Op::Variable) {
                return Err(Error::NotVariable(v));
            }
        }

        let n = output.0 + 1;
        let mut depends = vec![false; n];
        for &v in wrt {
            if v.0 < n {
                depends[v.0] = true;
            }
        }
        for i in 0..n {
            let op = &self.nodes[i].op;
            if !depends[i] && op.carries_derivative() {
                depends[i] = op.inputs().iter().flatten().any(|j| depends[j.0]);
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if depends[output.0] {
            adjoint[output.0] = Some(self.scalar(1.0)?);
        }
        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (input, contribution) in self.backward_rule(NodeId(i), &op, g, &depends)? {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => contribution,
                    Some(acc) => self.add(acc, contribution)?,
                });
            }
        }

        let mut entries = HashMap::with_capacity(wrt.len());
        for &v in wrt {
            let g = match adjoint.get(v.0).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::filled(self.shape(v), 0.0))?,
            };
            entries.insert(v, g);
        }
        Ok(GradMap { entries })
    }

    fn transpose_cached(&mut self, m: NodeId) -> Result<NodeId> {
        if let Some(&t) = self.transposes.get(&m) {
            return Ok(t);
        }
        let t = self.transpose(m)?;
        self.transposes.insert(m, t);
        Ok(t)
    }

    fn ones_like(&mut self, x: NodeId) -> Result<NodeId> {
        self.constant(Tensor::filled(self.shape(x), 1.0))
    }

    /// Contributions of node `out` (with adjoint `g`) to the adjoints of
    /// its inputs. Every rule is expressed in primitives so the result is
    /// differentiable again.
    fn backward_rule(
        &mut self,
        out: NodeId,
        op: &Op,
        g: NodeId,
        depends: &[bool],
    ) -> Result<Vec<(NodeId, NodeId)>> {
        let needs = |x: NodeId| depends[x.0];
        let mut c: Vec<(NodeId, NodeId)> = Vec::with_capacity(2);
        match *op {
            Op::Variable | Op::Constant | Op::Sign(_) | Op::LeakyMask(..) | Op::ArgmaxMask(_) => {}
            Op::Add(a, b) => {
                if needs(a) {
                    c.push((a, g));
                }
                if needs(b) {
                    c.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    c.push((a, g));
                }
                if needs(b) {
                    let n = self.neg(g)?;
                    c.push((b, n));
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                if needs(a) {
                    let ga = if sa.is_scalar() && !sb.is_scalar() {
                        let p = self.mul(g, b)?;
                        self.sum(p)?
                    } else {
                        self.mul(g, b)?
                    };
                    c.push((a, ga));
                }
                if needs(b) {
                    let gb = if sb.is_scalar() && !sa.is_scalar() {
                        let p = self.mul(g, a)?;
                        self.sum(p)?
                    } else {
                        self.mul(a, g)?
                    };
                    c.push((b, gb));
                }
            }
            Op::Div(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                if needs(a) {
                    let q = self.div(g, b)?;
                    let ga = if sa.is_scalar() && !sb.is_scalar() { self.sum(q)? } else { q };
                    c.push((a, ga));
                }
                if needs(b) {
                    let p = self.mul(g, out)?;
                    let q = self.div(p, b)?;
                    let q = if sb.is_scalar() && !sa.is_scalar() { self.sum(q)? } else { q };
                    let gb = self.neg(q)?;
                    c.push((b, gb));
                }
            }
            Op::Neg(a) => {
                let n = self.neg(g)?;
                c.push((a, n));
            }
            Op::MatVec(m, v) => {
                if needs(m) {
                    let gm = self.outer(g, v)?;
                    c.push((m, gm));
                }
                if needs(v) {
                    let mt = self.transpose_cached(m)?;
                    let gv = self.matvec(mt, g)?;
                    c.push((v, gv));
                }
            }
            Op::Transpose(m) => {
                let t = self.transpose(g)?;
                c.push((m, t));
            }
            Op::Outer(a, b) => {
                if needs(a) {
                    let ga = self.matvec(g, b)?;
                    c.push((a, ga));
                }
                if needs(b) {
                    let gt = self.transpose(g)?;
                    let gb = self.matvec(gt, a)?;
                    c.push((b, gb));
                }
            }
            Op::Sum(a) => {
                let ga = if self.shape(a).is_scalar() {
                    g
                } else {
                    let ones = self.ones_like(a)?;
                    self.mul(g, ones)?
                };
                c.push((a, ga));
            }
            Op::Mean(a) => {
                let shape = self.shape(a);
                let w = self.constant(Tensor::filled(shape, 1.0 / shape.len() as f64))?;
                let ga = self.mul(g, w)?;
                c.push((a, ga));
            }
            Op::Index(a, i) => {
                let Shape::Vector(n) = self.shape(a) else {
                    unreachable!("index is only built on vectors")
                };
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let e = self.vector(e)?;
                let ga = self.mul(g, e)?;
                c.push((a, ga));
            }
            Op::Exp(a) => {
                let ga = self.mul(g, out)?;
                c.push((a, ga));
            }
            Op::Log(a) => {
                let r = self.reciprocal(a)?;
                let ga = self.mul(g, r)?;
                c.push((a, ga));
            }
            Op::Abs(a) => {
                let s = self.push(Op::Sign(a))?;
                let ga = self.mul(g, s)?;
                c.push((a, ga));
            }
            Op::MaxReduce(a) => {
                let mask = self.push(Op::ArgmaxMask(a))?;
                let ga = self.mul(g, mask)?;
                c.push((a, ga));
            }
            Op::Power(a, p) => {
                let local = if p == 1.0 {
                    None
                } else if p == 2.0 {
                    Some(self.scale(a, 2.0)?)
                } else {
                    let d = self.power(a, p - 1.0)?;
                    Some(self.scale(d, p)?)
                };
                let ga = match local {
                    None => g,
                    Some(l) => self.mul(g, l)?,
                };
                c.push((a, ga));
            }
            Op::Sigmoid(a) => {
                let s2 = self.mul(out, out)?;
                let local = self.sub(out, s2)?;
                let ga = self.mul(g, local)?;
                c.push((a, ga));
            }
            Op::Tanh(a) => {
                let ones = self.ones_like(out)?;
                let t2 = self.mul(out, out)?;
                let local = self.sub(ones, t2)?;
                let ga = self.mul(g, local)?;
                c.push((a, ga));
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.push(Op::LeakyMask(a, slope))?;
                let ga = self.mul(g, mask)?;
                c.push((a, ga));
            }
        }
        if self.fault == Some(op.kind()) {
            for (_, contribution) in c.iter_mut() {
                *contribution = self.scale(*contribution, 1.1)?;
            }
        }
        Ok(c)
    }
}

fn mismatch(op: &Op, detail: String) -> Error {
    Error::ShapeMismatch {
        op: op.kind(),
        detail,
    }
}

fn infer_shape(op: &Op, sa: Option<Shape>, sb: Option<Shape>) -> Result<Shape> {
    let a = sa.unwrap_or(Shape::Scalar);
    match op {
        Op::Variable | Op::Constant => unreachable!("leaves are not pushed through infer_shape"),
        Op::Add(..) | Op::Sub(..) => {
            let b = sb.expect("binary");
            if a != b {
                return Err(mismatch(op, format!("{a} vs {b}")));
            }
            Ok(a)
        }
        Op::Mul(..) | Op::Div(..) => {
            let b = sb.expect("binary");
            match (a, b) {
                _ if a == b => Ok(a),
                (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
                _ => Err(mismatch(op, format!("{a} vs {b}"))),
            }
        }
        Op::MatVec(..) => match (a, sb.expect("binary")) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => Ok(Shape::Vector(r)),
            (a, b) => Err(mismatch(op, format!("{a} times {b}"))),
        },
        Op::Transpose(_) => match a {
            Shape::Matrix(r, c) => Ok(Shape::Matrix(c, r)),
            a => Err(mismatch(op, format!("cannot transpose {a}"))),
        },
        Op::Outer(..) => match (a, sb.expect("binary")) {
            (Shape::Vector(p), Shape::Vector(q)) => Ok(Shape::Matrix(p, q)),
            (a, b) => Err(mismatch(op, format!("outer product of {a} and {b}"))),
        },
        Op::Sum(_) | Op::Mean(_) | Op::MaxReduce(_) => {
            if a.is_empty() {
                return Err(mismatch(op, "reduction over an empty tensor".into()));
            }
            Ok(Shape::Scalar)
        }
        Op::Index(_, i) => match a {
            Shape::Vector(n) if *i < n => Ok(Shape::Scalar),
            a => Err(mismatch(op, format!("index {i} into {a}"))),
        },
        Op::ArgmaxMask(_) => {
            if a.is_empty() {
                return Err(mismatch(op, "argmax of an empty tensor".into()));
            }
            Ok(a)
        }
        Op::Neg(_)
        | Op::Exp(_)
        | Op::Log(_)
        | Op::Abs(_)
        | Op::Power(..)
        | Op::Sigmoid(_)
        | Op::Tanh(_)
        | Op::LeakyRelu(..)
        | Op::Sign(_)
        | Op::LeakyMask(..) => Ok(a),
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn powi_like(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else if p == -1.0 {
        1.0 / x
    } else if p == 0.5 {
        x.sqrt()
    } else if p == -0.5 {
        1.0 / x.sqrt()
    } else if p == 0.0 {
        1.0
    } else {
        x.powf(p)
    }
}

/// Index of the first maximal entry.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn compute(op: &Op, shape: Shape, a: &Tensor, b: Option<&Tensor>) -> Tensor {
    match *op {
        Op::Variable | Op::Constant => unreachable!("leaves carry their own values"),
        Op::Add(..) => zip(a, b.expect("binary"), |x, y| x + y),
        Op::Sub(..) => zip(a, b.expect("binary"), |x, y| x - y),
        Op::Mul(..) => {
            let b = b.expect("binary");
            if a.shape() == b.shape() {
                zip(a, b, |x, y| x * y)
            } else if a.shape().is_scalar() {
                let s = a.item();
                map(b, |y| s * y)
            } else {
                let s = b.item();
                map(a, |x| x * s)
            }
        }
        Op::Div(..) => {
            let b = b.expect("binary");
            if a.shape() == b.shape() {
                zip(a, b, |x, y| x / y)
            } else if a.shape().is_scalar() {
                let s = a.item();
                map(b, |y| s / y)
            } else {
                let s = b.item();
                map(a, |x| x / s)
            }
        }
        Op::Neg(_) => map(a, |x| -x),
        Op::MatVec(..) => {
            let v = b.expect("binary").data();
            let cols = v.len();
            let data = a
                .data()
                .chunks_exact(cols)
                .map(|row| row.iter().zip(v).map(|(m, x)| m * x).sum())
                .collect();
            Tensor::new(shape, data)
        }
        Op::Transpose(_) => {
            let Shape::Matrix(r, c) = a.shape() else {
                unreachable!("checked by infer_shape")
            };
            let m = a.data();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = m[i * c + j];
                }
            }
            Tensor::new(shape, data)
        }
        Op::Outer(..) => {
            let bv = b.expect("binary").data();
            let data = a
                .data()
                .iter()
                .flat_map(|&x| bv.iter().map(move |&y| x * y))
                .collect();
            Tensor::new(shape, data)
        }
        Op::Sum(_) => Tensor::scalar(a.data().iter().sum()),
        Op::Mean(_) => Tensor::scalar(a.data().iter().sum::<f64>() / a.data().len() as f64),
        Op::Index(_, i) => Tensor::scalar(a.data()[i]),
        Op::Exp(_) => map(a, f64::exp),
        Op::Log(_) => map(a, f64::ln),
        Op::Abs(_) => map(a, f64::abs),
        Op::MaxReduce(_) => Tensor::scalar(a.data()[argmax(a.data())]),
        Op::Power(_, p) => map(a, |x| powi_like(x, p)),
        Op::Sigmoid(_) => map(a, sigmoid),
        Op::Tanh(_) => map(a, f64::tanh),
        Op::LeakyRelu(_, s) => map(a, |x| if x > 0.0 { x } else { s * x }),
        Op::Sign(_) => map(a, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::LeakyMask(_, s) => map(a, |x| if x > 0.0 { 1.0 } else { s }),
        Op::ArgmaxMask(_) => {
            let mut data = vec![0.0; a.data().len()];
            data[argmax(a.data())] = 1.0;
            Tensor::new(shape, data)
        }
    }
}

#[cfg(test)]
mod tests;
