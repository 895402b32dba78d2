//! Batched computational graph with forward evaluation and reverse-mode
//! gradients.
//!
//! Every node is either a scalar or a batch vector whose width is fixed per
//! evaluation by the bound inputs. Scalars broadcast against batches. Batch
//! lanes never interact except through [`Op::ReduceMean`], so the adjoint of
//! every node is kept lane-wise: the gradient with respect to a scalar input
//! comes back as one entry per lane, i.e. samplewise.

mod eval;

use std::collections::BTreeMap;
use std::fmt::Write;

use thiserror::Error;

pub use crate::activation::Activation;
pub use eval::Tape;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpKind {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpKind {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpKind::Lt => a < b,
            CmpKind::Le => a <= b,
            CmpKind::Gt => a > b,
            CmpKind::Ge => a >= b,
            CmpKind::Eq => a == b,
            CmpKind::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Const(f64),
    /// Input slot, in declaration order.
    Input(usize),
    /// Batch vector with every lane equal to the value.
    Fill(f64),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    Max,
    Min,
    PositivePart,
    /// 1.0 where the comparison holds, else 0.0. Not differentiable.
    Compare(CmpKind),
    /// `args = [cond, a, b]`: a where cond != 0, else b.
    Select,
    /// Σ_k coeffs[k]·args[k] + bias: one row of a dense layer.
    Affine {
        coeffs: Vec<f64>,
        bias: f64,
    },
    Activation(Activation),
    ReduceMean,
}

impl Op {
    fn name(&self) -> String {
        match self {
            Op::Const(v) => format!("const {v}"),
            Op::Input(s) => format!("input #{s}"),
            Op::Fill(v) => format!("fill {v}"),
            Op::Add => "add".into(),
            Op::Sub => "sub".into(),
            Op::Mul => "mul".into(),
            Op::Div => "div".into(),
            Op::Neg => "neg".into(),
            Op::Exp => "exp".into(),
            Op::Log => "log".into(),
            Op::Sqrt => "sqrt".into(),
            Op::Abs => "abs".into(),
            Op::Max => "max".into(),
            Op::Min => "min".into(),
            Op::PositivePart => "positivepart".into(),
            Op::Compare(k) => format!("compare {k:?}").to_lowercase(),
            Op::Select => "select".into(),
            Op::Affine { coeffs, bias } => format!("affine {coeffs:?} {bias}"),
            Op::Activation(a) => a.name().into(),
            Op::ReduceMean => "reduce_mean".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub args: Vec<NodeId>,
    pub shape: Shape,
    /// Caller-defined label (the simulator stores the time step here).
    pub tag: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unbound input `{0}`")]
    UnboundInput(String),
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("shape mismatch for input `{name}`: expected {expected}, got {got} values")]
    ShapeMismatch { name: String, expected: String, got: usize },
    #[error("non-finite value at node {node} (lane {lane})")]
    NonFinite { node: NodeId, lane: usize },
    #[error("node {0} is not a graph output")]
    NotAnOutput(NodeId),
}

/// A bound input value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Batch(Vec<f64>),
}

impl Value {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Scalar(v) => std::slice::from_ref(v),
            Value::Batch(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<(String, NodeId)>,
    outputs: Vec<NodeId>,
    tag: u32,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn inputs(&self) -> &[(String, NodeId)] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn input_slot(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|(n, _)| n == name)
    }

    /// Tag applied to nodes created from now on.
    pub fn set_tag(&mut self, tag: u32) {
        self.tag = tag;
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    fn push(&mut self, op: Op, args: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len();
        debug_assert!(args.iter().all(|&a| a < id));
        let shape = match op {
            Op::Const(_) | Op::ReduceMean => Shape::Scalar,
            Op::Fill(_) => Shape::Batch,
            _ => {
                if args.iter().any(|&a| self.nodes[a].shape == Shape::Batch) {
                    Shape::Batch
                } else {
                    Shape::Scalar
                }
            }
        };
        self.nodes.push(Node {
            op,
            args,
            shape,
            tag: self.tag,
        });
        id
    }

    fn const_value(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id].op {
            Op::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Builds an elementwise node, folding it to a constant when every
    /// argument is constant and the result is finite.
    fn elementwise(&mut self, op: Op, args: Vec<NodeId>) -> NodeId {
        let consts: Option<Vec<f64>> = args.iter().map(|&a| self.const_value(a)).collect();
        if let Some(c) = consts {
            let v = eval::apply_scalar(&op, &c);
            if v.is_finite() {
                return self.constant(v);
            }
        }
        self.push(op, args)
    }

    pub fn input(&mut self, name: impl Into<String>, shape: Shape) -> NodeId {
        let name = name.into();
        assert!(self.input_slot(&name).is_none(), "duplicate input `{name}`");
        let slot = self.inputs.len();
        let id = self.push(Op::Input(slot), Vec::new());
        self.nodes[id].shape = shape;
        self.inputs.push((name, id));
        id
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const(v), Vec::new())
    }

    pub fn fill(&mut self, v: f64) -> NodeId {
        self.push(Op::Fill(v), Vec::new())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Div, vec![a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.elementwise(Op::Neg, vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.elementwise(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.elementwise(Op::Log, vec![a])
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.elementwise(Op::Sqrt, vec![a])
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.elementwise(Op::Abs, vec![a])
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Max, vec![a, b])
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Min, vec![a, b])
    }

    pub fn positive_part(&mut self, a: NodeId) -> NodeId {
        self.elementwise(Op::PositivePart, vec![a])
    }

    pub fn compare(&mut self, kind: CmpKind, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Compare(kind), vec![a, b])
    }

    pub fn select(&mut self, cond: NodeId, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise(Op::Select, vec![cond, a, b])
    }

    pub fn affine(&mut self, args: &[NodeId], coeffs: &[f64], bias: f64) -> NodeId {
        assert_eq!(args.len(), coeffs.len());
        self.push(
            Op::Affine {
                coeffs: coeffs.to_vec(),
                bias,
            },
            args.to_vec(),
        )
    }

    pub fn activation(&mut self, kind: Activation, a: NodeId) -> NodeId {
        self.elementwise(Op::Activation(kind), vec![a])
    }

    pub fn reduce_mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::ReduceMean, vec![a])
    }

    pub fn mark_output(&mut self, id: NodeId) {
        if !self.outputs.contains(&id) {
            self.outputs.push(id);
        }
    }

    /// Evaluates with inputs bound by name.
    pub fn eval(&self, bindings: &BTreeMap<String, Value>) -> Result<Tape, GraphError> {
        for name in bindings.keys() {
            if self.input_slot(name).is_none() {
                return Err(GraphError::UnknownInput(name.clone()));
            }
        }
        let slots = self
            .inputs
            .iter()
            .map(|(name, _)| {
                bindings
                    .get(name)
                    .map(Value::as_slice)
                    .ok_or_else(|| GraphError::UnboundInput(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.eval_slots(&slots)
    }

    /// Evaluates with inputs bound positionally by slot. Each slice holds one
    /// value for a scalar input or one value per lane for a batch input.
    pub fn eval_slots(&self, slots: &[&[f64]]) -> Result<Tape, GraphError> {
        eval::forward(self, slots)
    }

    /// Lane-wise gradient of `output` with respect to the named inputs.
    ///
    /// Batch inputs get one entry per lane. Scalar inputs get one entry per
    /// lane when `output` is a batch (the samplewise derivative), or a single
    /// total when `output` is a scalar.
    pub fn grad(&self, tape: &Tape, output: NodeId, wrt: &[&str]) -> Result<Vec<Vec<f64>>, GraphError> {
        let slots = wrt
            .iter()
            .map(|w| self.input_slot(w).ok_or_else(|| GraphError::UnknownInput(w.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        self.grad_slots(tape, output, &slots)
    }

    pub fn grad_slots(&self, tape: &Tape, output: NodeId, wrt: &[usize]) -> Result<Vec<Vec<f64>>, GraphError> {
        if !self.outputs.contains(&output) {
            return Err(GraphError::NotAnOutput(output));
        }
        Ok(eval::backward(self, tape, output, wrt))
    }

    /// One node per line: `id op args shape tag`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, n) in self.nodes.iter().enumerate() {
            let args: Vec<String> = n.args.iter().map(|a| a.to_string()).collect();
            let shape = match n.shape {
                Shape::Scalar => "scalar",
                Shape::Batch => "batch",
            };
            let _ = writeln!(out, "{id}\t{}\t[{}]\t{shape}\tt{}", n.op.name(), args.join(","), n.tag);
        }
        for (name, id) in &self.inputs {
            let _ = writeln!(out, "input {name} = {id}");
        }
        for id in &self.outputs {
            let _ = writeln!(out, "output {id}");
        }
        out
    }
}
