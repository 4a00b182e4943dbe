//! Static dataflow graph: append-only nodes with inferred shapes.
//!
//! A node may only reference nodes added before it, so insertion order is a
//! topological order and the graph is acyclic by construction.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, DEFAULT_LOG_FLOOR};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Operation performed by a node.
///
/// The kinds after `Dot` exist for the backward pass (plus `Add` for
/// accumulating adjoints and `Flatten` for turning an `[n, 1]` prediction
/// into a vector). Kinds for which [`OpKind::is_backward_only`] holds have
/// no gradient rule of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Placeholder,
    Variable,
    Const,
    MatMul,
    AddRowBroadcast,
    Sigmoid,
    Relu,
    Log,
    Neg,
    Sub,
    Mul,
    ReduceSum,
    Dot,
    Add,
    Flatten,
    Transpose,
    ColumnSum,
    Step,
    Reciprocal,
    /// Broadcasts a rank-0 input to the runtime shape of the second input.
    BroadcastLike,
    /// Reinterprets the first input with the runtime shape of the second.
    ReshapeLike,
    /// Zeros with the runtime shape of the input.
    ZerosLike,
}

impl OpKind {
    pub fn arity(self) -> usize {
        use OpKind::*;
        match self {
            Placeholder | Variable | Const => 0,
            Sigmoid | Relu | Log | Neg | ReduceSum | Flatten | Transpose | ColumnSum | Step
            | Reciprocal | ZerosLike => 1,
            MatMul | AddRowBroadcast | Sub | Mul | Dot | Add | BroadcastLike | ReshapeLike => 2,
        }
    }

    pub fn name(self) -> &'static str {
        use OpKind::*;
        match self {
            Placeholder => "Placeholder",
            Variable => "Variable",
            Const => "Const",
            MatMul => "MatMul",
            AddRowBroadcast => "AddRowBroadcast",
            Sigmoid => "Sigmoid",
            Relu => "Relu",
            Log => "Log",
            Neg => "Neg",
            Sub => "Sub",
            Mul => "Mul",
            ReduceSum => "ReduceSum",
            Dot => "Dot",
            Add => "Add",
            Flatten => "Flatten",
            Transpose => "Transpose",
            ColumnSum => "ColumnSum",
            Step => "Step",
            Reciprocal => "Reciprocal",
            BroadcastLike => "BroadcastLike",
            ReshapeLike => "ReshapeLike",
            ZerosLike => "ZerosLike",
        }
    }

    pub fn is_source(self) -> bool {
        self.arity() == 0
    }

    pub fn is_backward_only(self) -> bool {
        use OpKind::*;
        matches!(
            self,
            Transpose | ColumnSum | Step | Reciprocal | BroadcastLike | ReshapeLike | ZerosLike
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One dimension of a node shape: known, or the batch wildcard bound when
/// the graph is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Known(usize),
    Batch,
}

impl Dim {
    fn compatible(self, other: Dim) -> bool {
        match (self, other) {
            (Dim::Known(a), Dim::Known(b)) => a == b,
            _ => true,
        }
    }

    fn merge(self, other: Dim) -> Dim {
        match (self, other) {
            (Dim::Known(a), _) => Dim::Known(a),
            (_, d) => d,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Known(n) => write!(f, "{n}"),
            Dim::Batch => write!(f, "?"),
        }
    }
}

/// Static shape of a node, possibly containing one batch wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct NodeShape(Vec<Dim>);

impl NodeShape {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.len() > 2 {
            return Err(Error::InvalidShape(format!(
                "rank {} exceeds 2",
                dims.len()
            )));
        }
        if dims.iter().filter(|d| **d == Dim::Batch).count() > 1 {
            return Err(Error::InvalidShape(
                "more than one wildcard dimension".into(),
            ));
        }
        Ok(NodeShape(dims))
    }

    pub fn scalar() -> Self {
        NodeShape(Vec::new())
    }

    /// Fully known shape.
    pub fn known(dims: &[usize]) -> Result<Self> {
        Self::new(dims.iter().map(|&d| Dim::Known(d)).collect())
    }

    /// `[?, rest...]`, the shape of a batched placeholder.
    pub fn batched(rest: &[usize]) -> Result<Self> {
        let mut dims = vec![Dim::Batch];
        dims.extend(rest.iter().map(|&d| Dim::Known(d)));
        Self::new(dims)
    }

    pub fn dims(&self) -> &[Dim] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn has_wildcard(&self) -> bool {
        self.0.contains(&Dim::Batch)
    }

    pub fn to_concrete(&self) -> Option<Shape> {
        let dims: Option<Vec<usize>> = self
            .0
            .iter()
            .map(|d| match d {
                Dim::Known(n) => Some(*n),
                Dim::Batch => None,
            })
            .collect();
        dims.and_then(|d| Shape::new(&d).ok())
    }

    fn compatible(&self, other: &NodeShape) -> bool {
        self.rank() == other.rank() && self.0.iter().zip(&other.0).all(|(a, b)| a.compatible(*b))
    }

    /// Checks a concrete shape against this one, returning the size the batch
    /// wildcard binds to (if the shape has one).
    pub fn bind(&self, concrete: &Shape) -> Option<Option<usize>> {
        if self.rank() != concrete.rank() {
            return None;
        }
        let mut batch = None;
        for (d, &c) in self.0.iter().zip(concrete.dims()) {
            match d {
                Dim::Known(n) if *n != c => return None,
                Dim::Known(_) => {}
                Dim::Batch => batch = Some(c),
            }
        }
        Some(batch)
    }
}

impl From<Shape> for NodeShape {
    fn from(s: Shape) -> Self {
        NodeShape(s.dims().iter().map(|&d| Dim::Known(d)).collect())
    }
}

impl fmt::Display for NodeShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// How a session fills a variable when it initializes.
#[derive(Debug, Clone, PartialEq)]
pub enum InitializerSpec<T> {
    Normal { mean: T, stddev: T },
    Zeros,
    Explicit(Tensor<T>),
}

impl<T: Scalar> InitializerSpec<T> {
    pub fn normal(mean: T, stddev: T) -> Self {
        InitializerSpec::Normal { mean, stddev }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    id: NodeId,
    kind: OpKind,
    inputs: Vec<NodeId>,
    shape: NodeShape,
    name: String,
    init: Option<InitializerSpec<T>>,
    value: Option<Tensor<T>>,
    backward: bool,
}

impl<T> Node<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn shape(&self) -> &NodeShape {
        &self.shape
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Initializer of a variable node.
    pub fn init(&self) -> Option<&InitializerSpec<T>> {
        self.init.as_ref()
    }

    /// Value of a constant node.
    pub fn value(&self) -> Option<&Tensor<T>> {
        self.value.as_ref()
    }

    /// Whether the node was created by the backward pass.
    pub fn is_backward(&self) -> bool {
        self.backward
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    names: HashMap<String, NodeId>,
    log_floor: Option<T>,
    building_backward: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            names: HashMap::new(),
            log_floor: Some(T::lit(DEFAULT_LOG_FLOOR)),
            building_backward: false,
        }
    }

    /// Lower bound applied to `Log` and `Reciprocal` arguments at run time.
    /// `None` turns non-positive arguments into domain errors.
    pub fn set_log_floor(&mut self, floor: Option<T>) {
        self.log_floor = floor;
    }

    pub fn log_floor(&self) -> Option<T> {
        self.log_floor
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id))
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Variable nodes in ascending id order.
    pub fn variables(&self) -> Vec<NodeId> {
        self.ids_of(OpKind::Variable)
    }

    pub fn placeholders(&self) -> Vec<NodeId> {
        self.ids_of(OpKind::Placeholder)
    }

    fn ids_of(&self, kind: OpKind) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.id)
            .collect()
    }

    pub fn add_placeholder(&mut self, name: &str, shape: NodeShape) -> Result<NodeId> {
        if shape.dims().iter().skip(1).any(|d| *d == Dim::Batch) {
            return Err(Error::InvalidShape(format!(
                "placeholder `{name}`: wildcard only allowed in the leading dimension"
            )));
        }
        self.push(name, OpKind::Placeholder, Vec::new(), shape, None, None)
    }

    pub fn add_variable(
        &mut self,
        name: &str,
        shape: NodeShape,
        init: InitializerSpec<T>,
    ) -> Result<NodeId> {
        let concrete = shape.to_concrete().ok_or_else(|| {
            Error::InvalidShape(format!(
                "variable `{name}` cannot have a wildcard dimension"
            ))
        })?;
        match &init {
            InitializerSpec::Normal { mean, stddev } => {
                if *stddev < T::zero() || !stddev.is_finite() || !mean.is_finite() {
                    return Err(Error::InvalidInitializer(format!(
                        "normal({mean}, {stddev}) for `{name}`"
                    )));
                }
            }
            InitializerSpec::Explicit(t) if *t.shape() != concrete => {
                return Err(Error::InvalidInitializer(format!(
                    "explicit value {} does not match variable `{name}` shape {concrete}",
                    t.shape()
                )));
            }
            _ => {}
        }
        self.push(name, OpKind::Variable, Vec::new(), shape, Some(init), None)
    }

    pub fn add_const(&mut self, name: &str, value: Tensor<T>) -> Result<NodeId> {
        let shape = NodeShape::from(value.shape().clone());
        self.push(name, OpKind::Const, Vec::new(), shape, None, Some(value))
    }

    /// Appends an operation node, inferring its shape from its inputs.
    pub fn add_op(&mut self, kind: OpKind, inputs: &[NodeId], name: &str) -> Result<NodeId> {
        if kind.is_source() {
            return Err(Error::ArityError {
                kind,
                expected: 0,
                got: inputs.len(),
            });
        }
        if inputs.len() != kind.arity() {
            return Err(Error::ArityError {
                kind,
                expected: kind.arity(),
                got: inputs.len(),
            });
        }
        let shapes = inputs
            .iter()
            .map(|&i| {
                self.nodes
                    .get(i.0)
                    .map(|n| n.shape.clone())
                    .ok_or(Error::UnknownInput(i))
            })
            .collect::<Result<Vec<_>>>()?;
        let shape = infer_shape(kind, &shapes)?;
        self.push(name, kind, inputs.to_vec(), shape, None, None)
    }

    fn push(
        &mut self,
        name: &str,
        kind: OpKind,
        inputs: Vec<NodeId>,
        shape: NodeShape,
        init: Option<InitializerSpec<T>>,
        value: Option<Tensor<T>>,
    ) -> Result<NodeId> {
        if self.names.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let id = NodeId(self.nodes.len());
        self.names.insert(name.to_string(), id);
        self.nodes.push(Node {
            id,
            kind,
            inputs,
            shape,
            name: name.to_string(),
            init,
            value,
            backward: self.building_backward,
        });
        Ok(id)
    }

    /// Name not yet used in this graph, derived from `base`.
    pub(crate) fn fresh_name(&self, base: &str) -> String {
        let mut name = format!("{base}_{}", self.nodes.len());
        let mut k = 0;
        while self.names.contains_key(&name) {
            k += 1;
            name = format!("{base}_{}_{k}", self.nodes.len());
        }
        name
    }

    pub(crate) fn set_building_backward(&mut self, on: bool) {
        self.building_backward = on;
    }

    /// Ancestor mask: `mask[i]` is true iff node `i` is one of `roots` or
    /// feeds into one of them.
    pub fn ancestors(&self, roots: &[NodeId]) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.nodes.len()];
        for &r in roots {
            self.node(r)?;
            mask[r.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if mask[i] {
                for inp in &self.nodes[i].inputs {
                    mask[inp.0] = true;
                }
            }
        }
        Ok(mask)
    }

    /// Every node after all of its inputs. Insertion order already has that
    /// property.
    pub fn topo_order(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    /// Graphviz rendering: one vertex per node, one edge per input reference.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph g {\n");
        for n in &self.nodes {
            let label = format!("{}: {} {}", n.name, n.kind, n.shape);
            let _ = writeln!(out, "{} [label=\"{}\"];", n.id, escape_dot(&label));
        }
        for n in &self.nodes {
            for inp in &n.inputs {
                let _ = writeln!(out, "{inp} -> {};", n.id);
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn mismatch(kind: OpKind, shapes: &[NodeShape]) -> Error {
    let listed: Vec<String> = shapes.iter().map(ToString::to_string).collect();
    Error::ShapeMismatch {
        op: kind.name(),
        detail: format!("incompatible input shapes {}", listed.join(", ")),
    }
}

fn infer_shape(kind: OpKind, s: &[NodeShape]) -> Result<NodeShape> {
    use OpKind::*;
    let err = || mismatch(kind, s);
    match kind {
        Placeholder | Variable | Const => unreachable!("source kinds are not inferred"),
        MatMul => match (s[0].dims(), s[1].dims()) {
            ([m, k1], [k2, n]) if k1.compatible(*k2) => NodeShape::new(vec![*m, *n]),
            _ => Err(err()),
        },
        AddRowBroadcast => match (s[0].dims(), s[1].dims()) {
            ([m, n], [b]) if n.compatible(*b) => NodeShape::new(vec![*m, n.merge(*b)]),
            _ => Err(err()),
        },
        Sigmoid | Relu | Log | Neg | Step | Reciprocal | ZerosLike => Ok(s[0].clone()),
        Sub | Mul | Add => {
            if s[0].compatible(&s[1]) {
                let dims = s[0]
                    .dims()
                    .iter()
                    .zip(s[1].dims())
                    .map(|(a, b)| a.merge(*b));
                NodeShape::new(dims.collect())
            } else if s[0].rank() == 0 {
                Ok(s[1].clone())
            } else if s[1].rank() == 0 {
                Ok(s[0].clone())
            } else {
                Err(err())
            }
        }
        ReduceSum => Ok(NodeShape::scalar()),
        Dot => match (s[0].dims(), s[1].dims()) {
            ([a], [b]) if a.compatible(*b) => Ok(NodeShape::scalar()),
            _ => Err(err()),
        },
        Flatten => match *s[0].dims() {
            [] => NodeShape::known(&[1]),
            [d] => NodeShape::new(vec![d]),
            [Dim::Known(a), Dim::Known(b)] => NodeShape::known(&[a * b]),
            [Dim::Batch, Dim::Known(1)] | [Dim::Known(1), Dim::Batch] => {
                NodeShape::new(vec![Dim::Batch])
            }
            _ => Err(Error::InvalidShape(format!(
                "cannot flatten {} to a single wildcard dimension",
                s[0]
            ))),
        },
        Transpose => match *s[0].dims() {
            [a, b] => NodeShape::new(vec![b, a]),
            _ => Err(err()),
        },
        ColumnSum => match *s[0].dims() {
            [_, b] => NodeShape::new(vec![b]),
            _ => Err(err()),
        },
        BroadcastLike => {
            if s[0].rank() == 0 {
                Ok(s[1].clone())
            } else {
                Err(err())
            }
        }
        ReshapeLike => {
            if let (Some(a), Some(b)) = (s[0].to_concrete(), s[1].to_concrete()) {
                if a.numel() != b.numel() {
                    return Err(err());
                }
            }
            Ok(s[1].clone())
        }
    }
}
