//! Session executor: variable storage, feed/fetch evaluation and
//! gradient-descent steps.
//!
//! Random initializers draw from ChaCha8 seeded with the session's 64-bit
//! seed (`rand_chacha::ChaCha8Rng::seed_from_u64`). Normal deviates come from
//! `rand_distr::StandardNormal` in `f64`, scaled to `mean + stddev * z`, and
//! variables are drawn in ascending node id order, each in row-major order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::gradients;
use crate::error::{Error, Result};
use crate::graph::{Graph, InitializerSpec, Node, NodeId, OpKind};
use crate::scalar::Scalar;
use crate::tensor::{BinaryKind, Tensor, UnaryKind};

/// Placeholder values for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedDict<T> {
    entries: BTreeMap<NodeId, Tensor<T>>,
}

impl<T> Default for FeedDict<T> {
    fn default() -> Self {
        FeedDict {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> FeedDict<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, placeholder: NodeId, value: Tensor<T>) -> Self {
        self.insert(placeholder, value);
        self
    }

    pub fn insert(&mut self, placeholder: NodeId, value: Tensor<T>) -> Option<Tensor<T>> {
        self.entries.insert(placeholder, value)
    }

    pub fn get(&self, placeholder: NodeId) -> Option<&Tensor<T>> {
        self.entries.get(&placeholder)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update<T> {
    pub variable: NodeId,
    pub gradient: NodeId,
    pub learning_rate: T,
}

/// Plain gradient descent over a set of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStep<T> {
    pub loss: NodeId,
    pub updates: Vec<Update<T>>,
}

/// Builds gradient nodes for every variable of `g` (ascending id) and pairs
/// each with `learning_rate`.
pub fn build_gradient_descent_step<T: Scalar>(
    g: &mut Graph<T>,
    loss: NodeId,
    learning_rate: T,
) -> Result<TrainStep<T>> {
    if learning_rate <= T::zero() || !learning_rate.is_finite() {
        return Err(Error::InvalidLearningRate(learning_rate.to_f64_lossy()));
    }
    if g.node(loss)?.shape().rank() != 0 {
        return Err(Error::NotScalarLoss(loss));
    }
    let variables = g.variables();
    if variables.is_empty() {
        return Err(Error::NoTrainableVariables);
    }
    let grads = gradients(g, loss, &variables)?;
    Ok(TrainStep {
        loss,
        updates: variables
            .into_iter()
            .zip(grads)
            .map(|(variable, gradient)| Update {
                variable,
                gradient,
                learning_rate,
            })
            .collect(),
    })
}

/// Binds a graph to variable storage. The graph is borrowed immutably for
/// the session's lifetime.
#[derive(Debug)]
pub struct Session<'g, T> {
    graph: &'g Graph<T>,
    store: BTreeMap<NodeId, Tensor<T>>,
    rng: ChaCha8Rng,
    initialized: bool,
}

impl<'g, T: Scalar> Session<'g, T> {
    pub fn new(graph: &'g Graph<T>, seed: u64) -> Result<Self> {
        if graph.is_empty() {
            return Err(Error::EmptyGraph);
        }
        Ok(Session {
            graph,
            store: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            initialized: false,
        })
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn initialize_variables(&mut self) -> Result<()> {
        if self.initialized {
            return Err(Error::AlreadyInitialized);
        }
        for id in self.graph.variables() {
            let node = self.graph.node(id)?;
            let shape = node
                .shape()
                .to_concrete()
                .expect("variables have concrete shapes");
            let value = match node.init().expect("variables carry an initializer") {
                InitializerSpec::Zeros => Tensor::zeros(&shape),
                InitializerSpec::Explicit(t) => t.clone(),
                InitializerSpec::Normal { mean, stddev } => {
                    let (mean, stddev) = (mean.to_f64_lossy(), stddev.to_f64_lossy());
                    let data = (0..shape.numel())
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut self.rng);
                            T::lit(mean + stddev * z)
                        })
                        .collect();
                    Tensor::from_shape(shape, data)?
                }
            };
            self.store.insert(id, value);
        }
        self.initialized = true;
        Ok(())
    }

    pub fn variable(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.store.get(&id)
    }

    /// Overwrites a variable's value; the shape must match its declaration.
    pub fn set_variable(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = self.graph.node(id)?;
        if node.kind() != OpKind::Variable {
            return Err(Error::NotAVariable(node.name().to_string()));
        }
        if node.shape().bind(value.shape()).is_none() {
            return Err(Error::shape(
                "set_variable",
                format!(
                    "`{}` is {}, got {}",
                    node.name(),
                    node.shape(),
                    value.shape()
                ),
            ));
        }
        self.store.insert(id, value);
        Ok(())
    }

    /// Evaluates `fetches` under `feeds` without touching the variable store.
    pub fn run(&self, fetches: &[NodeId], feeds: &FeedDict<T>) -> Result<Vec<Tensor<T>>> {
        self.evaluate(fetches, feeds, &BTreeMap::new())
    }

    /// Like [`Session::run`], but any node listed in `overrides` takes the
    /// given value instead of being computed. Used to probe the graph with
    /// perturbed intermediate values.
    pub fn evaluate(
        &self,
        fetches: &[NodeId],
        feeds: &FeedDict<T>,
        overrides: &BTreeMap<NodeId, Tensor<T>>,
    ) -> Result<Vec<Tensor<T>>> {
        if !self.initialized {
            return Err(Error::NotInitialized);
        }
        let g = self.graph;
        let mut needed = vec![false; g.len()];
        for &f in fetches {
            g.node(f)?;
            needed[f.index()] = true;
        }
        for i in (0..g.len()).rev() {
            let id = g.nodes()[i].id();
            if needed[i] && !overrides.contains_key(&id) {
                for inp in g.nodes()[i].inputs() {
                    needed[inp.index()] = true;
                }
            }
        }

        for &id in feeds.entries.keys() {
            let node = g.node(id)?;
            if node.kind() != OpKind::Placeholder {
                return Err(Error::NotAPlaceholder(node.name().to_string()));
            }
        }
        let mut batch: Option<usize> = None;
        let mut values: Vec<Option<Tensor<T>>> = vec![None; g.len()];
        for node in g.nodes() {
            let i = node.id().index();
            if !needed[i] {
                continue;
            }
            let value = match overrides.get(&node.id()) {
                Some(v) => v.clone(),
                None => self.eval_node(node, &values, feeds, &mut batch)?,
            };
            values[i] = Some(value);
        }
        Ok(fetches
            .iter()
            .map(|f| values[f.index()].clone().expect("fetched node evaluated"))
            .collect())
    }

    fn eval_node(
        &self,
        node: &Node<T>,
        values: &[Option<Tensor<T>>],
        feeds: &FeedDict<T>,
        batch: &mut Option<usize>,
    ) -> Result<Tensor<T>> {
        let arg = |k: usize| -> &Tensor<T> {
            values[node.inputs()[k].index()]
                .as_ref()
                .expect("inputs are evaluated before consumers")
        };
        let floor = self.graph.log_floor();
        let unary = |kind| arg(0).map_unary(kind, floor);
        let binary = |kind| arg(0).binary(kind, arg(1));
        match node.kind() {
            OpKind::Placeholder => {
                let fed = feeds
                    .get(node.id())
                    .ok_or_else(|| Error::MissingFeed(node.name().to_string()))?;
                let bound = node.shape().bind(fed.shape()).ok_or_else(|| {
                    Error::shape(
                        "feed",
                        format!(
                            "`{}` expects {}, got {}",
                            node.name(),
                            node.shape(),
                            fed.shape()
                        ),
                    )
                })?;
                if let Some(n) = bound {
                    match *batch {
                        Some(m) if m != n => {
                            return Err(Error::shape(
                                "feed",
                                format!(
                                    "batch size {n} for `{}` conflicts with {m} bound earlier",
                                    node.name()
                                ),
                            ))
                        }
                        _ => *batch = Some(n),
                    }
                }
                Ok(fed.clone())
            }
            OpKind::Variable => self
                .store
                .get(&node.id())
                .cloned()
                .ok_or(Error::NotInitialized),
            OpKind::Const => Ok(node.value().expect("const nodes carry a value").clone()),
            OpKind::MatMul => arg(0).matmul(arg(1)),
            OpKind::AddRowBroadcast => arg(0).add_row_broadcast(arg(1)),
            OpKind::Sigmoid => unary(UnaryKind::Sigmoid),
            OpKind::Relu => unary(UnaryKind::Relu),
            OpKind::Log => unary(UnaryKind::Log),
            OpKind::Neg => unary(UnaryKind::Neg),
            OpKind::Step => unary(UnaryKind::Step),
            OpKind::Reciprocal => unary(UnaryKind::Reciprocal),
            OpKind::Add => binary(BinaryKind::Add),
            OpKind::Sub => binary(BinaryKind::Sub),
            OpKind::Mul => binary(BinaryKind::Mul),
            OpKind::ReduceSum => Ok(arg(0).reduce_sum()),
            OpKind::Dot => arg(0).dot(arg(1)),
            OpKind::Transpose => arg(0).transpose(),
            OpKind::ColumnSum => arg(0).column_sum(),
            OpKind::Flatten => {
                let a = arg(0);
                a.reshape(&crate::tensor::Shape::vector(a.len()))
            }
            OpKind::BroadcastLike => {
                let s = arg(0).as_scalar().ok_or_else(|| {
                    Error::shape(
                        "broadcast_like",
                        format!("{} is not rank 0", arg(0).shape()),
                    )
                })?;
                Ok(Tensor::filled(arg(1).shape(), s))
            }
            OpKind::ReshapeLike => arg(0).reshape(arg(1).shape()),
            OpKind::ZerosLike => Ok(Tensor::zeros(arg(0).shape())),
        }
    }

    /// One synchronous descent step: the loss and every gradient are computed
    /// from the store as it was at the start of the step, then all variables
    /// are updated. Returns the loss before the update.
    pub fn apply_step(&mut self, step: &TrainStep<T>, feeds: &FeedDict<T>) -> Result<Tensor<T>> {
        Ok(self.apply_step_fetching(step, feeds, &[])?.0)
    }

    /// [`Session::apply_step`] that also returns `extra` fetches, evaluated
    /// against the pre-update store.
    pub fn apply_step_fetching(
        &mut self,
        step: &TrainStep<T>,
        feeds: &FeedDict<T>,
        extra: &[NodeId],
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut fetches = vec![step.loss];
        fetches.extend(step.updates.iter().map(|u| u.gradient));
        fetches.extend_from_slice(extra);
        let mut values = self.run(&fetches, feeds)?.into_iter();
        let loss = values.next().expect("loss fetched");
        let grads: Vec<Tensor<T>> = values.by_ref().take(step.updates.len()).collect();
        let extras = values.collect();

        let mut next = Vec::with_capacity(step.updates.len());
        for (u, grad) in step.updates.iter().zip(&grads) {
            let current = self.store.get(&u.variable).ok_or(Error::NotInitialized)?;
            if current.shape() != grad.shape() {
                return Err(Error::shape(
                    "apply_step",
                    format!("gradient {} for variable {}", grad.shape(), current.shape()),
                ));
            }
            let lr = u.learning_rate;
            let data = current
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&v, &d)| v - lr * d)
                .collect();
            next.push((
                u.variable,
                Tensor::from_shape(current.shape().clone(), data)?,
            ));
        }
        for (id, value) in next {
            self.store.insert(id, value);
        }
        Ok((loss, extras))
    }

    /// Ends the session, returning the final variable store.
    pub fn close(self) -> BTreeMap<NodeId, Tensor<T>> {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeShape;

    fn quadratic(w0: f64) -> (Graph<f64>, NodeId, NodeId) {
        let mut g = Graph::new();
        let w = g
            .add_variable(
                "w",
                NodeShape::known(&[1]).unwrap(),
                InitializerSpec::Explicit(Tensor::vector(vec![w0])),
            )
            .unwrap();
        let loss = g.add_op(OpKind::Dot, &[w, w], "loss").unwrap();
        (g, w, loss)
    }

    #[test]
    fn empty_graph_is_rejected() {
        let g = Graph::<f64>::new();
        assert!(matches!(Session::new(&g, 1), Err(Error::EmptyGraph)));
    }

    #[test]
    fn init_lifecycle() {
        let mut g = Graph::<f64>::new();
        let b = g
            .add_variable("b", NodeShape::known(&[1]).unwrap(), InitializerSpec::Zeros)
            .unwrap();
        let w = g
            .add_variable(
                "W",
                NodeShape::known(&[2, 1]).unwrap(),
                InitializerSpec::normal(0.0, 0.01),
            )
            .unwrap();
        let mut s = Session::new(&g, 42).unwrap();
        assert!(s.variable(b).is_none());
        assert_eq!(s.run(&[b], &FeedDict::new()), Err(Error::NotInitialized));
        s.initialize_variables().unwrap();
        assert_eq!(s.variable(b).unwrap().data(), &[0.0]);
        let wv = s.variable(w).unwrap();
        assert_eq!(wv.dims(), &[2, 1]);
        assert!(wv.data().iter().all(|x| x.abs() < 0.1));
        assert_eq!(s.initialize_variables(), Err(Error::AlreadyInitialized));

        let mut s2 = Session::new(&g, 42).unwrap();
        s2.initialize_variables().unwrap();
        assert_eq!(s2.variable(w), s.variable(w));
        let mut s3 = Session::new(&g, 43).unwrap();
        s3.initialize_variables().unwrap();
        assert_ne!(s3.variable(w), s.variable(w));
    }

    #[test]
    fn fetch_const_and_missing_feed() {
        let mut g = Graph::<f64>::new();
        let c = g.add_const("c", Tensor::scalar(5.0)).unwrap();
        let x = g
            .add_placeholder("x", NodeShape::batched(&[]).unwrap())
            .unwrap();
        let nx = g.add_op(OpKind::Neg, &[x], "nx").unwrap();
        let mut s = Session::new(&g, 0).unwrap();
        s.initialize_variables().unwrap();
        assert_eq!(
            s.run(&[c], &FeedDict::new()).unwrap(),
            vec![Tensor::scalar(5.0)]
        );
        assert_eq!(
            s.run(&[nx], &FeedDict::new()),
            Err(Error::MissingFeed("x".into()))
        );
        let feeds = FeedDict::new().with(c, Tensor::scalar(1.0));
        assert_eq!(s.run(&[c], &feeds), Err(Error::NotAPlaceholder("c".into())));
        let feeds = FeedDict::new().with(x, Tensor::matrix(1, 1, vec![1.0]).unwrap());
        assert!(matches!(
            s.run(&[nx], &feeds),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn inconsistent_batch_bindings_fail() {
        let mut g = Graph::<f64>::new();
        let x = g
            .add_placeholder("x", NodeShape::batched(&[]).unwrap())
            .unwrap();
        let z = g
            .add_placeholder("z", NodeShape::batched(&[]).unwrap())
            .unwrap();
        let d = g.add_op(OpKind::Dot, &[x, z], "d").unwrap();
        let mut s = Session::new(&g, 0).unwrap();
        s.initialize_variables().unwrap();
        let feeds = FeedDict::new()
            .with(x, Tensor::vector(vec![1.0, 2.0]))
            .with(z, Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            s.run(&[d], &feeds),
            Err(Error::ShapeMismatch { op: "feed", .. })
        ));
    }

    #[test]
    fn quadratic_step() {
        let (mut g, w, loss) = quadratic(3.0);
        let step = build_gradient_descent_step(&mut g, loss, 0.1).unwrap();
        assert_eq!(step.updates.len(), 1);
        let mut s = Session::new(&g, 0).unwrap();
        s.initialize_variables().unwrap();
        let before = s.apply_step(&step, &FeedDict::new()).unwrap();
        assert_eq!(before.as_scalar(), Some(9.0));
        assert!((s.variable(w).unwrap().data()[0] - 2.4).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        for lr in [0.05, 0.3, 0.9] {
            let (mut g, _, loss) = quadratic(-4.0);
            let step = build_gradient_descent_step(&mut g, loss, lr).unwrap();
            let mut s = Session::new(&g, 0).unwrap();
            s.initialize_variables().unwrap();
            let mut prev = f64::INFINITY;
            for _ in 0..30 {
                let l = s
                    .apply_step(&step, &FeedDict::new())
                    .unwrap()
                    .as_scalar()
                    .unwrap();
                assert!(l < prev || l == 0.0);
                prev = l;
            }
        }
    }

    #[test]
    fn run_does_not_mutate() {
        let (g, w, loss) = quadratic(2.0);
        let mut s = Session::new(&g, 0).unwrap();
        s.initialize_variables().unwrap();
        let a = s.run(&[loss, w], &FeedDict::new()).unwrap();
        let b = s.run(&[loss, w], &FeedDict::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_construction_errors() {
        let mut g = Graph::<f64>::new();
        let c = g.add_const("c", Tensor::scalar(1.0)).unwrap();
        assert_eq!(
            build_gradient_descent_step(&mut g, c, 0.1),
            Err(Error::NoTrainableVariables)
        );
        let (mut g, w, loss) = quadratic(1.0);
        assert_eq!(
            build_gradient_descent_step(&mut g, w, 0.1),
            Err(Error::NotScalarLoss(w))
        );
        assert!(matches!(
            build_gradient_descent_step(&mut g, loss, 0.0),
            Err(Error::InvalidLearningRate(_))
        ));
    }

    #[test]
    fn independent_variable_gets_zero_gradient() {
        let (mut g, _, loss) = quadratic(1.0);
        let v = g
            .add_variable("v", NodeShape::known(&[2]).unwrap(), InitializerSpec::Zeros)
            .unwrap();
        let step = build_gradient_descent_step(&mut g, loss, 0.1).unwrap();
        let upd = step.updates.iter().find(|u| u.variable == v).unwrap();
        let node = g.node(upd.gradient).unwrap();
        assert_eq!(node.value(), Some(&Tensor::vector(vec![0.0, 0.0])));
    }

    #[test]
    fn set_variable_checks() {
        let (g, w, loss) = quadratic(1.0);
        let mut s = Session::new(&g, 0).unwrap();
        s.initialize_variables().unwrap();
        assert!(s.set_variable(w, Tensor::vector(vec![1.0, 2.0])).is_err());
        assert!(matches!(
            s.set_variable(loss, Tensor::scalar(1.0)),
            Err(Error::NotAVariable(_))
        ));
        s.set_variable(w, Tensor::vector(vec![5.0])).unwrap();
        assert_eq!(s.close()[&w].data(), &[5.0]);
    }
}
