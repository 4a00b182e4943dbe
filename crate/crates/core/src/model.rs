//! Binary logistic-regression classifier on two features, built twice: as a
//! dataflow graph trained through a [`Session`](crate::runtime::Session),
//! and as direct closed-form procedures that serve as a reference.
//!
//! Loss is the summed (not averaged) negative log-likelihood
//! `E = -sum_i [z_i ln y_i + (1 - z_i) ln(1 - y_i)]` with `y = sigmoid(X W + b)`.
//! Logs clamp their argument at the graph's log floor (1e-12 by default).

use crate::error::{Error, Result};
use crate::graph::{Graph, InitializerSpec, NodeId, NodeShape, OpKind};
use crate::runtime::{build_gradient_descent_step, FeedDict, TrainStep};
use crate::scalar::{Scalar, DEFAULT_LOG_FLOOR};
use crate::tensor::{Shape, Tensor};

/// Number of nodes in the forward classifier graph.
pub const FORWARD_NODE_COUNT: usize = 17;
/// Number of input references (DOT edges) in the forward classifier graph.
pub const FORWARD_EDGE_COUNT: usize = 19;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T> {
    /// Shape `[2, 1]`.
    pub weights: Tensor<T>,
    /// Shape `[1]`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn new(w0: T, w1: T, b: T) -> Self {
        ClassifierParams {
            weights: Tensor::matrix(2, 1, vec![w0, w1]).expect("2x1"),
            bias: Tensor::vector(vec![b]),
        }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_tensors(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.dims() != [2, 1] || bias.dims() != [1] {
            return Err(Error::shape(
                "classifier_params",
                format!(
                    "need W [2, 1] and b [1], got {} and {}",
                    weights.shape(),
                    bias.shape()
                ),
            ));
        }
        Ok(ClassifierParams { weights, bias })
    }

    /// `[w0, w1, b]`.
    pub fn flat(&self) -> [T; 3] {
        let w = self.weights.data();
        [w[0], w[1], self.bias.data()[0]]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.flat()
            .iter()
            .zip(other.flat())
            .map(|(&a, b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Initializers for the two classifier variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierInit<T> {
    pub weights: InitializerSpec<T>,
    pub bias: InitializerSpec<T>,
}

impl<T: Scalar> ClassifierInit<T> {
    /// Both variables drawn from `N(0, stddev^2)`.
    pub fn normal(stddev: T) -> Self {
        ClassifierInit {
            weights: InitializerSpec::normal(T::zero(), stddev),
            bias: InitializerSpec::normal(T::zero(), stddev),
        }
    }

    pub fn zeros() -> Self {
        ClassifierInit {
            weights: InitializerSpec::Zeros,
            bias: InitializerSpec::Zeros,
        }
    }

    pub fn explicit(params: &ClassifierParams<T>) -> Self {
        ClassifierInit {
            weights: InitializerSpec::Explicit(params.weights.clone()),
            bias: InitializerSpec::Explicit(params.bias.clone()),
        }
    }
}

impl<T: Scalar> Default for ClassifierInit<T> {
    fn default() -> Self {
        Self::normal(T::lit(0.01))
    }
}

/// Handles to the forward nodes of the classifier graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierNodes {
    /// Features, `[?, 2]`.
    pub x: NodeId,
    /// Labels, `[?]`.
    pub z: NodeId,
    pub w: NodeId,
    pub b: NodeId,
    /// Predictions, `[?, 1]`.
    pub y: NodeId,
    /// Summed cross-entropy, rank 0.
    pub loss: NodeId,
}

impl ClassifierNodes {
    pub fn feeds<T: Scalar>(&self, x: &Tensor<T>, z: &Tensor<T>) -> FeedDict<T> {
        FeedDict::new()
            .with(self.x, x.clone())
            .with(self.z, z.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelGraph<T> {
    pub nodes: ClassifierNodes,
    pub step: TrainStep<T>,
}

/// Builds the forward graph only: prediction and loss, no gradient nodes.
pub fn build_classifier_forward<T: Scalar>(
    init: ClassifierInit<T>,
) -> Result<(Graph<T>, ClassifierNodes)> {
    let mut g = Graph::new();
    let x = g.add_placeholder("X", NodeShape::batched(&[2])?)?;
    let z = g.add_placeholder("Z", NodeShape::batched(&[])?)?;
    let w = g.add_variable("W", NodeShape::known(&[2, 1])?, init.weights)?;
    let b = g.add_variable("b", NodeShape::known(&[1])?, init.bias)?;

    let xw = g.add_op(OpKind::MatMul, &[x, w], "XW")?;
    let logits = g.add_op(OpKind::AddRowBroadcast, &[xw, b], "logits")?;
    let y = g.add_op(OpKind::Sigmoid, &[logits], "Y")?;
    let y_flat = g.add_op(OpKind::Flatten, &[y], "y")?;

    let log_y = g.add_op(OpKind::Log, &[y_flat], "log_y")?;
    let one = g.add_const("one", Tensor::scalar(T::one()))?;
    let not_z = g.add_op(OpKind::Sub, &[one, z], "1-Z")?;
    let not_y = g.add_op(OpKind::Sub, &[one, y_flat], "1-y")?;
    let log_not_y = g.add_op(OpKind::Log, &[not_y], "log_1-y")?;
    let pos = g.add_op(OpKind::Dot, &[z, log_y], "Z.log_y")?;
    let neg = g.add_op(OpKind::Dot, &[not_z, log_not_y], "(1-Z).log_1-y")?;
    let neg_pos = g.add_op(OpKind::Neg, &[pos], "-Z.log_y")?;
    let loss = g.add_op(OpKind::Sub, &[neg_pos, neg], "E")?;

    Ok((
        g,
        ClassifierNodes {
            x,
            z,
            w,
            b,
            y,
            loss,
        },
    ))
}

/// Forward graph plus a gradient-descent step over `W` and `b`.
pub fn build_linear_classifier<T: Scalar>(
    learning_rate: T,
    init: ClassifierInit<T>,
) -> Result<(Graph<T>, LinearModelGraph<T>)> {
    let (mut g, nodes) = build_classifier_forward(init)?;
    let step = build_gradient_descent_step(&mut g, nodes.loss, learning_rate)?;
    Ok((g, LinearModelGraph { nodes, step }))
}

fn check_features<T: Scalar>(x: &Tensor<T>) -> Result<usize> {
    match *x.dims() {
        [n, 2] => Ok(n),
        _ => Err(Error::shape(
            "classifier",
            format!("features must be [n, 2], got {}", x.shape()),
        )),
    }
}

fn check_labels<T: Scalar>(z: &Tensor<T>, n: usize) -> Result<()> {
    if z.dims() != [n] {
        return Err(Error::shape(
            "classifier",
            format!("labels must be [{n}], got {}", z.shape()),
        ));
    }
    Ok(())
}

fn check_params<T: Scalar>(p: &ClassifierParams<T>) -> Result<()> {
    ClassifierParams::from_tensors(p.weights.clone(), p.bias.clone()).map(|_| ())
}

/// `x_i . W + b` per row.
pub fn ref_logits<T: Scalar>(x: &Tensor<T>, p: &ClassifierParams<T>) -> Result<Vec<T>> {
    let n = check_features(x)?;
    check_params(p)?;
    let [w0, w1, b] = p.flat();
    Ok((0..n)
        .map(|i| x.at(i, 0) * w0 + x.at(i, 1) * w1 + b)
        .collect())
}

/// Predicted probabilities `1 / (1 + e^-(x_i . W + b))`, one per row.
pub fn ref_predict<T: Scalar>(x: &Tensor<T>, p: &ClassifierParams<T>) -> Result<Tensor<T>> {
    let one = T::one();
    Ok(Tensor::vector(
        ref_logits(x, p)?
            .into_iter()
            .map(|a| one / (one + (-a).exp()))
            .collect(),
    ))
}

pub fn ref_loss<T: Scalar>(x: &Tensor<T>, z: &Tensor<T>, p: &ClassifierParams<T>) -> Result<T> {
    let y = ref_predict(x, p)?;
    check_labels(z, y.len())?;
    let floor = T::lit(DEFAULT_LOG_FLOOR);
    let one = T::one();
    let ll = y
        .data()
        .iter()
        .zip(z.data())
        .fold(T::zero(), |acc, (&yi, &zi)| {
            acc + zi * yi.max(floor).ln() + (one - zi) * (one - yi).max(floor).ln()
        });
    Ok(-ll)
}

/// Closed-form gradient of the loss: `dW = X^T (Y - Z)`, `db = sum(Y - Z)`.
pub fn ref_gradient<T: Scalar>(
    x: &Tensor<T>,
    z: &Tensor<T>,
    p: &ClassifierParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let y = ref_predict(x, p)?;
    check_labels(z, y.len())?;
    let (mut dw0, mut dw1, mut db) = (T::zero(), T::zero(), T::zero());
    for (i, (&yi, &zi)) in y.data().iter().zip(z.data()).enumerate() {
        let r = yi - zi;
        dw0 = dw0 + x.at(i, 0) * r;
        dw1 = dw1 + x.at(i, 1) * r;
        db = db + r;
    }
    Ok((
        Tensor::matrix(2, 1, vec![dw0, dw1])?,
        Tensor::vector(vec![db]),
    ))
}

/// Full-batch gradient descent. The trace holds the loss before each update.
pub fn ref_train<T: Scalar>(
    x: &Tensor<T>,
    z: &Tensor<T>,
    epochs: usize,
    learning_rate: T,
    start: ClassifierParams<T>,
) -> Result<(ClassifierParams<T>, Vec<T>)> {
    let mut p = start;
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        trace.push(ref_loss(x, z, &p)?);
        let (dw, db) = ref_gradient(x, z, &p)?;
        let w = p
            .weights
            .data()
            .iter()
            .zip(dw.data())
            .map(|(&w, &g)| w - learning_rate * g)
            .collect();
        let b = p.bias.data()[0] - learning_rate * db.data()[0];
        p = ClassifierParams {
            weights: Tensor::matrix(2, 1, w)?,
            bias: Tensor::vector(vec![b]),
        };
    }
    Ok((p, trace))
}

/// Class decisions from probabilities: 1 iff `y >= 0.5`.
pub fn classify<T: Scalar>(y: &[T]) -> Vec<bool> {
    let half = T::lit(0.5);
    y.iter().map(|&v| v >= half).collect()
}

/// Features as an `[n, 2]` tensor from pairs.
pub fn features<T: Scalar>(rows: &[[T; 2]]) -> Tensor<T> {
    let data = rows.iter().flatten().copied().collect();
    Tensor::from_shape(Shape::matrix(rows.len(), 2), data).expect("n x 2")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Session;

    fn square() -> (Tensor<f64>, Tensor<f64>) {
        let x = features(&[[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]);
        (x, Tensor::vector(vec![1.0, 0.0, 1.0, 0.0]))
    }

    #[test]
    fn graph_names_and_counts() {
        let (g, m) = build_classifier_forward::<f64>(ClassifierInit::default()).unwrap();
        assert_eq!(g.find("X"), Some(m.x));
        assert_eq!(g.find("Z"), Some(m.z));
        assert_eq!(g.find("W"), Some(m.w));
        assert_eq!(g.find("b"), Some(m.b));
        assert_eq!(g.len(), FORWARD_NODE_COUNT);
        let edges: usize = g.nodes().iter().map(|n| n.inputs().len()).sum();
        assert_eq!(edges, FORWARD_EDGE_COUNT);
        assert_eq!(g.node(m.y).unwrap().shape().to_string(), "[?, 1]");
        assert_eq!(g.node(m.loss).unwrap().shape().rank(), 0);
    }

    #[test]
    fn step_covers_both_variables() {
        let (_, m) = build_linear_classifier::<f64>(0.01, ClassifierInit::default()).unwrap();
        let vars: Vec<_> = m.step.updates.iter().map(|u| u.variable).collect();
        assert_eq!(vars, vec![m.nodes.w, m.nodes.b]);
        assert!(build_linear_classifier::<f64>(-1.0, ClassifierInit::default()).is_err());
    }

    #[test]
    fn zero_params_predict_half() {
        let (x, z) = square();
        let y = ref_predict(&x, &ClassifierParams::zeros()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));

        let (g, m) = build_classifier_forward(ClassifierInit::zeros()).unwrap();
        let mut s = Session::new(&g, 0).unwrap();
        s.initialize_variables().unwrap();
        let out = s.run(&[m.y, m.loss], &m.feeds(&x, &z)).unwrap();
        assert!(out[0].data().iter().all(|&v| v == 0.5));
        assert!((out[1].as_scalar().unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_bias() {
        let (x, _) = square();
        let y = ref_predict(&x, &ClassifierParams::new(0.0, 0.0, 100.0)).unwrap();
        assert!(y.data().iter().all(|&v| v > 1.0 - 1e-12));
    }

    #[test]
    fn loss_cases() {
        let x = features(&[[0.0, 0.0]]);
        let l = ref_loss(&x, &Tensor::vector(vec![1.0]), &ClassifierParams::zeros()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        // confident and correct: clamped, still ~0
        let l = ref_loss(
            &x,
            &Tensor::vector(vec![1.0]),
            &ClassifierParams::new(0.0, 0.0, 800.0),
        )
        .unwrap();
        assert!(l >= 0.0 && l <= -(1.0 - 1e-12f64).ln() + 1e-15);
        // confident and wrong: clamped at -ln(1e-12)
        let l = ref_loss(
            &x,
            &Tensor::vector(vec![0.0]),
            &ClassifierParams::new(0.0, 0.0, 800.0),
        )
        .unwrap();
        assert!((l + (1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn gradient_cases() {
        let (x, z) = square();
        let (_, db) = ref_gradient(&x, &z, &ClassifierParams::zeros()).unwrap();
        assert_eq!(db.data(), &[0.0]);

        let x = features(&[[1.0, 0.0]]);
        let (dw, db) =
            ref_gradient(&x, &Tensor::vector(vec![1.0]), &ClassifierParams::zeros()).unwrap();
        assert_eq!(dw.data(), &[-0.5, 0.0]);
        assert_eq!(db.data(), &[-0.5]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(ref_predict(&x, &ClassifierParams::zeros()).is_err());
        let (x, _) = square();
        assert!(ref_loss(&x, &Tensor::vector(vec![1.0]), &ClassifierParams::zeros()).is_err());
        assert!(ClassifierParams::from_tensors(
            Tensor::vector(vec![1.0, 2.0]),
            Tensor::vector(vec![0.0])
        )
        .is_err());
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (x, z) = square();
        let start = ClassifierParams::new(0.3, -0.2, 0.1);
        let (p, trace) = ref_train(&x, &z, 5, 0.0, start.clone()).unwrap();
        assert_eq!(p, start);
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }
}
