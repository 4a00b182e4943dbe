//! A small static-dataflow-graph engine.
//!
//! Graphs are built once from placeholders, variables, constants and
//! operation nodes, extended with reverse-mode gradient nodes by
//! [`autodiff::gradients`], and executed by a [`runtime::Session`] that owns
//! variable state and applies gradient-descent steps.
//!
//! ```
//! use tinyflow::{ClassifierInit, FeedDict, Session64, Tensor64};
//! use tinyflow::model::{build_linear_classifier, features};
//!
//! let (graph, model) = build_linear_classifier(0.1, ClassifierInit::zeros()).unwrap();
//! let x = features(&[[1.0, 2.0], [-1.0, -2.0]]);
//! let z = Tensor64::vector(vec![1.0, 0.0]);
//! let feeds: FeedDict<f64> = model.nodes.feeds(&x, &z);
//!
//! let mut session = Session64::new(&graph, 42).unwrap();
//! session.initialize_variables().unwrap();
//! let before = session.apply_step(&model.step, &feeds).unwrap();
//! let after = session.run(&[model.nodes.loss], &feeds).unwrap();
//! assert!(after[0].as_scalar().unwrap() < before.as_scalar().unwrap());
//! ```
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the element type.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod model;
pub mod runtime;
pub mod scalar;
pub mod tensor;

pub use autodiff::{adjoints, gradients, AdjointMap};
pub use error::{Error, Result};
pub use graph::{Dim, InitializerSpec, Node, NodeId, NodeShape, OpKind};
pub use model::{ClassifierInit, ClassifierNodes, ClassifierParams, LinearModelGraph};
pub use runtime::{build_gradient_descent_step, FeedDict, TrainStep, Update};
pub use scalar::{Scalar, DEFAULT_LOG_FLOOR};
pub use tensor::{BinaryKind, Shape, UnaryKind};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Session64<'g> = runtime::Session<'g, f64>;
pub type Session32<'g> = runtime::Session<'g, f32>;
pub type Params64 = model::ClassifierParams<f64>;
pub type Params32 = model::ClassifierParams<f32>;
