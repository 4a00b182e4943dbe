use thiserror::Error;

use crate::graph::{NodeId, OpKind};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("duplicate node name `{0}`")]
    DuplicateName(String),

    #[error("{kind} expects {expected} input(s), got {got}")]
    ArityError {
        kind: OpKind,
        expected: usize,
        got: usize,
    },

    #[error("unknown input node {0}")]
    UnknownInput(NodeId),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("loss node {0} is not a scalar")]
    NotScalarLoss(NodeId),

    #[error("{0} has no gradient rule")]
    NonDifferentiableKind(OpKind),

    #[error("loss depends on gradient node {0}; higher-order gradients are unsupported")]
    HigherOrderUnsupported(NodeId),

    #[error("invalid initializer: {0}")]
    InvalidInitializer(String),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("variables are already initialized")]
    AlreadyInitialized,

    #[error("variables are not initialized")]
    NotInitialized,

    #[error("missing feed for placeholder `{0}`")]
    MissingFeed(String),

    #[error("node `{0}` is not a placeholder and cannot be fed")]
    NotAPlaceholder(String),

    #[error("node `{0}` is not a variable")]
    NotAVariable(String),

    #[error("graph has no trainable variables")]
    NoTrainableVariables,

    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
