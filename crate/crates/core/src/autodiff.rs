//! Reverse-mode differentiation by graph extension.
//!
//! [`gradients`] walks backward from a scalar loss and appends ordinary graph
//! nodes that compute each adjoint, so evaluating a gradient is just another
//! fetch. Nodes appended here are tagged as backward nodes; differentiating
//! through them again is rejected.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, OpKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward node to the node holding d(loss)/d(node).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdjointMap {
    entries: BTreeMap<NodeId, NodeId>,
}

impl AdjointMap {
    pub fn get(&self, forward: NodeId) -> Option<NodeId> {
        self.entries.get(&forward).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

/// Appends adjoint nodes for `loss` and returns one per target, in target
/// order.
pub fn gradients<T: Scalar>(
    g: &mut Graph<T>,
    loss: NodeId,
    targets: &[NodeId],
) -> Result<Vec<NodeId>> {
    let map = adjoints(g, loss, targets)?;
    Ok(targets
        .iter()
        .map(|t| map.get(*t).expect("every target receives an adjoint"))
        .collect())
}

/// Like [`gradients`], but returns the whole adjoint map: every node on a
/// path from a target to the loss, plus the targets themselves.
pub fn adjoints<T: Scalar>(
    g: &mut Graph<T>,
    loss: NodeId,
    targets: &[NodeId],
) -> Result<AdjointMap> {
    if g.node(loss)?.shape().rank() != 0 {
        return Err(Error::NotScalarLoss(loss));
    }
    for &t in targets {
        g.node(t)?;
    }
    let on_loss_path = g.ancestors(&[loss])?;
    if let Some(n) = g
        .nodes()
        .iter()
        .find(|n| on_loss_path[n.id().index()] && n.is_backward())
    {
        return Err(Error::HigherOrderUnsupported(n.id()));
    }

    g.set_building_backward(true);
    let result = build_adjoints(g, loss, targets, &on_loss_path);
    g.set_building_backward(false);
    result
}

fn build_adjoints<T: Scalar>(
    g: &mut Graph<T>,
    loss: NodeId,
    targets: &[NodeId],
    on_loss_path: &[bool],
) -> Result<AdjointMap> {
    let forward_len = g.len();

    // reaches[i]: node i is a target or depends on one.
    let mut reaches = vec![false; forward_len];
    for &t in targets {
        reaches[t.index()] = true;
    }
    for n in g.nodes() {
        if n.inputs().iter().any(|i| reaches[i.index()]) {
            reaches[n.id().index()] = true;
        }
    }

    let mut map = AdjointMap::default();
    let mut pending: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); forward_len];

    for idx in (0..=loss.index()).rev() {
        if !on_loss_path[idx] || !reaches[idx] {
            continue;
        }
        let id = g.nodes()[idx].id();
        let adjoint = if id == loss {
            let name = g.fresh_name("grad/seed");
            g.add_const(&name, Tensor::scalar(T::one()))?
        } else {
            let mut contributions = std::mem::take(&mut pending[idx]);
            if contributions.is_empty() {
                continue;
            }
            contributions.sort_by_key(|&(consumer, _)| consumer);
            let mut acc = contributions[0].1;
            for &(_, c) in &contributions[1..] {
                acc = emit(g, OpKind::Add, &[acc, c])?;
            }
            acc
        };
        map.entries.insert(id, adjoint);

        let node = &g.nodes()[idx];
        if node.kind().is_source() {
            continue;
        }
        let needed: Vec<bool> = node.inputs().iter().map(|i| reaches[i.index()]).collect();
        let inputs = node.inputs().to_vec();
        let parts = vjp_rule(g, id, adjoint, &needed)?;
        for (input, part) in inputs.into_iter().zip(parts) {
            if let Some(part) = part {
                pending[input.index()].push((id, part));
            }
        }
    }

    for &t in targets {
        if map.get(t).is_some() {
            continue;
        }
        let zero = match g.node(t)?.shape().to_concrete() {
            Some(shape) => {
                let name = g.fresh_name("grad/zeros");
                g.add_const(&name, Tensor::zeros(&shape))?
            }
            None => emit(g, OpKind::ZerosLike, &[t])?,
        };
        map.entries.insert(t, zero);
    }
    Ok(map)
}

fn emit<T: Scalar>(g: &mut Graph<T>, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
    let name = g.fresh_name(&format!("grad/{}", kind.name()));
    g.add_op(kind, inputs, &name)
}

/// Sums a contribution back down to rank 0 when the input was a broadcast
/// scalar.
fn unbroadcast<T: Scalar>(g: &mut Graph<T>, input: NodeId, part: NodeId) -> Result<NodeId> {
    if g.node(input)?.shape().rank() == 0 && g.node(part)?.shape().rank() != 0 {
        emit(g, OpKind::ReduceSum, &[part])
    } else {
        Ok(part)
    }
}

/// Vector-Jacobian product of one node: given the adjoint `upstream` of
/// `node`'s output, appends nodes for the contribution to each input's
/// adjoint. Inputs whose `needed` flag is false get `None`.
pub fn vjp_rule<T: Scalar>(
    g: &mut Graph<T>,
    node: NodeId,
    upstream: NodeId,
    needed: &[bool],
) -> Result<Vec<Option<NodeId>>> {
    let n = g.node(node)?;
    let kind = n.kind();
    let inputs = n.inputs().to_vec();
    let want = |k: usize| needed.get(k).copied().unwrap_or(true);
    let mut out = vec![None; inputs.len()];

    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if want(0) {
                let bt = emit(g, OpKind::Transpose, &[b])?;
                out[0] = Some(emit(g, OpKind::MatMul, &[upstream, bt])?);
            }
            if want(1) {
                let at = emit(g, OpKind::Transpose, &[a])?;
                out[1] = Some(emit(g, OpKind::MatMul, &[at, upstream])?);
            }
        }
        OpKind::AddRowBroadcast => {
            if want(0) {
                out[0] = Some(upstream);
            }
            if want(1) {
                out[1] = Some(emit(g, OpKind::ColumnSum, &[upstream])?);
            }
        }
        OpKind::Sigmoid => {
            let name = g.fresh_name("grad/one");
            let one = g.add_const(&name, Tensor::scalar(T::one()))?;
            let complement = emit(g, OpKind::Sub, &[one, node])?;
            let slope = emit(g, OpKind::Mul, &[node, complement])?;
            out[0] = Some(emit(g, OpKind::Mul, &[upstream, slope])?);
        }
        OpKind::Relu => {
            let step = emit(g, OpKind::Step, &[inputs[0]])?;
            out[0] = Some(emit(g, OpKind::Mul, &[upstream, step])?);
        }
        OpKind::Log => {
            let recip = emit(g, OpKind::Reciprocal, &[inputs[0]])?;
            out[0] = Some(emit(g, OpKind::Mul, &[upstream, recip])?);
        }
        OpKind::Neg => {
            out[0] = Some(emit(g, OpKind::Neg, &[upstream])?);
        }
        OpKind::Add | OpKind::Sub => {
            if want(0) {
                out[0] = Some(unbroadcast(g, inputs[0], upstream)?);
            }
            if want(1) {
                let part = if kind == OpKind::Sub {
                    emit(g, OpKind::Neg, &[upstream])?
                } else {
                    upstream
                };
                out[1] = Some(unbroadcast(g, inputs[1], part)?);
            }
        }
        OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if want(0) {
                let part = emit(g, OpKind::Mul, &[upstream, b])?;
                out[0] = Some(unbroadcast(g, a, part)?);
            }
            if want(1) {
                let part = emit(g, OpKind::Mul, &[upstream, a])?;
                out[1] = Some(unbroadcast(g, b, part)?);
            }
        }
        OpKind::ReduceSum => {
            out[0] = Some(emit(g, OpKind::BroadcastLike, &[upstream, inputs[0]])?);
        }
        OpKind::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            if want(0) {
                out[0] = Some(emit(g, OpKind::Mul, &[upstream, b])?);
            }
            if want(1) {
                out[1] = Some(emit(g, OpKind::Mul, &[upstream, a])?);
            }
        }
        OpKind::Flatten => {
            out[0] = Some(emit(g, OpKind::ReshapeLike, &[upstream, inputs[0]])?);
        }
        OpKind::Placeholder
        | OpKind::Variable
        | OpKind::Const
        | OpKind::Transpose
        | OpKind::ColumnSum
        | OpKind::Step
        | OpKind::Reciprocal
        | OpKind::BroadcastLike
        | OpKind::ReshapeLike
        | OpKind::ZerosLike => return Err(Error::NonDifferentiableKind(kind)),
    }
    Ok(out)
}
