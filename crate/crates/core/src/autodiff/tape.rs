use std::collections::BTreeMap;
use std::fmt;

use super::ops::Axis;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Whether the tape is recording for a training step or a plain evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied by the implementation.
pub trait CustomOp<F: Scalar> {
    fn name(&self) -> &'static str;

    /// Adjoints for every parent, in parent order.
    fn backward(
        &self,
        parents: &[&Tensor<F>],
        value: &Tensor<F>,
        adjoint: &Tensor<F>,
    ) -> Result<Vec<Tensor<F>>>;
}

/// Operation kind recorded with each node, with whatever the backward pass needs.
pub enum Op<F: Scalar> {
    Input,
    Variable,
    Param(ParamId),
    MatMul { ta: bool, tb: bool },
    Add,
    AddRow,
    Sub,
    Mul,
    Scale(F),
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax(Axis),
    MaxReduce { axis: Axis, argmax: Vec<usize> },
    Sum,
    ConcatCols,
    ConcatRows,
    Transpose,
    SliceRows { start: usize },
    SliceCols { start: usize },
    GatherRows { indices: Vec<usize> },
    Reshape,
    CrossEntropy {
        targets: Vec<usize>,
        weights: Vec<F>,
        probs: Tensor<F>,
    },
    StraightThrough,
    Custom(Box<dyn CustomOp<F>>),
}

impl<F: Scalar> Op<F> {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::AddRow => "add-row",
            Op::Sub => "sub",
            Op::Mul => "elementwise-mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softmax(_) => "softmax",
            Op::MaxReduce { .. } => "max-reduce",
            Op::Sum => "sum",
            Op::ConcatCols => "concat-columns",
            Op::ConcatRows => "concat-rows",
            Op::Transpose => "transpose",
            Op::SliceRows { .. } => "slice-rows",
            Op::SliceCols { .. } => "slice-columns",
            Op::GatherRows { .. } => "embedding-gather",
            Op::Reshape => "reshape",
            Op::CrossEntropy { .. } => "cross-entropy-from-logits",
            Op::StraightThrough => "straight-through",
            Op::Custom(c) => c.name(),
        }
    }
}

impl<F: Scalar> fmt::Debug for Op<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

/// One recorded operation.
#[derive(Debug)]
pub struct GraphNode<F: Scalar> {
    pub id: NodeId,
    pub op: Op<F>,
    pub parents: Vec<NodeId>,
    pub value: Tensor<F>,
    pub(crate) requires_grad: bool,
}

/// Append-only operation record.
pub struct Tape<F: Scalar> {
    pub(crate) nodes: Vec<GraphNode<F>>,
    mode: Mode,
    param_nodes: BTreeMap<ParamId, NodeId>,
}

/// Result of a backward pass: gradients of the loss for every parameter and
/// variable node that the loss depends on (zeros for the ones it does not).
#[derive(Debug)]
pub struct Gradients<F> {
    params: BTreeMap<ParamId, Tensor<F>>,
    variables: BTreeMap<NodeId, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn variable(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.variables.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<F>> {
        self.params
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            param_nodes: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &GraphNode<F> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Records a node. Parents must already be on the tape and the value must be finite.
    pub fn forward_node(&mut self, op: Op<F>, parents: Vec<NodeId>, value: Tensor<F>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        debug_assert!(parents.iter().all(|p| p.0 < id.0));
        if !value.all_finite() {
            return Err(Error::NonFiniteValue {
                node: id.0,
                op: op.kind(),
            });
        }
        let requires_grad = match op {
            Op::Variable | Op::Param(_) => true,
            Op::Input => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(GraphNode {
            id,
            op,
            parents,
            value,
            requires_grad,
        });
        Ok(id)
    }

    /// A constant with no gradient.
    pub fn input(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.forward_node(Op::Input, Vec::new(), value)
    }

    /// A free leaf whose gradient is reported in [`Gradients::variable`].
    pub fn variable(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.forward_node(Op::Variable, Vec::new(), value)
    }

    /// The node holding parameter `id`, copied in on first use.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = NodeId(self.nodes.len());
        self.nodes.push(GraphNode {
            id: n,
            op: Op::Param(id),
            parents: Vec::new(),
            value: store.get(id).clone(),
            requires_grad: true,
        });
        self.param_nodes.insert(id, n);
        n
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        self.backward_seeded(loss, F::one())
    }

    /// Backward with the loss adjoint seeded to `seed` instead of one.
    pub fn backward_seeded(&self, loss: NodeId, seed: F) -> Result<Gradients<F>> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adjoints: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        adjoints[loss.0] = Some(Tensor::filled(loss_value.shape(), seed));
        let mut grads = Gradients {
            params: BTreeMap::new(),
            variables: BTreeMap::new(),
        };

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            if !adj.all_finite() {
                return Err(Error::NonFiniteAdjoint {
                    node: idx,
                    op: node.op.kind(),
                });
            }
            match node.op {
                Op::Param(pid) => {
                    grads.params.insert(pid, adj);
                    continue;
                }
                Op::Variable => {
                    grads.variables.insert(node.id, adj);
                    continue;
                }
                Op::Input => continue,
                _ => {}
            }
            if !node.requires_grad {
                continue;
            }
            if self.accumulate_in_place(node, &adj, &mut adjoints)? {
                continue;
            }
            let parent_grads = self.local_backward(node, &adj)?;
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match &mut adjoints[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        // Leaves the loss does not depend on still get an explicit zero gradient.
        for node in &self.nodes[..=loss.0] {
            match node.op {
                Op::Param(pid) => {
                    grads
                        .params
                        .entry(pid)
                        .or_insert_with(|| Tensor::zeros(node.value.shape()));
                }
                Op::Variable => {
                    grads
                        .variables
                        .entry(node.id)
                        .or_insert_with(|| Tensor::zeros(node.value.shape()));
                }
                _ => {}
            }
        }
        Ok(grads)
    }
}
