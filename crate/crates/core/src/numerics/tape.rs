//! Reverse-mode differentiation by operation recording.
//!
//! Every primitive evaluates eagerly and appends a node holding its output
//! value, its operand nodes, and a [`Backward`] rule. [`Tape::backward`] walks
//! the nodes in exact reverse order of recording, so a node's gradient is
//! complete before its rule runs.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    node: usize,
    tape: u64,
}

/// Operand values and upstream gradient handed to a [`Backward`] rule.
pub struct BackwardCtx<'a, T: Scalar> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether each operand needs a gradient; rules may return `None` where false.
    pub needs: Vec<bool>,
}

/// Vector-Jacobian product of one primitive.
pub trait Backward<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// One entry per operand, shaped like that operand.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Source<T: Scalar> {
    Leaf,
    Param(ParamId),
    Op(Box<dyn Backward<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    source: Source<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    flops: u64,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients<T: Scalar> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`, if it was reached.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.node).and_then(|g| g.as_ref())
    }

    /// Node indices of the operations whose rules ran, in visit order.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floating-point operations executed by recorded primitives so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var {
            node: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    /// A constant: gradients are never propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            source: Source::Leaf,
            requires_grad: false,
        })
    }

    /// A differentiable leaf whose gradient is reported in [`Gradients`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            source: Source::Leaf,
            requires_grad: true,
        })
    }

    /// Snapshot of a parameter value; backward accumulates into its `grad`.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        let p = params.get(id);
        self.push(Node {
            value: p.value.clone(),
            inputs: Vec::new(),
            source: Source::Param(id),
            requires_grad: p.trainable,
        })
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.node >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.node)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor<T>> {
        let i = self.check(var)?;
        Ok(&self.nodes[i].value)
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool> {
        let i = self.check(var)?;
        Ok(self.nodes[i].requires_grad)
    }

    /// Appends the result of a primitive evaluated by the caller.
    pub fn record(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        flops: u64,
        op: impl Backward<T> + 'static,
    ) -> Result<Var> {
        let mut idx = Vec::with_capacity(inputs.len());
        let mut requires_grad = false;
        for &v in inputs {
            let i = self.check(v)?;
            requires_grad |= self.nodes[i].requires_grad;
            idx.push(i);
        }
        self.flops += flops;
        Ok(self.push(Node {
            value,
            inputs: idx,
            source: Source::Op(Box::new(op)),
            requires_grad,
        }))
    }

    /// Backpropagates from a single-element `loss`, accumulating into the
    /// gradients of trainable parameters in `params`.
    ///
    /// The tape is left intact, so calling this twice accumulates twice.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        let grads = self.backward_inner(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.node + 1) {
            if let (Source::Param(id), Some(g)) = (&node.source, &grads.grads[i]) {
                if id.0 >= params.len() {
                    return Err(Error::InvalidConfig(format!(
                        "tape references parameter #{} but the set has {}",
                        id.0,
                        params.len()
                    )));
                }
                let p = params.get_mut(*id);
                if p.trainable {
                    if p.grad.shape() != g.shape() {
                        return Err(Error::shape("backward", p.grad.shape(), g.shape()));
                    }
                    p.grad.accumulate(g);
                }
            }
        }
        Ok(grads)
    }

    /// Backpropagation without parameter accumulation, for leaf gradients only.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_inner(loss)
    }

    fn backward_inner(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.check(loss)?;
        let root_value = &self.nodes[root].value;
        if root_value.numel() != 1 {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[root] = Some(root_value.ones_like());

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let Source::Op(op) = &node.source else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            visited.push(i);
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|&j| &self.nodes[j].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .inputs
                    .iter()
                    .map(|&j| self.nodes[j].requires_grad)
                    .collect(),
            };
            let input_grads = op.backward(&ctx)?;
            for (&j, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                if g.shape() != self.nodes[j].value.shape() {
                    return Err(Error::shape(op.name(), self.nodes[j].value.shape(), g.shape()));
                }
                match &mut grads[j] {
                    Some(acc) => acc.accumulate(&g),
                    slot => *slot = Some(g),
                }
            }
            // Keep the gradient of interior nodes available for inspection.
            grads[i] = Some(grad);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            visited,
        })
    }
}
