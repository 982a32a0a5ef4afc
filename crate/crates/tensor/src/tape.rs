use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`]. Ids are dense indices in
/// recording order, so an operation's inputs always precede it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable primitive. Implementations are stateless with respect
/// to any particular call: `backward` must be able to reconstruct whatever
/// it needs from the saved inputs and output.
pub trait TapeOp<E: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<E>]) -> Result<Tensor<E>>;

    /// Given dLoss/dOutput, returns dLoss/dInput per input, `None` for
    /// inputs the operation does not differentiate through. Each returned
    /// tensor must match the corresponding input's shape.
    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>>;
}

struct Node<E: Element> {
    value: Tensor<E>,
    inputs: Vec<NodeId>,
    op: Option<Arc<dyn TapeOp<E>>>,
}

/// Recording of a forward computation, replayed once in reverse to fill in
/// leaf gradients. A tape is consumed by `backward`; recording or
/// differentiating after that is an error.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    consumed: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records an input tensor, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
        })
    }

    /// Records a trainable input: `requires_grad` is forced on.
    pub fn param(&mut self, value: Tensor<E>) -> NodeId {
        self.leaf(value.with_requires_grad(true))
    }

    /// Records a non-differentiable input: `requires_grad` is forced off.
    pub fn constant(&mut self, value: Tensor<E>) -> NodeId {
        self.leaf(value.with_requires_grad(false))
    }

    fn push(&mut self, node: Node<E>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::DetachedGraph)
        }
    }

    /// Runs `op` on already-recorded nodes and records the result.
    pub fn apply(&mut self, op: Arc<dyn TapeOp<E>>, inputs: &[NodeId]) -> Result<NodeId> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        for &id in inputs {
            self.check_id(id)?;
        }
        let input_refs: Vec<&Tensor<E>> =
            inputs.iter().map(|&id| &self.nodes[id.0].value).collect();
        let needs_grad = input_refs.iter().any(|t| t.requires_grad());
        let value = op.forward(&input_refs)?.with_requires_grad(needs_grad);
        Ok(self.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: Some(op),
        }))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Gradient buffer populated by `backward`, present on `requires_grad`
    /// leaves afterwards.
    pub fn grad(&self, id: NodeId) -> Option<&[E]> {
        self.nodes[id.0].value.grad()
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor<E>> {
        self.nodes[id.0].value.grad_tensor()
    }

    /// Accumulates dLoss/dLeaf into every `requires_grad` leaf, consuming
    /// the tape. Leaves the loss does not depend on get zero gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        self.check_id(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape().to_vec()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if node.op.is_none() || !node.value.requires_grad() {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let op = node.op.as_ref().unwrap();
            let input_refs: Vec<&Tensor<E>> = node
                .inputs
                .iter()
                .map(|&i| &self.nodes[i.0].value)
                .collect();
            let contribs = op.backward(&input_refs, &node.value, &g)?;
            if contribs.len() != node.inputs.len() {
                return Err(TensorError::op(
                    op.name(),
                    format!(
                        "backward returned {} gradients for {} inputs",
                        contribs.len(),
                        node.inputs.len()
                    ),
                ));
            }
            let input_ids = node.inputs.clone();
            let op_name = op.name();
            for (input_id, contrib) in input_ids.into_iter().zip(contribs) {
                let contrib = match contrib {
                    Some(c) => c,
                    None => continue,
                };
                if !self.nodes[input_id.0].value.requires_grad() {
                    continue;
                }
                if contrib.shape() != self.nodes[input_id.0].value.shape() {
                    return Err(TensorError::op(
                        op_name,
                        format!(
                            "backward produced shape {:?} for input of shape {:?}",
                            contrib.shape(),
                            self.nodes[input_id.0].value.shape()
                        ),
                    ));
                }
                match grads[input_id.0].as_mut() {
                    Some(acc) => {
                        for (dst, &src) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *dst += src;
                        }
                    }
                    None => grads[input_id.0] = Some(contrib),
                }
            }
        }

        for (id, slot) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[id];
            if node.op.is_some() || !node.value.requires_grad() {
                continue;
            }
            let grad = match slot {
                Some(g) => g.into_data(),
                None => vec![E::zero(); node.value.numel()],
            };
            node.value.set_grad(grad);
        }
        Ok(())
    }
}
