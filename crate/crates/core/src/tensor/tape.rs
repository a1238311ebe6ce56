use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{Tensor, TensorError};

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

/// Maps the upstream gradient of a node to one gradient buffer per input.
pub(crate) type BackwardFn = Rc<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    numel: usize,
    parents: Vec<Option<NodeId>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

/// Append-only record of differentiable operations.
///
/// Nodes are pushed in evaluation order, so the node list is already a
/// topological order and the backward sweep simply walks it in reverse.
/// A tape is single-threaded (`Rc`); independent tapes may live on
/// independent threads.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("leaves", &inner.leaves.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Registers `value` as a trainable leaf and returns the tracked copy.
    ///
    /// The returned tensor shares storage with `value`.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = {
            let mut inner = self.inner.borrow_mut();
            let id = inner.nodes.len();
            inner.nodes.push(Node {
                numel: value.numel(),
                parents: Vec::new(),
                backward: None,
            });
            inner.leaves.push(id);
            id
        };
        value.with_var(self.clone(), id)
    }

    pub(crate) fn push(&self, numel: usize, parents: Vec<Option<NodeId>>, backward: BackwardFn) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            numel,
            parents,
            backward: Some(backward),
        });
        id
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// The tape is left untouched, so calling this twice yields bit-identical
    /// gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let root = match loss.var() {
            Some((tape, id)) if tape.same(self) => id,
            _ => return Err(TensorError::NotOnTape),
        };

        let inner = self.inner.borrow();
        let mut is_leaf = vec![false; inner.nodes.len()];
        for &leaf in &inner.leaves {
            is_leaf[leaf] = true;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        let mut out = HashMap::new();
        for id in (0..=root).rev() {
            let node = &inner.nodes[id];
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            debug_assert_eq!(upstream.len(), node.numel);
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&upstream);
                for (parent, grad) in node.parents.iter().zip(parent_grads) {
                    let Some(parent) = *parent else { continue };
                    match &mut grads[parent] {
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(&grad) {
                                *a += g;
                            }
                        }
                        slot @ None => *slot = Some(grad),
                    }
                }
            }
            if is_leaf[id] {
                out.insert(id, upstream);
            }
        }
        Ok(Gradients { by_node: out })
    }
}

/// Gradients of the leaves reachable from a loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: HashMap<NodeId, Vec<f64>>,
}

impl Gradients {
    /// Gradient for a tracked leaf; unreachable leaves get zeros.
    pub fn wrt(&self, leaf: &Tensor) -> Vec<f64> {
        leaf.var()
            .and_then(|(_, id)| self.by_node.get(&id).cloned())
            .unwrap_or_else(|| vec![0.0; leaf.numel()])
    }

    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.by_node.get(&id).map(Vec::as_slice)
    }
}
