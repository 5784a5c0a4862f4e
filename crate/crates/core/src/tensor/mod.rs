//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an arena of nodes plus an ordered record of executed
//! operations. Ops are recorded only when some input requires gradients, so
//! the same model code serves both training and plain evaluation. Recording
//! order equals execution order and [`Tensor::backward`] walks the records
//! in exact reverse, accumulating gradients additively into every
//! `requires_grad` node.
//!
//! Storage is flat row-major; slices and transposes copy. There is no
//! implicit broadcasting except [`Tensor::add_bias`], which broadcasts a
//! vector over all leading axes. Every op validates that its output is
//! finite: overflow surfaces as [`TensorError::NonFinite`] instead of
//! propagating silently.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, GradCheckReport, GradFailure};
pub use ops::concat;

use std::cell::RefCell;
use std::rc::Rc;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: expected {expected} values for shape {shape:?}, got {got}")]
    ValueCount {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("backward already ran on this graph; call zero_grads to reset")]
    BackwardTwice,
    #[error("{op}: operands belong to different graphs")]
    GraphMismatch { op: &'static str },
    #[error("{op}: empty input list")]
    EmptyInput { op: &'static str },
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Rc<[T]>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// One recorded operation: which op produced which node.
pub(crate) struct Record<T> {
    pub(crate) op: ops::Op<T>,
    pub(crate) out: usize,
}

pub(crate) struct GraphInner<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) records: Vec<Record<T>>,
    pub(crate) backward_run: bool,
}

/// Arena of tensors and the tape of operations over them.
///
/// A graph and its tensors are confined to one worker: the handle is
/// reference-counted but not `Send`, so distinct clients naturally own
/// distinct graphs.
pub struct Graph<T: Scalar> {
    inner: Rc<RefCell<GraphInner<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                records: Vec::new(),
                backward_run: false,
            })),
        }
    }

    /// Leaf tensor that participates in differentiation.
    pub fn var(&self, shape: &[usize], values: Vec<T>) -> Result<Tensor<T>, TensorError> {
        self.leaf(shape, values, true)
    }

    /// Leaf tensor excluded from differentiation.
    pub fn constant(&self, shape: &[usize], values: Vec<T>) -> Result<Tensor<T>, TensorError> {
        self.leaf(shape, values, false)
    }

    pub fn zeros(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        self.constant(shape, vec![T::ZERO; numel(shape)])
    }

    pub fn scalar(&self, value: T) -> Result<Tensor<T>, TensorError> {
        self.constant(&[], vec![value])
    }

    fn leaf(
        &self,
        shape: &[usize],
        values: Vec<T>,
        requires_grad: bool,
    ) -> Result<Tensor<T>, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                op: "tensor",
                shape: shape.to_vec(),
                reason: "extents must be positive",
            });
        }
        let expected = numel(shape);
        if values.len() != expected {
            return Err(TensorError::ValueCount {
                op: "tensor",
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(Node {
                shape: shape.to_vec(),
                values: values.into(),
                requires_grad,
                grad: None,
            });
            inner.nodes.len() - 1
        };
        Ok(Tensor {
            graph: self.clone(),
            id,
        })
    }

    /// Number of nodes currently held by the arena.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded operations.
    pub fn records(&self) -> usize {
        self.inner.borrow().records.len()
    }

    /// Clear all gradients and re-arm backward.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.backward_run = false;
        for node in &mut inner.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn same_graph(&self, other: &Graph<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        values: Vec<T>,
        op: Option<ops::Op<T>>,
    ) -> Result<Tensor<T>, TensorError> {
        debug_assert_eq!(numel(&shape), values.len());
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op.is_some();
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(Node {
                shape,
                values: values.into(),
                requires_grad,
                grad: None,
            });
            let id = inner.nodes.len() - 1;
            if let Some(op) = op {
                inner.records.push(Record { op, out: id });
            }
            id
        };
        Ok(Tensor {
            graph: self.clone(),
            id,
        })
    }
}

/// Handle to one node of a [`Graph`].
pub struct Tensor<T: Scalar> {
    pub(crate) graph: Graph<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn ndim(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.graph.inner.borrow().nodes[self.id].shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Copy of the flat row-major values.
    pub fn values(&self) -> Vec<T> {
        self.graph.inner.borrow().nodes[self.id].values.to_vec()
    }

    pub(crate) fn values_rc(&self) -> Rc<[T]> {
        Rc::clone(&self.graph.inner.borrow().nodes[self.id].values)
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<T, TensorError> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        if numel(&node.shape) != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: node.shape.clone(),
            });
        }
        Ok(node.values[0])
    }

    /// Accumulated gradient, if backward has reached this node.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.graph.inner.borrow().nodes[self.id].grad.clone()
    }

    /// Reverse-mode sweep from this scalar root.
    ///
    /// Walks the tape in exact reverse recording order. Gradients of nodes
    /// used several times accumulate additively. Fails on a non-scalar root
    /// or when backward already ran on this graph.
    pub fn backward(&self) -> Result<(), TensorError> {
        let mut inner = self.graph.inner.borrow_mut();
        if inner.backward_run {
            return Err(TensorError::BackwardTwice);
        }
        {
            let root = &inner.nodes[self.id];
            if numel(&root.shape) != 1 {
                return Err(TensorError::NonScalarRoot {
                    shape: root.shape.clone(),
                });
            }
        }
        inner.backward_run = true;
        inner.nodes[self.id].grad = Some(vec![T::ONE]);
        let records = std::mem::take(&mut inner.records);
        for record in records.iter().rev() {
            ops::apply_backward(&mut inner, record);
        }
        inner.records = records;
        Ok(())
    }
}
