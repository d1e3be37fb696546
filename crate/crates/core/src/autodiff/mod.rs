//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation in execution order. Each node keeps its
//! value and, when some ancestor is a trainable leaf, a closure that pushes the
//! node's adjoint onto its parents. [`Tape::backward`] walks the tape once in
//! reverse.

mod ops;
mod optim;

pub use optim::Adam;

use crate::error::AutodiffError;
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape {rows}x{cols} vs {} values", data.len());
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor::new(1, 1, vec![x])
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Tensor::new(rows, cols, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.f64()).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&[Node<T>], &[T], &mut GradBuffers<T>)>;

pub struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

impl<T> Node<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

/// Adjoint accumulators, allocated on first touch.
pub struct GradBuffers<T> {
    bufs: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
    requires: Vec<bool>,
}

impl<T: Scalar> GradBuffers<T> {
    /// Mutable adjoint of `v`, or `None` if nothing upstream is trainable.
    pub fn get_mut(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.requires[v.0] {
            return None;
        }
        let n = self.sizes[v.0];
        Some(self.bufs[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

/// Gradients returned by [`Tape::backward`].
pub struct Gradients<T> {
    bufs: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `v`; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.bufs.get(v.0).and_then(|b| b.as_deref())
    }

    /// Adjoint of `v` as f64, zeros when unreached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.iter().map(|x| x.f64()).collect(),
            None => vec![0.0; len],
        }
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    done: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push<F>(&mut self, value: Tensor<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&[Node<T>], &[T], &mut GradBuffers<T>) + 'static,
    {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(loss)/d(node) to every node the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.done {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        let (rows, cols) = self.shape(loss);
        if rows * cols != 1 {
            return Err(AutodiffError::NonScalarLoss { rows, cols });
        }
        self.done = true;
        let n = self.nodes.len();
        let mut grads = GradBuffers {
            bufs: (0..n).map(|_| None).collect(),
            sizes: self.nodes.iter().map(|x| x.value.data.len()).collect(),
            requires: self.nodes.iter().map(|x| x.requires_grad).collect(),
        };
        if let Some(g) = grads.get_mut(loss) {
            g[0] = T::one();
        }
        for id in (0..=loss.0).rev() {
            let Some(backward) = self.nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads.bufs[id].take() else {
                continue;
            };
            backward(&self.nodes, &g, &mut grads);
            grads.bufs[id] = Some(g);
        }
        Ok(Gradients { bufs: grads.bufs })
    }
}
