//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every primitive applied to its variables. Leaves are
//! either trainable parameters or constants; constants never receive a
//! gradient, which is how frozen weights and the pretrained reference stay
//! out of the update path. Calling [`Tape::backward`] on a 1x1 node returns
//! the gradient of every parameter reachable from it.
//!
//! ```
//! use balora::autodiff::Tape;
//! use balora::linalg::Matrix;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::from_diag(&[3.0, 2.0, 1.0]));
//! let s = tape.svd_values(w).unwrap();
//! let top = tape.slice_cols(s, 0, 1).unwrap();
//! let loss = tape.sum(top);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap()[(0, 0)], 1.0);
//! ```

mod check;
mod ops;

pub use check::{grad_check, GradCheck};
/// Row-wise softmax of a plain matrix, outside any tape.
pub use ops::softmax_rows as softmax_rows_value;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SvdFactors};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Row sums of probability inputs must be within this of 1.
pub const DISTRIBUTION_TOL: f64 = 1e-6;
/// Singular-value gaps below this are flagged as non-differentiable points.
pub const SPECTRAL_GAP_FLAG: f64 = 1e-6;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
    Mse(Var, Var),
    KlRows(Var, Var),
    EntropyRows(Var),
    L2NormalizeRows {
        input: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    Covariance(Var),
    OffdiagSqSum(Var),
    SvdValues {
        input: Var,
        factors: Box<SvdFactors>,
    },
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    Div(Var, Var),
    Variance(Var),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Matrix,
    pub(crate) needs_grad: bool,
}

/// Something worth knowing about a recorded graph that is not an error.
#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostic {
    /// `svd_values` was taken at a point whose adjacent singular values are
    /// closer than [`SPECTRAL_GAP_FLAG`]; its gradient is a subgradient.
    NearDegenerateSpectrum { node: usize, min_gap: f64 },
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
    diagnostics: Vec<Diagnostic>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.params.push(v);
        v
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub(crate) fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NotScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` is on the loss's
    /// dependency path and requires a gradient.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of the given shape when `v` is unreachable.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }

    /// `{parameter id -> gradient}` for every parameter of `tape`.
    pub fn parameter_map(&self, tape: &Tape) -> Vec<(usize, Matrix)> {
        tape.params()
            .iter()
            .map(|&p| {
                let (r, c) = tape.value(p).shape();
                (p.id(), self.get_or_zeros(p, r, c))
            })
            .collect()
    }
}
