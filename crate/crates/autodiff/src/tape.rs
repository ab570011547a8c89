//! Append-only operation tape and tracked variables.
//!
//! Every primitive applied to a [`Var`] evaluates eagerly through the kernels
//! and appends one node. Nodes only require gradients when one of their
//! parents does, so constant subgraphs cost nothing in the backward pass.

use std::cell::{Ref, RefCell};

use crate::error::{AdError, Result};
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    ScaleBy(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Softplus(usize),
    Square(usize),
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Concat { parts: Vec<usize>, axis: usize },
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    GatherRows { src: usize, index: Vec<usize> },
    Reshape(usize),
    Transpose(usize),
    Diag(usize),
    Cholesky(usize),
    TriSolve(usize, usize),
    InverseSpd(usize),
    LogDetSpd { src: usize, inv: Tensor },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "hadamard",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scalar_mul",
            Op::Offset(..) => "offset",
            Op::ScaleBy(..) => "scale_by",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::SoftmaxRows(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::Concat { .. } => "concat",
            Op::SliceRows { .. } | Op::SliceCols { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Diag(..) => "diag",
            Op::Cholesky(..) => "cholesky",
            Op::TriSolve(..) => "triangular_solve",
            Op::InverseSpd(..) => "small_inverse",
            Op::LogDetSpd { .. } => "log_det",
        }
    }

    pub(crate) fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleBy(a, b)
            | Op::TriSolve(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Diag(a)
            | Op::Cholesky(a)
            | Op::InverseSpd(a) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::SliceRows { src, .. }
            | Op::SliceCols { src, .. }
            | Op::GatherRows { src, .. }
            | Op::LogDetSpd { src, .. } => vec![*src],
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A registered model parameter on a tape.
#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub(crate) name: String,
    pub(crate) node: usize,
    pub(crate) trainable: bool,
}

/// Append-only record of a forward computation.
///
/// A tape belongs to one thread of execution; build one per episode.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    pub(crate) params: RefCell<Vec<ParamEntry>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value, op, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: "leaf" });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        self.push_leaf(value, false)
    }

    /// Tracked input whose gradient can be read back with [`crate::Gradients::wrt`].
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>> {
        self.push_leaf(value, true)
    }

    /// Registers a named model parameter. Frozen parameters behave as constants.
    pub fn param(&self, name: &str, value: Tensor, trainable: bool) -> Result<Var<'_>> {
        if self.params.borrow().iter().any(|p| p.name == name) {
            return Err(AdError::Contract(format!("duplicate parameter name {name:?}")));
        }
        let var = self.push_leaf(value, trainable)?;
        self.params.borrow_mut().push(ParamEntry { name: name.to_string(), node: var.id, trainable });
        Ok(var)
    }

    pub fn scalar(&self, v: f64) -> Result<Var<'_>> {
        self.constant(Tensor::scalar(v))
    }

    pub(crate) fn value_of(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Concatenates vars along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(AdError::shape("concat", "no inputs"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            concat_values(&vals, axis)?
        };
        self.push(value, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis })
    }
}

pub(crate) fn concat_values(vals: &[&Tensor], axis: usize) -> Result<Tensor> {
    for v in vals {
        if v.rank() != 2 {
            return Err(AdError::shape("concat", format!("expected matrices, got {:?}", v.shape())));
        }
    }
    match axis {
        0 => {
            let c = vals[0].cols();
            if vals.iter().any(|v| v.cols() != c) {
                return Err(AdError::shape("concat", "column counts differ"));
            }
            let rows: usize = vals.iter().map(|v| v.rows()).sum();
            let data: Vec<f64> = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
            Ok(Tensor::from_parts(vec![rows, c], data))
        }
        1 => {
            let r = vals[0].rows();
            if vals.iter().any(|v| v.rows() != r) {
                return Err(AdError::shape("concat", "row counts differ"));
            }
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(r * cols);
            for i in 0..r {
                for v in vals {
                    data.extend_from_slice(v.row_slice(i));
                }
            }
            Ok(Tensor::from_parts(vec![r, cols], data))
        }
        _ => Err(AdError::shape("concat", format!("axis {axis} unsupported"))),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value_of(self.id))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.value_of(self.id).data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(AdError::Contract("vars belong to different tapes".into()));
        }
        Ok(())
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let value = f(&self.tape.value_of(self.id))?;
        self.tape.push(value, op)
    }

    fn binary(
        &self,
        other: &Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        self.tape.push(value, op)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), kernels::matmul)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), kernels::add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), kernels::sub)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), kernels::hadamard)
    }

    /// Adds a row vector (any shape with `cols` elements) to every row.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), kernels::add_row)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |x| Ok(x.map(|v| v * c)))
    }

    /// Addition of a constant.
    pub fn offset(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Offset(self.id), |x| Ok(x.map(|v| v + c)))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    /// Multiplication by a tracked single-element tensor.
    pub fn scale_by(&self, s: &Var<'t>) -> Result<Var<'t>> {
        self.binary(s, Op::ScaleBy(self.id, s.id), |x, s| {
            if s.len() != 1 {
                return Err(AdError::shape("scale_by", format!("scale has shape {:?}", s.shape())));
            }
            let c = s.data()[0];
            Ok(x.map(|v| v * c))
        })
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), |x| Ok(x.map(f64::exp)))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), |x| Ok(x.map(f64::ln)))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), |x| Ok(x.map(f64::tanh)))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |x| Ok(x.map(kernels::sigmoid)))
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |x| Ok(x.map(|v| v.max(0.0))))
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Op::Softplus(self.id), |x| Ok(x.map(kernels::softplus)))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Op::Square(self.id), |x| Ok(x.map(|v| v * v)))
    }

    /// Softmax over the last dimension (per row for matrices).
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.unary(Op::SoftmaxRows(self.id), |x| Ok(kernels::softmax_rows(x)))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |x| Ok(Tensor::scalar(x.data().iter().sum())))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |x| {
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
        })
    }

    /// Per-row sums of a matrix, as an `n x 1` column.
    pub fn row_sum(&self) -> Result<Var<'t>> {
        self.unary(Op::RowSum(self.id), |x| {
            let c = x.cols();
            Ok(Tensor::column(x.data().chunks(c).map(|r| r.iter().sum()).collect()))
        })
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        self.unary(Op::SliceRows { src: self.id, start }, |x| {
            if x.rank() != 2 || len == 0 || start + len > x.rows() {
                return Err(AdError::shape("slice", format!("rows {start}..{} of {:?}", start + len, x.shape())));
            }
            let c = x.cols();
            Tensor::new(&[len, c], x.data()[start * c..(start + len) * c].to_vec())
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        self.unary(Op::SliceCols { src: self.id, start }, |x| {
            if x.rank() != 2 || len == 0 || start + len > x.cols() {
                return Err(AdError::shape("slice", format!("cols {start}..{} of {:?}", start + len, x.shape())));
            }
            let data = (0..x.rows()).flat_map(|i| x.row_slice(i)[start..start + len].to_vec()).collect();
            Tensor::new(&[x.rows(), len], data)
        })
    }

    pub fn row(&self, i: usize) -> Result<Var<'t>> {
        self.slice_rows(i, 1)
    }

    pub fn gather_rows(&self, index: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::GatherRows { src: self.id, index: index.to_vec() }, |x| {
            if x.rank() != 2 || index.is_empty() || index.iter().any(|&i| i >= x.rows()) {
                return Err(AdError::shape("gather_rows", format!("{index:?} of {:?}", x.shape())));
            }
            let data = index.iter().flat_map(|&i| x.row_slice(i).to_vec()).collect();
            Tensor::new(&[index.len(), x.cols()], data)
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Reshape(self.id), |x| x.clone().reshaped(shape))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), kernels::transpose)
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&self) -> Result<Var<'t>> {
        self.unary(Op::Diag(self.id), |x| {
            if x.rank() != 2 || x.rows() != x.cols() {
                return Err(AdError::shape("diag", format!("{:?}", x.shape())));
            }
            Ok(Tensor::column((0..x.rows()).map(|i| x.get(i, i)).collect()))
        })
    }

    /// Lower Cholesky factor of the symmetric part of `self`.
    pub fn cholesky(&self) -> Result<Var<'t>> {
        self.unary(Op::Cholesky(self.id), kernels::cholesky)
    }

    /// `L^{-1} B` with `self = L` lower triangular.
    pub fn tri_solve(&self, b: &Var<'t>) -> Result<Var<'t>> {
        self.binary(b, Op::TriSolve(self.id, b.id), kernels::tri_solve_lower)
    }

    /// Inverse of a small SPD matrix.
    pub fn inverse_spd(&self) -> Result<Var<'t>> {
        self.unary(Op::InverseSpd(self.id), kernels::inverse_spd)
    }

    /// `log det` of an SPD matrix, computed through its Cholesky factor.
    pub fn logdet_spd(&self) -> Result<Var<'t>> {
        let (value, inv) = {
            let x = self.tape.value_of(self.id);
            (kernels::logdet_spd(&x)?, kernels::inverse_spd(&x)?)
        };
        self.tape.push(Tensor::scalar(value), Op::LogDetSpd { src: self.id, inv })
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrize(&self) -> Result<Var<'t>> {
        self.add(&self.transpose()?)?.scale(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0; 3])).unwrap();
        let y = x.softmax().unwrap().value();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_do_not_require_grad() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::eye(2)).unwrap();
        let p = tape.leaf(Tensor::eye(2)).unwrap();
        assert!(!c.matmul(&c).unwrap().requires_grad());
        assert!(c.matmul(&p).unwrap().requires_grad());
    }

    #[test]
    fn non_finite_results_are_errors() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0, 1.0])).unwrap();
        assert_eq!(x.log().unwrap_err(), AdError::NonFinite { op: "log" });
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let tape = Tape::new();
        tape.param("w", Tensor::scalar(1.0), true).unwrap();
        assert!(matches!(tape.param("w", Tensor::scalar(1.0), true), Err(AdError::Contract(_))));
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let b = tape.constant(Tensor::from_rows(&[vec![3.0]]).unwrap()).unwrap();
        let ab = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(ab.value().data(), &[1.0, 2.0, 3.0]);
        assert_eq!(ab.slice_cols(1, 2).unwrap().value().data(), &[2.0, 3.0]);
    }
}
