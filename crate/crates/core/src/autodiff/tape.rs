use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::kernels as k;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Op<F> {
    Leaf,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Div,
    AddBias,
    Sigmoid,
    Tanh,
    SoftmaxRows,
    SumAll,
    Mean,
    Expand,
    SumRows,
    BcastRows,
    SumCols,
    BcastCols,
    Square,
    Sqrt,
    Scale(F),
    AddScalar(F),
    L2Norm,
    ConcatCols,
    SliceCols { start: usize, end: usize },
}

pub(crate) struct Node<F> {
    pub(crate) op: Op<F>,
    pub(crate) parents: Vec<usize>,
    pub(crate) value: Rc<Tensor<F>>,
    pub(crate) requires_grad: bool,
    /// 0 for forward computation, 1 for nodes produced by a recorded backward pass
    /// (or anything computed from them).
    pub(crate) order: u8,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order so every parent precedes its children.
/// A backward pass can itself be recorded (see [`Tape::grad_graph`]), which is
/// what makes the gradient-penalty term differentiable.
pub struct Tape<F: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<F>>>,
    higher_order: bool,
    pub(crate) pass_order: Cell<u8>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("higher_order", &self.higher_order)
            .finish()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), higher_order: false, pass_order: Cell::new(0) }
    }

    /// A tape on which backward passes may be recorded for a second derivative.
    pub fn with_higher_order() -> Self {
        Tape { higher_order: true, ..Self::new() }
    }

    pub fn higher_order(&self) -> bool {
        self.higher_order
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that gradients can be taken with respect to.
    pub fn var(&self, t: Tensor<F>) -> Var<'_, F> {
        self.leaf(t, true)
    }

    pub fn constant(&self, t: Tensor<F>) -> Var<'_, F> {
        self.leaf(t, false)
    }

    fn leaf(&self, t: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            value: Rc::new(t),
            requires_grad,
            order: self.pass_order.get(),
        });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Records `op`. When no parent requires a gradient the result is kept as a
    /// constant leaf and its history is dropped.
    fn push(&self, op: Op<F>, parents: &[usize], value: Tensor<F>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let order = parents.iter().map(|&p| nodes[p].order).fold(self.pass_order.get(), u8::max);
        let (op, parents) = if requires_grad { (op, parents.to_vec()) } else { (Op::Leaf, Vec::new()) };
        nodes.push(Node { op, parents, value: Rc::new(value), requires_grad, order });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let vals: Vec<Rc<Tensor<F>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<F>> = vals.iter().map(|v| v.as_ref()).collect();
        let out = k::concat_cols(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Op::ConcatCols, &ids, out))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Scalar> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) id: usize,
}

impl<F: Scalar> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

// Fallible arithmetic, so the operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'t, F: Scalar> Var<'t, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<F>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> F {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub(crate) fn order(&self) -> u8 {
        self.tape.nodes.borrow()[self.id].order
    }

    fn same_tape(&self, other: &Var<'t, F>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::InvalidTensor("operands belong to different tapes".into()))
        }
    }

    fn unary(self, op: Op<F>, f: impl FnOnce(&Tensor<F>) -> Result<Tensor<F>>) -> Result<Self> {
        let out = f(&self.value())?;
        Ok(self.tape.push(op, &[self.id], out))
    }

    fn binary(
        self,
        other: Self,
        op: Op<F>,
        f: impl FnOnce(&Tensor<F>, &Tensor<F>) -> Result<Tensor<F>>,
    ) -> Result<Self> {
        self.same_tape(&other)?;
        let out = f(&self.value(), &other.value())?;
        Ok(self.tape.push(op, &[self.id, other.id], out))
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` with optional transposes.
    pub fn matmul_t(self, other: Self, ta: bool, tb: bool) -> Result<Self> {
        self.binary(other, Op::MatMul { ta, tb }, |a, b| k::matmul(a, b, ta, tb))
    }

    /// Distribution-weighted average of embedding rows: `dist (B x V) @ embed (V x E)`.
    pub fn embedding_lookup_weighted(self, embed: Self) -> Result<Self> {
        self.matmul(embed)
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Add, k::add)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Sub, k::sub)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Mul, k::mul)
    }

    pub fn div(self, other: Self) -> Result<Self> {
        self.binary(other, Op::Div, k::div)
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_bias(self, bias: Self) -> Result<Self> {
        self.binary(bias, Op::AddBias, k::add_bias)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary(Op::Sigmoid, |a| Ok(k::sigmoid(a)))
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary(Op::Tanh, |a| Ok(k::tanh(a)))
    }

    pub fn softmax_rows(self) -> Result<Self> {
        self.unary(Op::SoftmaxRows, k::softmax_rows)
    }

    pub fn sum(self) -> Result<Self> {
        self.unary(Op::SumAll, |a| Ok(k::sum_all(a)))
    }

    pub fn mean(self) -> Result<Self> {
        self.unary(Op::Mean, |a| Ok(k::mean(a)))
    }

    pub fn expand(self, shape: &[usize]) -> Result<Self> {
        self.unary(Op::Expand, |a| k::expand(a, shape))
    }

    pub fn sum_rows(self) -> Result<Self> {
        self.unary(Op::SumRows, k::sum_rows)
    }

    pub fn bcast_rows(self, m: usize) -> Result<Self> {
        self.unary(Op::BcastRows, |a| k::bcast_rows(a, m))
    }

    pub fn sum_cols(self) -> Result<Self> {
        self.unary(Op::SumCols, k::sum_cols)
    }

    pub fn bcast_cols(self, n: usize) -> Result<Self> {
        self.unary(Op::BcastCols, |a| k::bcast_cols(a, n))
    }

    pub fn square(self) -> Result<Self> {
        self.unary(Op::Square, |a| Ok(k::square(a)))
    }

    pub fn sqrt(self) -> Result<Self> {
        self.unary(Op::Sqrt, |a| Ok(k::sqrt(a)))
    }

    pub fn scale(self, c: F) -> Result<Self> {
        self.unary(Op::Scale(c), |a| Ok(k::scale(a, c)))
    }

    pub fn neg(self) -> Result<Self> {
        self.scale(-F::one())
    }

    pub fn add_scalar(self, c: F) -> Result<Self> {
        self.unary(Op::AddScalar(c), |a| Ok(k::add_scalar(a, c)))
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(self) -> Result<Self> {
        self.unary(Op::L2Norm, |a| Ok(k::l2_norm(a)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Self> {
        self.unary(Op::SliceCols { start, end }, |a| k::slice_cols(a, start, end))
    }
}
