//! Reverse-mode differentiation over a [`Tape`].
//!
//! Vector-Jacobian products are written once against [`Backend`]. The value
//! backend evaluates them eagerly; the graph backend records them as tape
//! operations so the resulting gradients can be differentiated again.

use std::rc::Rc;

use super::kernels as k;
use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

trait Backend<F: Scalar> {
    type V: Clone;

    fn node(&self, id: usize) -> Self::V;
    fn shape(&self, v: &Self::V) -> Vec<usize>;
    fn zeros(&self, shape: &[usize]) -> Self::V;
    fn matmul(&self, a: &Self::V, b: &Self::V, ta: bool, tb: bool) -> Result<Self::V>;
    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn div(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&self, a: &Self::V, c: F) -> Result<Self::V>;
    fn sum_all(&self, a: &Self::V) -> Result<Self::V>;
    fn expand(&self, a: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn sum_rows(&self, a: &Self::V) -> Result<Self::V>;
    fn bcast_rows(&self, a: &Self::V, m: usize) -> Result<Self::V>;
    fn sum_cols(&self, a: &Self::V) -> Result<Self::V>;
    fn bcast_cols(&self, a: &Self::V, n: usize) -> Result<Self::V>;
    fn concat_cols(&self, parts: &[Self::V]) -> Result<Self::V>;
    fn slice_cols(&self, a: &Self::V, start: usize, end: usize) -> Result<Self::V>;
    fn sigmoid_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V>;
    fn tanh_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V>;
    fn softmax_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V>;
}

struct Values<'a, F: Scalar>(&'a Tape<F>);

impl<F: Scalar> Backend<F> for Values<'_, F> {
    type V = Rc<Tensor<F>>;

    fn node(&self, id: usize) -> Self::V {
        self.0.value_of(id)
    }
    fn shape(&self, v: &Self::V) -> Vec<usize> {
        v.shape().to_vec()
    }
    fn zeros(&self, shape: &[usize]) -> Self::V {
        Rc::new(Tensor::zeros(shape))
    }
    fn matmul(&self, a: &Self::V, b: &Self::V, ta: bool, tb: bool) -> Result<Self::V> {
        k::matmul(a, b, ta, tb).map(Rc::new)
    }
    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        k::add(a, b).map(Rc::new)
    }
    fn mul(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        k::mul(a, b).map(Rc::new)
    }
    fn div(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        k::div(a, b).map(Rc::new)
    }
    fn scale(&self, a: &Self::V, c: F) -> Result<Self::V> {
        Ok(Rc::new(k::scale(a, c)))
    }
    fn sum_all(&self, a: &Self::V) -> Result<Self::V> {
        Ok(Rc::new(k::sum_all(a)))
    }
    fn expand(&self, a: &Self::V, shape: &[usize]) -> Result<Self::V> {
        k::expand(a, shape).map(Rc::new)
    }
    fn sum_rows(&self, a: &Self::V) -> Result<Self::V> {
        k::sum_rows(a).map(Rc::new)
    }
    fn bcast_rows(&self, a: &Self::V, m: usize) -> Result<Self::V> {
        k::bcast_rows(a, m).map(Rc::new)
    }
    fn sum_cols(&self, a: &Self::V) -> Result<Self::V> {
        k::sum_cols(a).map(Rc::new)
    }
    fn bcast_cols(&self, a: &Self::V, n: usize) -> Result<Self::V> {
        k::bcast_cols(a, n).map(Rc::new)
    }
    fn concat_cols(&self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor<F>> = parts.iter().map(|p| p.as_ref()).collect();
        k::concat_cols(&refs).map(Rc::new)
    }
    fn slice_cols(&self, a: &Self::V, start: usize, end: usize) -> Result<Self::V> {
        k::slice_cols(a, start, end).map(Rc::new)
    }
    fn sigmoid_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V> {
        k::sigmoid_bwd(g, y).map(Rc::new)
    }
    fn tanh_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V> {
        k::tanh_bwd(g, y).map(Rc::new)
    }
    fn softmax_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V> {
        k::softmax_bwd(g, y).map(Rc::new)
    }
}

struct Graph<'t, F: Scalar>(&'t Tape<F>);

impl<'t, F: Scalar> Backend<F> for Graph<'t, F> {
    type V = Var<'t, F>;

    fn node(&self, id: usize) -> Self::V {
        Var { tape: self.0, id }
    }
    fn shape(&self, v: &Self::V) -> Vec<usize> {
        v.shape()
    }
    fn zeros(&self, shape: &[usize]) -> Self::V {
        self.0.constant(Tensor::zeros(shape))
    }
    fn matmul(&self, a: &Self::V, b: &Self::V, ta: bool, tb: bool) -> Result<Self::V> {
        a.matmul_t(*b, ta, tb)
    }
    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.add(*b)
    }
    fn mul(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.mul(*b)
    }
    fn div(&self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.div(*b)
    }
    fn scale(&self, a: &Self::V, c: F) -> Result<Self::V> {
        a.scale(c)
    }
    fn sum_all(&self, a: &Self::V) -> Result<Self::V> {
        a.sum()
    }
    fn expand(&self, a: &Self::V, shape: &[usize]) -> Result<Self::V> {
        a.expand(shape)
    }
    fn sum_rows(&self, a: &Self::V) -> Result<Self::V> {
        a.sum_rows()
    }
    fn bcast_rows(&self, a: &Self::V, m: usize) -> Result<Self::V> {
        a.bcast_rows(m)
    }
    fn sum_cols(&self, a: &Self::V) -> Result<Self::V> {
        a.sum_cols()
    }
    fn bcast_cols(&self, a: &Self::V, n: usize) -> Result<Self::V> {
        a.bcast_cols(n)
    }
    fn concat_cols(&self, parts: &[Self::V]) -> Result<Self::V> {
        self.0.concat_cols(parts)
    }
    fn slice_cols(&self, a: &Self::V, start: usize, end: usize) -> Result<Self::V> {
        a.slice_cols(start, end)
    }
    fn sigmoid_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V> {
        // g * (y - y^2)
        g.mul(y.sub(y.square()?)?)
    }
    fn tanh_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V> {
        g.sub(g.mul(y.square()?)?)
    }
    fn softmax_bwd(&self, g: &Self::V, y: &Self::V) -> Result<Self::V> {
        let n = y.shape()[1];
        let dot = g.mul(*y)?.sum_cols()?.bcast_cols(n)?;
        y.mul(g.sub(dot)?)
    }
}

/// Gradient contributions to each parent, `None` where `need[i]` is false.
fn vjp<F: Scalar, B: Backend<F>>(
    b: &B,
    op: Op<F>,
    x: &[B::V],
    y: &B::V,
    g: &B::V,
    need: &[bool],
) -> Result<Vec<Option<B::V>>> {
    let mut out: Vec<Option<B::V>> = vec![None; x.len()];
    let want = |i: usize| need[i];
    match op {
        Op::Leaf => {}
        Op::MatMul { ta, tb } => {
            let (a, bm) = (&x[0], &x[1]);
            if want(0) {
                out[0] = Some(match (ta, tb) {
                    (false, false) => b.matmul(g, bm, false, true)?,
                    (false, true) => b.matmul(g, bm, false, false)?,
                    (true, false) => b.matmul(bm, g, false, true)?,
                    (true, true) => b.matmul(bm, g, true, true)?,
                });
            }
            if want(1) {
                out[1] = Some(match (ta, tb) {
                    (false, false) => b.matmul(a, g, true, false)?,
                    (false, true) => b.matmul(g, a, true, false)?,
                    (true, false) => b.matmul(a, g, false, false)?,
                    (true, true) => b.matmul(g, a, true, true)?,
                });
            }
        }
        Op::Add => {
            out[0] = want(0).then(|| g.clone());
            out[1] = want(1).then(|| g.clone());
        }
        Op::Sub => {
            out[0] = want(0).then(|| g.clone());
            if want(1) {
                out[1] = Some(b.scale(g, -F::one())?);
            }
        }
        Op::Mul => {
            if want(0) {
                out[0] = Some(b.mul(g, &x[1])?);
            }
            if want(1) {
                out[1] = Some(b.mul(g, &x[0])?);
            }
        }
        Op::Div => {
            if want(0) {
                out[0] = Some(b.div(g, &x[1])?);
            }
            if want(1) {
                // d(a/b)/db = -(a/b)/b
                let t = b.div(&b.mul(g, y)?, &x[1])?;
                out[1] = Some(b.scale(&t, -F::one())?);
            }
        }
        Op::AddBias => {
            out[0] = want(0).then(|| g.clone());
            if want(1) {
                out[1] = Some(b.sum_rows(g)?);
            }
        }
        Op::Sigmoid => out[0] = Some(b.sigmoid_bwd(g, y)?),
        Op::Tanh => out[0] = Some(b.tanh_bwd(g, y)?),
        Op::SoftmaxRows => out[0] = Some(b.softmax_bwd(g, y)?),
        Op::SumAll => out[0] = Some(b.expand(g, &b.shape(&x[0]))?),
        Op::Mean => {
            let shape = b.shape(&x[0]);
            let n = F::from_usize(shape.iter().product()).unwrap();
            out[0] = Some(b.scale(&b.expand(g, &shape)?, F::one() / n)?);
        }
        Op::Expand => out[0] = Some(b.sum_all(g)?),
        Op::SumRows => out[0] = Some(b.bcast_rows(g, b.shape(&x[0])[0])?),
        Op::BcastRows => out[0] = Some(b.sum_rows(g)?),
        Op::SumCols => out[0] = Some(b.bcast_cols(g, b.shape(&x[0])[1])?),
        Op::BcastCols => out[0] = Some(b.sum_cols(g)?),
        Op::Square => out[0] = Some(b.scale(&b.mul(g, &x[0])?, F::lit(2.0))?),
        Op::Sqrt => out[0] = Some(b.scale(&b.div(g, y)?, F::lit(0.5))?),
        Op::Scale(c) => out[0] = Some(b.scale(g, c)?),
        Op::AddScalar(_) => out[0] = Some(g.clone()),
        Op::L2Norm => {
            let shape = b.shape(&x[0]);
            out[0] = Some(b.mul(&x[0], &b.expand(&b.div(g, y)?, &shape)?)?);
        }
        Op::ConcatCols => {
            let mut off = 0;
            for (i, part) in x.iter().enumerate() {
                let w = b.shape(part)[1];
                if want(i) {
                    out[i] = Some(b.slice_cols(g, off, off + w)?);
                }
                off += w;
            }
        }
        Op::SliceCols { start, end } => {
            let shape = b.shape(&x[0]);
            let (m, n) = (shape[0], shape[1]);
            let mut parts = Vec::with_capacity(3);
            if start > 0 {
                parts.push(b.zeros(&[m, start]));
            }
            parts.push(g.clone());
            if end < n {
                parts.push(b.zeros(&[m, n - end]));
            }
            out[0] = Some(if parts.len() == 1 { g.clone() } else { b.concat_cols(&parts)? });
        }
    }
    Ok(out)
}

/// Core reverse sweep from `out` to the nodes in `wrt`.
fn sweep<F: Scalar, B: Backend<F>>(
    b: &B,
    tape: &Tape<F>,
    out: usize,
    wrt: &[usize],
) -> Result<Vec<Option<B::V>>> {
    let Some(&lo) = wrt.iter().min() else {
        return Ok(Vec::new());
    };
    if lo > out {
        return Ok(vec![None; wrt.len()]);
    }
    // Nodes on some path from a `wrt` node.
    let mut reach = vec![false; out + 1 - lo];
    {
        let nodes = tape.nodes.borrow();
        for &w in wrt {
            if w <= out {
                reach[w - lo] = true;
            }
        }
        for id in lo..=out {
            if !reach[id - lo] {
                reach[id - lo] = nodes[id].parents.iter().any(|&p| p >= lo && reach[p - lo]);
            }
        }
    }
    if !reach[out - lo] {
        return Ok(vec![None; wrt.len()]);
    }

    let mut grads: Vec<Option<B::V>> = vec![None; out + 1 - lo];
    grads[out - lo] = Some(b.node(tape.constant(Tensor::scalar(F::one())).id));
    let mut result: Vec<Option<B::V>> = vec![None; wrt.len()];

    for id in (lo..=out).rev() {
        let Some(g) = grads[id - lo].take() else { continue };
        for (slot, &w) in result.iter_mut().zip(wrt) {
            if w == id {
                *slot = Some(g.clone());
            }
        }
        let (op, parents) = {
            let nodes = tape.nodes.borrow();
            (nodes[id].op, nodes[id].parents.clone())
        };
        let need: Vec<bool> = parents.iter().map(|&p| p >= lo && reach[p - lo]).collect();
        if !need.iter().any(|&n| n) {
            continue;
        }
        let xs: Vec<B::V> = parents.iter().map(|&p| b.node(p)).collect();
        let contribs = vjp(b, op, &xs, &b.node(id), &g, &need)?;
        for (&p, c) in parents.iter().zip(contribs) {
            let Some(c) = c else { continue };
            let slot = &mut grads[p - lo];
            *slot = Some(match slot.take() {
                None => c,
                Some(prev) => b.add(&prev, &c)?,
            });
        }
    }
    Ok(result)
}

fn check_scalar<F: Scalar>(out: &Var<'_, F>) -> Result<()> {
    let shape = out.shape();
    if shape.iter().product::<usize>() == 1 {
        Ok(())
    } else {
        Err(Error::NonScalarOutput(shape))
    }
}

impl<F: Scalar> Tape<F> {
    /// `d out / d w` for each `w`, evaluated without recording.
    ///
    /// Tensors that `out` does not depend on get zero gradients.
    pub fn grad(&self, out: Var<'_, F>, wrt: &[Var<'_, F>]) -> Result<Vec<Tensor<F>>> {
        check_scalar(&out)?;
        let ids: Vec<usize> = wrt.iter().map(|w| w.id).collect();
        let raw = sweep(&Values(self), self, out.id, &ids)?;
        Ok(raw
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| match g {
                Some(g) => Rc::try_unwrap(g).unwrap_or_else(|rc| (*rc).clone()),
                None => Tensor::zeros(&w.shape()),
            })
            .collect())
    }

    /// Like [`grad`](Self::grad), but the backward pass is recorded on the tape
    /// so the returned gradients are themselves differentiable.
    pub fn grad_graph<'t>(&'t self, out: Var<'t, F>, wrt: &[Var<'t, F>]) -> Result<Vec<Var<'t, F>>> {
        if !self.higher_order() {
            return Err(Error::HigherOrderDisabled);
        }
        if out.order() > 0 {
            return Err(Error::OrderExceeded);
        }
        check_scalar(&out)?;
        let ids: Vec<usize> = wrt.iter().map(|w| w.id).collect();
        self.pass_order.set(1);
        let raw = sweep(&Graph(self), self, out.id, &ids);
        self.pass_order.set(0);
        Ok(raw?
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| g.unwrap_or_else(|| self.constant(Tensor::zeros(&w.shape()))))
            .collect())
    }

    /// Gradient of a scalar built from [`grad_graph`](Self::grad_graph) outputs.
    pub fn grad_of_grad(&self, out: Var<'_, F>, wrt: &[Var<'_, F>]) -> Result<Vec<Tensor<F>>> {
        if out.order() == 0 {
            return Err(Error::FirstOrderNotRecorded);
        }
        self.grad(out, wrt)
    }
}
