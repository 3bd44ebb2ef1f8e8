//! Central finite-difference checks for tape-computed gradients.
//!
//! The numeric side only evaluates the forward function, so it stays
//! independent of the backward pass being checked.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Relative error `|a - b|_2 / max(|a|_2, |b|_2, floor)`.
pub fn relative_error<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, floor: F) -> F {
    let mut diff = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}

/// Numeric gradient of `f` with respect to `inputs[which]`.
pub fn numeric_grad<F: Scalar>(
    f: &impl Fn(&[Tensor<F>]) -> Result<F>,
    inputs: &[Tensor<F>],
    which: usize,
    step: F,
) -> Result<Tensor<F>> {
    let mut probe = inputs.to_vec();
    let n = inputs[which].numel();
    let mut out = Tensor::zeros(inputs[which].shape());
    let two = F::lit(2.0);
    for i in 0..n {
        let orig = inputs[which].data()[i];
        probe[which].data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe[which].data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe[which].data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (two * step);
    }
    Ok(out)
}

/// A scalar function built on a tape from leaf variables.
pub trait TapeFn<F: Scalar> {
    fn eval<'t>(&self, tape: &'t Tape<F>, vars: &[Var<'t, F>]) -> Result<Var<'t, F>>;
}

impl<F: Scalar, T> TapeFn<F> for T
where
    T: for<'t> Fn(&'t Tape<F>, &[Var<'t, F>]) -> Result<Var<'t, F>>,
{
    fn eval<'t>(&self, tape: &'t Tape<F>, vars: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        self(tape, vars)
    }
}

fn forward_value<F: Scalar>(f: &(impl TapeFn<F> + ?Sized), inputs: &[Tensor<F>]) -> Result<F> {
    let tape = Tape::with_higher_order();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    Ok(f.eval(&tape, &vars)?.item())
}

/// Analytic and numeric gradients of `f` for every input.
pub fn compare<F: Scalar>(
    f: &(impl TapeFn<F> + ?Sized),
    inputs: &[Tensor<F>],
    step: F,
) -> Result<Vec<(Tensor<F>, Tensor<F>)>> {
    let tape = Tape::with_higher_order();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f.eval(&tape, &vars)?;
    let analytic = tape.grad(out, &vars)?;
    let value_fn = |xs: &[Tensor<F>]| forward_value(f, xs);
    analytic
        .into_iter()
        .enumerate()
        .map(|(i, a)| Ok((a, numeric_grad(&value_fn, inputs, i, step)?)))
        .collect()
}

/// Worst relative error over all inputs.
pub fn max_relative_error<F: Scalar>(
    f: &(impl TapeFn<F> + ?Sized),
    inputs: &[Tensor<F>],
    step: F,
    floor: F,
) -> Result<F> {
    Ok(compare(f, inputs, step)?
        .iter()
        .map(|(a, n)| relative_error(a, n, floor))
        .fold(F::zero(), F::max))
}

/// Pins a closure to the higher-ranked signature expected by [`TapeFn`].
pub fn tape_fn<F: Scalar, C>(c: C) -> C
where
    C: for<'t> Fn(&'t Tape<F>, &[Var<'t, F>]) -> Result<Var<'t, F>>,
{
    c
}

pub mod suite;
