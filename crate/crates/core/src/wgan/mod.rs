//! WGAN gradient-penalty objective: critic and generator losses, interpolation
//! between real and generated batches, and the gradient penalty.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::recnet::DiscriminatorVars;
use crate::scalar::Scalar;
use crate::textdata::CharSeqBatch;

/// Added under the square root of the per-sample gradient norm.
pub const NORM_EPS: f64 = 1e-12;

/// How interpolation coefficients are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EpsMode {
    /// One coefficient per sequence.
    #[default]
    PerSequence,
    /// One coefficient shared by the whole batch.
    PerBatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLossConfig {
    pub lambda: f64,
    pub eps_mode: EpsMode,
}

impl Default for GanLossConfig {
    fn default() -> Self {
        GanLossConfig { lambda: 10.0, eps_mode: EpsMode::PerSequence }
    }
}

impl GanLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Anything that maps per-position `B x V` inputs to `B x 1` scores.
pub trait Critic<'t, F: Scalar> {
    fn score(&self, xs: &[Var<'t, F>], lengths: Option<&[usize]>) -> Result<Var<'t, F>>;
}

impl<'t, F: Scalar> Critic<'t, F> for DiscriminatorVars<'t, F> {
    fn score(&self, xs: &[Var<'t, F>], lengths: Option<&[usize]>) -> Result<Var<'t, F>> {
        DiscriminatorVars::score(self, xs, lengths)
    }
}

/// `sum_b w_b s_b`, or the plain mean without weights.
fn batch_mean<'t, F: Scalar>(scores: Var<'t, F>, weights: Option<&Tensor<F>>) -> Result<Var<'t, F>> {
    match weights {
        None => scores.mean(),
        Some(w) => scores.mul(scores.tape().constant(w.clone()))?.sum(),
    }
}

/// `L_G = -E[D(fake)]`.
///
/// `weights` (`B x 1`) turns the mean into a weighted sum, which is how a
/// batch mixing several sequence lengths sums one mean per length.
pub fn generator_loss<'t, F: Scalar>(fake: Var<'t, F>, weights: Option<&Tensor<F>>) -> Result<Var<'t, F>> {
    batch_mean(fake, weights)?.neg()
}

/// `L_D = E[D(fake)] - E[D(real)] + penalty`.
pub fn discriminator_loss<'t, F: Scalar>(
    fake: Var<'t, F>,
    real: Var<'t, F>,
    penalty: Var<'t, F>,
    weights: Option<&Tensor<F>>,
) -> Result<Var<'t, F>> {
    batch_mean(fake, weights)?.sub(batch_mean(real, weights)?)?.add(penalty)
}

/// Plain-value generator loss.
pub fn generator_loss_value<F: Scalar>(fake: &[F]) -> Result<F> {
    if fake.is_empty() {
        return Err(Error::EmptyBatch("generator_loss"));
    }
    Ok(-fake.iter().copied().sum::<F>() / F::from_usize(fake.len()).unwrap())
}

/// Plain-value critic loss.
pub fn discriminator_loss_value<F: Scalar>(fake: &[F], real: &[F], penalty: F) -> Result<F> {
    if fake.is_empty() || real.is_empty() {
        return Err(Error::EmptyBatch("discriminator_loss"));
    }
    let mean = |s: &[F]| s.iter().copied().sum::<F>() / F::from_usize(s.len()).unwrap();
    Ok(mean(fake) - mean(real) + penalty)
}

/// Draws interpolation coefficients for `batch` sequences.
pub fn sample_eps<F: Scalar, R: Rng + ?Sized>(batch: usize, mode: EpsMode, rng: &mut R) -> Vec<F> {
    match mode {
        EpsMode::PerSequence => (0..batch).map(|_| F::lit(rng.random::<f64>())).collect(),
        EpsMode::PerBatch => vec![F::lit(rng.random::<f64>()); batch],
    }
}

/// `eps_b * real_b + (1 - eps_b) * fake_b` on per-position matrices.
pub fn interpolate_steps<F: Scalar>(real: &[Tensor<F>], fake: &[Tensor<F>], eps: &[F]) -> Result<Vec<Tensor<F>>> {
    if real.len() != fake.len() {
        return Err(Error::shape("interpolate", &[&[real.len()], &[fake.len()]]));
    }
    real.iter()
        .zip(fake)
        .map(|(r, f)| {
            if r.shape() != f.shape() || r.rows() != eps.len() {
                return Err(Error::shape("interpolate", &[r.shape(), f.shape(), &[eps.len()]]));
            }
            let v = r.cols();
            let mut out = Tensor::zeros(r.shape());
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                let e = eps[i / v];
                *o = e * r.data()[i] + (F::one() - e) * f.data()[i];
            }
            Ok(out)
        })
        .collect()
}

/// Interpolates two equally shaped batches with explicit coefficients.
pub fn interpolate_with<F: Scalar>(real: &CharSeqBatch<F>, fake: &CharSeqBatch<F>, eps: &[F]) -> Result<CharSeqBatch<F>> {
    if real.batch_size() != fake.batch_size() || real.len() != fake.len() || real.vocab_size() != fake.vocab_size() {
        return Err(Error::shape(
            "interpolate",
            &[
                &[real.batch_size(), real.len(), real.vocab_size()],
                &[fake.batch_size(), fake.len(), fake.vocab_size()],
            ],
        ));
    }
    CharSeqBatch::from_steps(interpolate_steps(real.steps(), fake.steps(), eps)?)
}

/// A point drawn uniformly on the segment between each real and fake sequence.
pub fn interpolate<F: Scalar, R: Rng + ?Sized>(
    real: &CharSeqBatch<F>,
    fake: &CharSeqBatch<F>,
    mode: EpsMode,
    rng: &mut R,
) -> Result<CharSeqBatch<F>> {
    let eps = sample_eps(real.batch_size(), mode, rng);
    interpolate_with(real, fake, &eps)
}

/// Per-sample `(|grad_{x_b} D(x_b)|_2 - 1)^2` as a `B x 1` column.
///
/// `x_hat` must be leaves created with [`Tape::var`] on a higher-order tape.
/// The norm runs over every position and character of a sample.
pub fn penalty_terms<'t, F: Scalar, C: Critic<'t, F>>(
    critic: &C,
    x_hat: &[Var<'t, F>],
    lengths: Option<&[usize]>,
) -> Result<Var<'t, F>> {
    let first = x_hat.first().ok_or(Error::EmptyBatch("gradient_penalty"))?;
    let tape = first.tape();
    // Each score depends only on its own sample, so the gradient of the sum
    // is the per-sample input gradient.
    let total = critic.score(x_hat, lengths)?.sum()?;
    let grads = tape.grad_graph(total, x_hat)?;
    let mut sq: Option<Var<'t, F>> = None;
    for g in grads {
        let s = g.square()?.sum_cols()?;
        sq = Some(match sq {
            None => s,
            Some(acc) => acc.add(s)?,
        });
    }
    let norms = sq.unwrap().add_scalar(F::lit(NORM_EPS))?.sqrt()?;
    norms.add_scalar(-F::one())?.square()
}

/// `lambda * mean_b (|grad_{x_b} D(x_b)|_2 - 1)^2`, recorded so it can be
/// differentiated with respect to the critic's parameters.
pub fn gradient_penalty<'t, F: Scalar, C: Critic<'t, F>>(
    critic: &C,
    x_hat: &[Var<'t, F>],
    lengths: Option<&[usize]>,
    lambda: F,
    weights: Option<&Tensor<F>>,
) -> Result<Var<'t, F>> {
    batch_mean(penalty_terms(critic, x_hat, lengths)?, weights)?.scale(lambda)
}

/// Convenience wrapper registering `x_hat` on `tape` first.
pub fn gradient_penalty_batch<'t, F: Scalar, C: Critic<'t, F>>(
    tape: &'t Tape<F>,
    critic: &C,
    x_hat: &CharSeqBatch<F>,
    lambda: F,
) -> Result<Var<'t, F>> {
    let xs: Vec<_> = x_hat.steps().iter().map(|s| tape.var(s.clone())).collect();
    gradient_penalty(critic, &xs, None, lambda, None)
}
