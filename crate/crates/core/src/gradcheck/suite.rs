//! Randomized gradient checks over every tape primitive and the full
//! generator-to-critic composition, shared by tests and the CLI.

use rand::Rng;

use super::{compare, relative_error, TapeFn};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::recnet::{DiscriminatorParams, DiscriminatorVars, Feed, GeneratorParams, GeneratorVars, ModelDims};
use crate::scalar::Scalar;
use crate::wgan::gradient_penalty;

/// One scalar function of leaf tensors plus a point to check it at.
pub struct Case<F: Scalar> {
    pub name: &'static str,
    /// 2 when the function itself contains a recorded backward pass.
    pub order: u8,
    pub inputs: Vec<Tensor<F>>,
    pub f: Box<dyn TapeFn<F>>,
}

fn rand_t<F: Scalar, R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> Tensor<F> {
    Tensor::from_fn(&[r, c], |_| F::lit(rng.random_range(-1.0..1.0)))
}

/// `sum(x * w)` with fixed random `w`, so every output entry matters.
fn weighted<'t, F: Scalar>(x: Var<'t, F>, w: &Tensor<F>) -> Result<Var<'t, F>> {
    x.mul(x.tape().constant(w.clone()))?.sum()
}

fn case<F: Scalar, C>(name: &'static str, order: u8, inputs: Vec<Tensor<F>>, f: C) -> Case<F>
where
    C: for<'t> Fn(&'t Tape<F>, &[Var<'t, F>]) -> Result<Var<'t, F>> + 'static,
{
    Case { name, order, inputs, f: Box::new(f) }
}

/// Each primitive wrapped into a scalar through a random weighting.
pub fn primitive_cases<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<Case<F>> {
    let a = rand_t::<F, R>(rng, 3, 4);
    let b = rand_t::<F, R>(rng, 3, 4);
    let m = rand_t::<F, R>(rng, 4, 2);
    let bias = rand_t::<F, R>(rng, 1, 4);
    let col = rand_t::<F, R>(rng, 3, 1);
    let pos = a.map(|x| x.abs() + F::lit(0.5));
    let w = |rng: &mut R, r, c| rand_t::<F, R>(rng, r, c);

    // Each case multiplies the primitive's output by fixed random weights
    // and sums, so every output entry reaches the scalar.
    macro_rules! prim {
        ($name:literal, $inputs:expr, $w:expr, |$t:ident, $v:ident| $body:expr) => {{
            let wt = $w;
            case($name, 1, $inputs, move |$t, $v| weighted($body, &wt))
        }};
    }
    let k = F::lit(-1.7);
    let half = F::lit(0.25);
    vec![
        prim!("matmul", vec![a.clone(), m.clone()], w(rng, 3, 2), |_t, v| v[0].matmul(v[1])?),
        prim!("matmul_tn", vec![a.clone(), b.clone()], w(rng, 4, 4), |_t, v| v[0].matmul_t(v[1], true, false)?),
        prim!("matmul_nt", vec![a.clone(), b.clone()], w(rng, 3, 3), |_t, v| v[0].matmul_t(v[1], false, true)?),
        prim!("matmul_tt", vec![a.clone(), m.clone()], w(rng, 2, 3), |_t, v| v[1].matmul_t(v[0], true, true)?),
        prim!("add", vec![a.clone(), b.clone()], w(rng, 3, 4), |_t, v| v[0].add(v[1])?),
        prim!("sub", vec![a.clone(), b.clone()], w(rng, 3, 4), |_t, v| v[0].sub(v[1])?),
        prim!("mul", vec![a.clone(), b.clone()], w(rng, 3, 4), |_t, v| v[0].mul(v[1])?),
        prim!("div", vec![a.clone(), pos.clone()], w(rng, 3, 4), |_t, v| v[0].div(v[1])?),
        prim!("add_bias", vec![a.clone(), bias.clone()], w(rng, 3, 4), |_t, v| v[0].add_bias(v[1])?),
        prim!("sigmoid", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].sigmoid()?),
        prim!("tanh", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].tanh()?),
        prim!("softmax_rows", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].softmax_rows()?),
        prim!("sum", vec![a.clone()], w(rng, 1, 1), |_t, v| v[0].square()?.sum()?),
        prim!("mean", vec![a.clone()], w(rng, 1, 1), |_t, v| v[0].square()?.mean()?),
        prim!("expand", vec![Tensor::scalar(F::lit(0.3))], w(rng, 3, 4), |_t, v| v[0].expand(&[3, 4])?),
        prim!("sum_rows", vec![a.clone()], w(rng, 1, 4), |_t, v| v[0].sum_rows()?),
        prim!("bcast_rows", vec![bias.clone()], w(rng, 3, 4), |_t, v| v[0].bcast_rows(3)?),
        prim!("sum_cols", vec![a.clone()], w(rng, 3, 1), |_t, v| v[0].sum_cols()?),
        prim!("bcast_cols", vec![col.clone()], w(rng, 3, 5), |_t, v| v[0].bcast_cols(5)?),
        prim!("square", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].square()?),
        prim!("sqrt", vec![pos.clone()], w(rng, 3, 4), |_t, v| v[0].sqrt()?),
        prim!("scale", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].scale(k)?),
        prim!("neg", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].neg()?),
        prim!("add_scalar", vec![a.clone()], w(rng, 3, 4), |_t, v| v[0].add_scalar(half)?),
        prim!("l2_norm", vec![a.clone()], w(rng, 1, 1), |_t, v| v[0].l2_norm()?),
        prim!("concat_cols", vec![a.clone(), b.clone()], w(rng, 3, 8), |t, v| t.concat_cols(&[v[0], v[1]])?),
        prim!("slice_cols", vec![a.clone()], w(rng, 3, 2), |_t, v| v[0].slice_cols(1, 3)?),
        prim!("embedding_lookup_weighted", vec![a.clone(), m.clone()], w(rng, 3, 2), |_t, v| {
            v[0].softmax_rows()?.embedding_lookup_weighted(v[1])?
        }),
    ]
}

fn random_dists<F: Scalar, R: Rng + ?Sized>(rng: &mut R, steps: usize, batch: usize, vocab: usize) -> Vec<Tensor<F>> {
    (0..steps)
        .map(|_| {
            let mut t = Tensor::from_fn(&[batch, vocab], |_| F::lit(rng.random_range(0.05..1.0)));
            for row in t.data_mut().chunks_exact_mut(vocab) {
                let s = row.iter().copied().sum::<F>();
                row.iter_mut().for_each(|x| *x /= s);
            }
            t
        })
        .collect()
}

/// Model-level checks: free-running and teacher-helped generators scored by
/// a critic, and the critic's gradient penalty (a second-order case).
pub fn model_cases<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<Case<F>>> {
    let dims = ModelDims::new(3, 2, 3);
    let gen = GeneratorParams::<F>::init(&dims, rng)?;
    let disc = DiscriminatorParams::<F>::init(&dims, rng)?;
    let z = rand_t::<F, R>(rng, 2, 3);
    let teacher = random_dists::<F, R>(rng, 2, 2, 3);
    let x_hat = random_dists::<F, R>(rng, 3, 2, 3);
    let gen_in: Vec<Tensor<F>> = gen.named().into_iter().map(|(_, t)| t.clone()).collect();
    let disc_in: Vec<Tensor<F>> = disc.named().into_iter().map(|(_, t)| t.clone()).collect();
    let mut both = gen_in.clone();
    both.extend(disc_in.iter().cloned());

    let zf = z.clone();
    let free = super::tape_fn(move |t: &Tape<F>, v: &[Var<'_, F>]| {
        let g = GeneratorVars::from_vars(t, &v[..13])?;
        let d = DiscriminatorVars::from_vars(t, &v[13..])?;
        d.score(&g.unroll(&zf, 3, Feed::Free)?, None)?.mean()
    });
    let zt = z.clone();
    let th = super::tape_fn(move |t: &Tape<F>, v: &[Var<'_, F>]| {
        let g = GeneratorVars::from_vars(t, &v[..13])?;
        let d = DiscriminatorVars::from_vars(t, &v[13..])?;
        let mut outs = g.unroll(&zt, 3, Feed::Teacher(&teacher))?;
        let last = outs.pop().unwrap();
        let mut xs: Vec<_> = teacher.iter().map(|s| t.constant(s.clone())).collect();
        xs.push(last);
        d.score(&xs, Some(&[2, 3]))?.mean()
    });
    let penalty = super::tape_fn(move |t: &Tape<F>, v: &[Var<'_, F>]| {
        let d = DiscriminatorVars::from_vars(t, v)?;
        let xs: Vec<_> = x_hat.iter().map(|s| t.var(s.clone())).collect();
        gradient_penalty(&d, &xs, None, F::lit(10.0), None)
    });
    Ok(vec![
        case("generator_to_critic", 1, both.clone(), free),
        case("teacher_helped_generator_to_critic", 1, both, th),
        case("gradient_penalty", 2, disc_in, penalty),
    ])
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub order: u8,
    pub instances: usize,
    pub worst: f64,
}

/// Runs every case `instances` times with fresh random points and reports
/// the worst relative error per case.
pub fn run<F: Scalar, R: Rng + ?Sized>(instances: usize, step: F, floor: F, rng: &mut R) -> Result<Vec<CheckResult>> {
    let mut results: Vec<CheckResult> = Vec::new();
    for _ in 0..instances {
        let mut cases = primitive_cases::<F, R>(rng);
        cases.extend(model_cases::<F, R>(rng)?);
        for c in cases {
            let worst = compare(&*c.f, &c.inputs, step)?
                .iter()
                .map(|(a, n)| relative_error(a, n, floor).to_f64().unwrap())
                .fold(0.0, f64::max);
            match results.iter_mut().find(|r| r.name == c.name) {
                Some(r) => {
                    r.instances += 1;
                    r.worst = r.worst.max(worst);
                }
                None => results.push(CheckResult { name: c.name, order: c.order, instances: 1, worst }),
            }
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn suite_passes_in_double_precision() {
        let res = run::<f64, _>(2, 1e-5, 1e-8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(res.len(), 31);
        for r in res {
            let tol = if r.order == 1 { 1e-4 } else { 1e-3 };
            assert!(r.worst < tol, "{} {}", r.name, r.worst);
        }
    }
}
