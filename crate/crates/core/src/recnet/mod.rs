//! GRU generator and discriminator.
//!
//! The generator starts from a noise vector used as its hidden state and an
//! embedded start symbol. Each step emits a softmax distribution over
//! characters; the next input is that distribution's weighted average of
//! embedding rows, so free-running generation stays differentiable. The
//! discriminator embeds each input distribution the same way and maps its
//! final hidden state to one unbounded score.
//!
//! Gate convention: `h' = (1 - z) * h + z * tanh(x W_h + (r * h) U_h + b_h)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textdata::{CharSeqBatch, Vocab};

/// Layer sizes shared by both networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub noise: usize,
    /// Learn a `noise x hidden` projection; otherwise noise is the initial
    /// hidden state and `noise` must equal `hidden`.
    pub noise_proj: bool,
}

impl ModelDims {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Self {
        ModelDims { vocab, embed, hidden, noise: hidden, noise_proj: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.embed == 0 || self.hidden == 0 || self.noise == 0 {
            return Err(Error::Config(format!("model dimensions must be positive (vocab >= 2): {self:?}")));
        }
        if !self.noise_proj && self.noise != self.hidden {
            return Err(Error::Config(format!(
                "noise dim {} must equal hidden dim {} without a noise projection",
                self.noise, self.hidden
            )));
        }
        Ok(())
    }
}

fn uniform_init<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<F> {
    let s = 1.0 / (rows as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| F::lit(rng.random_range(-s..s)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<F: Scalar> {
    pub w_z: Tensor<F>,
    pub w_r: Tensor<F>,
    pub w_h: Tensor<F>,
    pub u_z: Tensor<F>,
    pub u_r: Tensor<F>,
    pub u_h: Tensor<F>,
    pub b_z: Tensor<F>,
    pub b_r: Tensor<F>,
    pub b_h: Tensor<F>,
}

const GRU_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl<F: Scalar> GruParams<F> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruParams {
            w_z: uniform_init(input, hidden, rng),
            w_r: uniform_init(input, hidden, rng),
            w_h: uniform_init(input, hidden, rng),
            u_z: uniform_init(hidden, hidden, rng),
            u_r: uniform_init(hidden, hidden, rng),
            u_h: uniform_init(hidden, hidden, rng),
            b_z: Tensor::zeros(&[1, hidden]),
            b_r: Tensor::zeros(&[1, hidden]),
            b_h: Tensor::zeros(&[1, hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let m = |r, c| Tensor::zeros(&[r, c]);
        GruParams {
            w_z: m(input, hidden),
            w_r: m(input, hidden),
            w_h: m(input, hidden),
            u_z: m(hidden, hidden),
            u_r: m(hidden, hidden),
            u_h: m(hidden, hidden),
            b_z: m(1, hidden),
            b_r: m(1, hidden),
            b_h: m(1, hidden),
        }
    }

    fn tensors(&self) -> [&Tensor<F>; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<F>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    fn check(&self, input: usize, hidden: usize) -> Result<()> {
        let expect = |i: usize| match i {
            0..=2 => [input, hidden],
            3..=5 => [hidden, hidden],
            _ => [1, hidden],
        };
        for (i, t) in self.tensors().into_iter().enumerate() {
            if t.shape() != expect(i) {
                return Err(Error::shape("GruParams", &[t.shape(), &expect(i)]));
            }
        }
        Ok(())
    }
}

/// Parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars<'t, F: Scalar> {
    w_z: Var<'t, F>,
    w_r: Var<'t, F>,
    w_h: Var<'t, F>,
    u_z: Var<'t, F>,
    u_r: Var<'t, F>,
    u_h: Var<'t, F>,
    b_z: Var<'t, F>,
    b_r: Var<'t, F>,
    b_h: Var<'t, F>,
}

fn bind<'t, F: Scalar>(tape: &'t Tape<F>, t: &Tensor<F>, trainable: bool) -> Var<'t, F> {
    if trainable {
        tape.var(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

impl<'t, F: Scalar> GruVars<'t, F> {
    fn from_slice(v: &[Var<'t, F>]) -> Self {
        GruVars { w_z: v[0], w_r: v[1], w_h: v[2], u_z: v[3], u_r: v[4], u_h: v[5], b_z: v[6], b_r: v[7], b_h: v[8] }
    }

    fn bind(p: &GruParams<F>, tape: &'t Tape<F>, trainable: bool) -> Self {
        let b = |t| bind(tape, t, trainable);
        GruVars {
            w_z: b(&p.w_z),
            w_r: b(&p.w_r),
            w_h: b(&p.w_h),
            u_z: b(&p.u_z),
            u_r: b(&p.u_r),
            u_h: b(&p.u_h),
            b_z: b(&p.b_z),
            b_r: b(&p.b_r),
            b_h: b(&p.b_h),
        }
    }

    fn all(&self) -> [Var<'t, F>; 9] {
        [self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h]
    }

    /// One recurrence step for a `B x E` input and `B x H` state.
    pub fn step(&self, x: Var<'t, F>, h: Var<'t, F>) -> Result<Var<'t, F>> {
        let z = x.matmul(self.w_z)?.add(h.matmul(self.u_z)?)?.add_bias(self.b_z)?.sigmoid()?;
        let r = x.matmul(self.w_r)?.add(h.matmul(self.u_r)?)?.add_bias(self.b_r)?.sigmoid()?;
        let cand = x.matmul(self.w_h)?.add(r.mul(h)?.matmul(self.u_h)?)?.add_bias(self.b_h)?.tanh()?;
        // (1 - z) * h + z * cand
        h.add(z.mul(cand.sub(h)?)?)
    }
}

/// Value-level GRU step.
pub fn gru_step<F: Scalar>(params: &GruParams<F>, x: &Tensor<F>, h: &Tensor<F>) -> Result<Tensor<F>> {
    let tape = Tape::new();
    let vars = GruVars::bind(params, &tape, false);
    let out = vars.step(tape.constant(x.clone()), tape.constant(h.clone()))?;
    Ok((*out.value()).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<F: Scalar> {
    pub gru: GruParams<F>,
    /// `V x E` character embeddings.
    pub embed: Tensor<F>,
    /// `H x V` softmax projection.
    pub out_proj: Tensor<F>,
    pub out_bias: Tensor<F>,
    /// `1 x E` start-of-sequence embedding.
    pub sos: Tensor<F>,
    /// `Z x H`, absent when the noise is the initial state directly.
    pub noise_proj: Option<Tensor<F>>,
}

impl<F: Scalar> GeneratorParams<F> {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        Ok(GeneratorParams {
            gru: GruParams::init(dims.embed, dims.hidden, rng),
            embed: uniform_init(dims.vocab, dims.embed, rng),
            out_proj: uniform_init(dims.hidden, dims.vocab, rng),
            out_bias: Tensor::zeros(&[1, dims.vocab]),
            sos: uniform_init(1, dims.embed, rng),
            noise_proj: dims.noise_proj.then(|| uniform_init(dims.noise, dims.hidden, rng)),
        })
    }

    pub fn dims(&self) -> ModelDims {
        let hidden = self.gru.u_z.rows();
        ModelDims {
            vocab: self.embed.rows(),
            embed: self.embed.cols(),
            hidden,
            noise: self.noise_proj.as_ref().map_or(hidden, |p| p.rows()),
            noise_proj: self.noise_proj.is_some(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        self.gru.check(d.embed, d.hidden)?;
        let pairs: [(&Tensor<F>, [usize; 2]); 3] =
            [(&self.out_proj, [d.hidden, d.vocab]), (&self.out_bias, [1, d.vocab]), (&self.sos, [1, d.embed])];
        for (t, s) in pairs {
            if t.shape() != s {
                return Err(Error::shape("GeneratorParams", &[t.shape(), &s]));
            }
        }
        if let Some(p) = &self.noise_proj {
            if p.cols() != d.hidden {
                return Err(Error::shape("GeneratorParams", &[p.shape(), &[d.noise, d.hidden]]));
            }
        }
        Ok(())
    }

    /// Parameters in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> =
            GRU_NAMES.iter().zip(self.gru.tensors()).map(|(n, t)| (format!("gen.gru.{n}"), t)).collect();
        out.push(("gen.embed".into(), &self.embed));
        out.push(("gen.out_proj".into(), &self.out_proj));
        out.push(("gen.out_bias".into(), &self.out_bias));
        out.push(("gen.sos".into(), &self.sos));
        if let Some(p) = &self.noise_proj {
            out.push(("gen.noise_proj".into(), p));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out: Vec<&mut Tensor<F>> = self.gru.tensors_mut().into_iter().collect();
        out.extend([&mut self.embed, &mut self.out_proj, &mut self.out_bias, &mut self.sos]);
        if let Some(p) = &mut self.noise_proj {
            out.push(p);
        }
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape<F>, trainable: bool) -> GeneratorVars<'t, F> {
        GeneratorVars {
            gru: GruVars::bind(&self.gru, tape, trainable),
            embed: bind(tape, &self.embed, trainable),
            out_proj: bind(tape, &self.out_proj, trainable),
            out_bias: bind(tape, &self.out_bias, trainable),
            sos: bind(tape, &self.sos, trainable),
            noise_proj: self.noise_proj.as_ref().map(|p| bind(tape, p, trainable)),
            tape,
        }
    }
}

/// How the generator's inputs after the start symbol are chosen.
#[derive(Clone, Copy, Debug)]
pub enum Feed<'a, F: Scalar> {
    /// Feed back the previous step's own output distribution.
    Free,
    /// Feed the given `B x V` distributions (real characters for teacher helping).
    Teacher(&'a [Tensor<F>]),
}

#[derive(Clone, Debug)]
pub struct GeneratorVars<'t, F: Scalar> {
    pub gru: GruVars<'t, F>,
    pub embed: Var<'t, F>,
    pub out_proj: Var<'t, F>,
    pub out_bias: Var<'t, F>,
    pub sos: Var<'t, F>,
    pub noise_proj: Option<Var<'t, F>>,
    tape: &'t Tape<F>,
}

impl<'t, F: Scalar> GeneratorVars<'t, F> {
    /// Rebuilds the bundle from variables in [`GeneratorParams::named`] order.
    pub fn from_vars(tape: &'t Tape<F>, v: &[Var<'t, F>]) -> Result<Self> {
        if v.len() != 13 && v.len() != 14 {
            return Err(Error::Config(format!("generator needs 13 or 14 variables, got {}", v.len())));
        }
        Ok(GeneratorVars {
            gru: GruVars::from_slice(&v[..9]),
            embed: v[9],
            out_proj: v[10],
            out_bias: v[11],
            sos: v[12],
            noise_proj: v.get(13).copied(),
            tape,
        })
    }

    /// Same order as [`GeneratorParams::named`].
    pub fn all(&self) -> Vec<Var<'t, F>> {
        let mut out: Vec<Var<'t, F>> = self.gru.all().into();
        out.extend([self.embed, self.out_proj, self.out_bias, self.sos]);
        out.extend(self.noise_proj);
        out
    }

    fn initial_state(&self, z: &Tensor<F>) -> Result<Var<'t, F>> {
        let z = self.tape.constant(z.clone());
        match self.noise_proj {
            Some(p) => z.matmul(p),
            None => Ok(z),
        }
    }

    /// Output distributions `alpha_1..alpha_steps`, each `B x V`.
    pub fn unroll(&self, z: &Tensor<F>, steps: usize, feed: Feed<'_, F>) -> Result<Vec<Var<'t, F>>> {
        if steps == 0 {
            return Err(Error::Config("generation length must be >= 1".into()));
        }
        if let Feed::Teacher(inputs) = feed {
            if inputs.len() + 1 < steps {
                return Err(Error::Config(format!(
                    "teacher feed has {} inputs, {steps} steps need {}",
                    inputs.len(),
                    steps - 1
                )));
            }
        }
        let batch = z.rows();
        let mut h = self.initial_state(z)?;
        if h.shape()[1] != self.gru.u_z.shape()[0] {
            return Err(Error::shape("generate", &[&h.shape(), &self.gru.u_z.shape()]));
        }
        let mut x = self.sos.bcast_rows(batch)?;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            h = self.gru.step(x, h)?;
            let alpha = h.matmul(self.out_proj)?.add_bias(self.out_bias)?.softmax_rows()?;
            outs.push(alpha);
            if t + 1 < steps {
                let dist = match feed {
                    Feed::Free => alpha,
                    Feed::Teacher(inputs) => self.tape.constant(inputs[t].clone()),
                };
                x = dist.embedding_lookup_weighted(self.embed)?;
            }
        }
        Ok(outs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<F: Scalar> {
    pub gru: GruParams<F>,
    pub embed: Tensor<F>,
    /// `H x 1` score projection.
    pub score_proj: Tensor<F>,
    pub score_bias: Tensor<F>,
}

impl<F: Scalar> DiscriminatorParams<F> {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        Ok(DiscriminatorParams {
            gru: GruParams::init(dims.embed, dims.hidden, rng),
            embed: uniform_init(dims.vocab, dims.embed, rng),
            score_proj: uniform_init(dims.hidden, 1, rng),
            score_bias: Tensor::zeros(&[1, 1]),
        })
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        DiscriminatorParams {
            gru: GruParams::zeros(dims.embed, dims.hidden),
            embed: Tensor::zeros(&[dims.vocab, dims.embed]),
            score_proj: Tensor::zeros(&[dims.hidden, 1]),
            score_bias: Tensor::zeros(&[1, 1]),
        }
    }

    pub fn check(&self) -> Result<()> {
        let (e, h) = (self.embed.cols(), self.gru.u_z.rows());
        self.gru.check(e, h)?;
        if self.score_proj.shape() != [h, 1] || self.score_bias.shape() != [1, 1] {
            return Err(Error::shape("DiscriminatorParams", &[self.score_proj.shape(), self.score_bias.shape()]));
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> =
            GRU_NAMES.iter().zip(self.gru.tensors()).map(|(n, t)| (format!("disc.gru.{n}"), t)).collect();
        out.push(("disc.embed".into(), &self.embed));
        out.push(("disc.score_proj".into(), &self.score_proj));
        out.push(("disc.score_bias".into(), &self.score_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out: Vec<&mut Tensor<F>> = self.gru.tensors_mut().into_iter().collect();
        out.extend([&mut self.embed, &mut self.score_proj, &mut self.score_bias]);
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape<F>, trainable: bool) -> DiscriminatorVars<'t, F> {
        DiscriminatorVars {
            gru: GruVars::bind(&self.gru, tape, trainable),
            embed: bind(tape, &self.embed, trainable),
            score_proj: bind(tape, &self.score_proj, trainable),
            score_bias: bind(tape, &self.score_bias, trainable),
            tape,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorVars<'t, F: Scalar> {
    pub gru: GruVars<'t, F>,
    pub embed: Var<'t, F>,
    pub score_proj: Var<'t, F>,
    pub score_bias: Var<'t, F>,
    tape: &'t Tape<F>,
}

impl<'t, F: Scalar> DiscriminatorVars<'t, F> {
    /// Rebuilds the bundle from variables in [`DiscriminatorParams::named`] order.
    pub fn from_vars(tape: &'t Tape<F>, v: &[Var<'t, F>]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::Config(format!("discriminator needs 12 variables, got {}", v.len())));
        }
        Ok(DiscriminatorVars { gru: GruVars::from_slice(&v[..9]), embed: v[9], score_proj: v[10], score_bias: v[11], tape })
    }

    pub fn all(&self) -> Vec<Var<'t, F>> {
        let mut out: Vec<Var<'t, F>> = self.gru.all().into();
        out.extend([self.embed, self.score_proj, self.score_bias]);
        out
    }

    /// `B x 1` scores of sequences given as per-position `B x V` inputs.
    ///
    /// With `lengths`, row `b` is read out after `lengths[b]` positions; later
    /// positions of that row do not affect its score.
    pub fn score(&self, xs: &[Var<'t, F>], lengths: Option<&[usize]>) -> Result<Var<'t, F>> {
        let first = xs.first().ok_or(Error::EmptyBatch("discriminate"))?;
        let batch = first.shape()[0];
        let hidden = self.gru.u_z.shape()[0];
        if let Some(l) = lengths {
            if l.len() != batch || l.iter().any(|&n| n == 0 || n > xs.len()) {
                return Err(Error::Config(format!("row lengths {l:?} invalid for {} positions", xs.len())));
            }
        }
        let mut h = self.tape.constant(Tensor::zeros(&[batch, hidden]));
        let mut readout: Option<Var<'t, F>> = None;
        for (t, &x) in xs.iter().enumerate() {
            let e = x.embedding_lookup_weighted(self.embed)?;
            h = self.gru.step(e, h)?;
            if let Some(l) = lengths {
                if l.iter().all(|&n| n == xs.len()) {
                    continue;
                }
                if !l.contains(&(t + 1)) {
                    continue;
                }
                let mask = Tensor::from_fn(&[batch, hidden], |i| {
                    if l[i / hidden] == t + 1 { F::one() } else { F::zero() }
                });
                let part = h.mul(self.tape.constant(mask))?;
                readout = Some(match readout {
                    None => part,
                    Some(r) => r.add(part)?,
                });
            }
        }
        let last = readout.unwrap_or(h);
        last.matmul(self.score_proj)?.add_bias(self.score_bias)
    }
}

/// `rows x dim` Gaussian noise with the given standard deviation.
pub fn sample_noise<F: Scalar, R: Rng + ?Sized>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Tensor<F> {
    Tensor::from_fn(&[rows, dim], |_| {
        let g: f64 = rng.sample(StandardNormal);
        F::lit(g * std)
    })
}

/// Free-running generation of `len` soft characters.
pub fn generate_free<F: Scalar>(params: &GeneratorParams<F>, z: &Tensor<F>, len: usize) -> Result<CharSeqBatch<F>> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let outs = vars.unroll(z, len, Feed::Free)?;
    CharSeqBatch::from_steps(outs.iter().map(|v| (*v.value()).clone()).collect())
}

/// Final-position distribution after consuming a real one-hot prefix.
pub fn generate_th<F: Scalar>(
    params: &GeneratorParams<F>,
    z: &Tensor<F>,
    prefix: &CharSeqBatch<F>,
) -> Result<Tensor<F>> {
    if !prefix.is_onehot() {
        return Err(Error::SoftPrefix);
    }
    if prefix.batch_size() != z.rows() {
        return Err(Error::shape("generate_th", &[&[prefix.batch_size()], z.shape()]));
    }
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let outs = vars.unroll(z, prefix.len() + 1, Feed::Teacher(prefix.steps()))?;
    Ok((*outs.last().unwrap().value()).clone())
}

/// One score per sequence, `B x 1`.
pub fn discriminate<F: Scalar>(params: &DiscriminatorParams<F>, batch: &CharSeqBatch<F>) -> Result<Tensor<F>> {
    if batch.vocab_size() != params.embed.rows() {
        return Err(Error::shape("discriminate", &[&[batch.vocab_size()], params.embed.shape()]));
    }
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let xs: Vec<_> = batch.steps().iter().map(|s| tape.constant(s.clone())).collect();
    Ok((*vars.score(&xs, None)?.value()).clone())
}

/// Most probable character at every position; ties go to the lowest id.
pub fn decode_argmax<F: Scalar>(batch: &CharSeqBatch<F>, vocab: &Vocab) -> Vec<String> {
    batch.argmax_ids().iter().map(|ids| vocab.decode(ids)).collect()
}

#[cfg(test)]
mod tests;
