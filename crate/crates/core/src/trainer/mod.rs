//! Adversarial training loop.
//!
//! Training runs in outer cycles of `disc_iters` critic updates followed by
//! `gen_iters` generator updates. One iteration is one optimizer update of
//! either network; the length schedule advances once per completed cycle.
//!
//! Every update trains all lengths of the current plan in one padded batch:
//! rows of length `l` are read out by the critic after `l` positions and
//! weighted by one over the number of rows sharing that length, so the loss
//! is the sum of one batch mean per length.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::curriculum::{advance, plan_step, SchedulePolicy, StepPlan};
use crate::error::{CheckpointError, Error, Result};
use crate::eval::{evaluate_model, EvalConfig, EvalReport, NgramIndex};
use crate::optim::AdamConfig;
use crate::recnet::{sample_noise, Feed, GeneratorVars, ModelDims};
use crate::textdata::{Corpus, Vocab};
use crate::wgan::{interpolate_steps, penalty_terms, sample_eps, GanLossConfig};

mod state;

pub use state::{vocab_from_meta, vocab_to_meta, Counters, TrainerState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Rows per update, split evenly across the planned lengths.
    pub batch_size: usize,
    pub disc_iters: u64,
    pub gen_iters: u64,
    pub noise_std: f64,
    pub adam: AdamConfig,
    /// Critic learning rate, `adam.lr` when unset.
    pub disc_lr: Option<f64>,
    pub gan: GanLossConfig,
    /// Optimizer updates of either network to run in total.
    pub total_iters: u64,
    /// Updates between checkpoints, 0 for none.
    pub checkpoint_every: u64,
    /// Updates between evaluations, 0 for none.
    pub eval_every: u64,
    /// Updates between logged losses.
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            disc_iters: 10,
            gen_iters: 50,
            noise_std: 10f64.sqrt(),
            adam: AdamConfig::default(),
            disc_lr: None,
            gan: GanLossConfig::default(),
            total_iters: 2000,
            checkpoint_every: 0,
            eval_every: 0,
            log_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.disc_iters == 0 || self.gen_iters == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size, disc_iters, gen_iters and log_every must be >= 1".into()));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be positive, got {}", self.noise_std)));
        }
        self.adam.validate()?;
        self.disc_adam().validate()?;
        self.gan.validate()
    }

    pub fn disc_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.disc_lr.unwrap_or(self.adam.lr), ..self.adam }
    }

    pub fn cycle_len(&self) -> u64 {
        self.disc_iters + self.gen_iters
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Disc,
    Gen,
}

/// Loss of one update, in total and per planned length.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    pub iter: u64,
    pub kind: UpdateKind,
    pub loss: f32,
    pub per_length: Vec<(usize, f32)>,
}

/// Row arrangement of one padded batch.
#[derive(Clone, Debug)]
struct Layout {
    lengths: Vec<usize>,
    th: Vec<bool>,
    groups: Vec<(usize, usize)>,
    weights: Tensor<f32>,
    max_len: usize,
}

impl Layout {
    fn new(plan: &StepPlan, batch: usize) -> Result<Self> {
        if plan.lengths.is_empty() {
            return Err(Error::EmptyBatch("plan"));
        }
        let per = plan.rows_per_length(batch);
        let mut lengths = Vec::new();
        let mut th = Vec::new();
        let mut groups = Vec::new();
        for (len, t) in plan.iter() {
            lengths.extend(std::iter::repeat_n(len, per));
            th.extend(std::iter::repeat_n(t, per));
            groups.push((len, per));
        }
        let w = 1.0 / per as f32;
        let weights = Tensor::filled(&[lengths.len(), 1], w);
        Ok(Layout { max_len: plan.longest(), lengths, th, groups, weights })
    }

    fn rows(&self) -> usize {
        self.lengths.len()
    }

    /// `None` when every row spans the whole batch.
    fn readout(&self) -> Option<&[usize]> {
        self.lengths.iter().any(|&l| l != self.max_len).then_some(&self.lengths[..])
    }

    /// Mean of a per-row column within each length group.
    fn group_means(&self, col: &Tensor<f32>) -> Vec<(usize, f32)> {
        let mut out = Vec::with_capacity(self.groups.len());
        let mut start = 0;
        for &(len, n) in &self.groups {
            let s: f32 = col.data()[start..start + n].iter().sum();
            out.push((len, s / n as f32));
            start += n;
        }
        out
    }

    fn row_mask(&self, vocab: usize, keep: impl Fn(usize, bool) -> bool) -> Option<Tensor<f32>> {
        let rows: Vec<bool> = self.lengths.iter().zip(&self.th).map(|(&l, &t)| keep(l, t)).collect();
        if !rows.iter().any(|&k| k) {
            return None;
        }
        Some(Tensor::from_fn(&[self.rows(), vocab], |i| if rows[i / vocab] { 1.0 } else { 0.0 }))
    }
}

/// One-hot `R x V` steps with zero rows past each window's end.
fn padded_onehot(windows: &[Vec<usize>], max_len: usize, vocab: usize) -> Vec<Tensor<f32>> {
    (0..max_len)
        .map(|t| {
            let mut m = Tensor::zeros(&[windows.len(), vocab]);
            for (r, w) in windows.iter().enumerate() {
                if let Some(&c) = w.get(t) {
                    m.data_mut()[r * vocab + c] = 1.0;
                }
            }
            m
        })
        .collect()
}

/// Generated inputs for the critic: free-running rows are the generator's
/// own outputs; teacher-helped rows are the real prefix followed by the
/// generated final character.
fn fake_steps<'t>(
    tape: &'t Tape<f32>,
    gen: &GeneratorVars<'t, f32>,
    z: &Tensor<f32>,
    real: &[Tensor<f32>],
    layout: &Layout,
) -> Result<Vec<Var<'t, f32>>> {
    let any_th = layout.th.iter().any(|&t| t);
    let any_free = layout.th.iter().any(|&t| !t);
    let free = if any_free { Some(gen.unroll(z, layout.max_len, Feed::Free)?) } else { None };
    if !any_th {
        return Ok(free.unwrap());
    }
    let teach = gen.unroll(z, layout.max_len, Feed::Teacher(real))?;
    let vocab = real[0].cols();
    let mut out = Vec::with_capacity(layout.max_len);
    for t in 0..layout.max_len {
        let mut acc: Option<Var<'t, f32>> = None;
        let mut push = |v: Var<'t, f32>| -> Result<()> {
            acc = Some(match acc {
                None => v,
                Some(a) => a.add(v)?,
            });
            Ok(())
        };
        if let Some(free) = &free {
            if let Some(m) = layout.row_mask(vocab, |l, th| !th && t < l) {
                push(free[t].mul(tape.constant(m))?)?;
            }
        }
        if let Some(m) = layout.row_mask(vocab, |l, th| th && t + 1 == l) {
            push(teach[t].mul(tape.constant(m))?)?;
        }
        if let Some(m) = layout.row_mask(vocab, |l, th| th && t + 1 < l) {
            let mut prefix = real[t].clone();
            prefix.data_mut().iter_mut().zip(m.data()).for_each(|(p, k)| *p *= k);
            push(tape.constant(prefix))?;
        }
        out.push(acc.unwrap_or_else(|| tape.constant(Tensor::zeros(&[layout.rows(), vocab]))));
    }
    Ok(out)
}

fn ensure_finite(v: f32, iter: u64, what: &str) -> Result<()> {
    if v.is_finite() { Ok(()) } else { Err(Error::NonFinite { iter, what: what.to_owned() }) }
}

fn first_non_finite<'a>(named: impl IntoIterator<Item = (String, &'a Tensor<f32>)>) -> Option<String> {
    named.into_iter().find(|(_, t)| !t.all_finite()).map(|(n, _)| n)
}

pub struct Trainer<'c> {
    pub config: TrainConfig,
    pub policy: SchedulePolicy,
    pub state: TrainerState,
    corpus: &'c Corpus,
}

impl<'c> Trainer<'c> {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: TrainConfig, policy: SchedulePolicy, dims: ModelDims, corpus: &'c Corpus) -> Result<Self> {
        let state = TrainerState::init(&dims, &policy, config.seed)?;
        Self::resume(config, policy, state, corpus)
    }

    /// Continues from an existing state, e.g. one read from a checkpoint.
    pub fn resume(config: TrainConfig, policy: SchedulePolicy, state: TrainerState, corpus: &'c Corpus) -> Result<Self> {
        config.validate()?;
        policy.validate()?;
        state.schedule.validate(&policy)?;
        let dims = state.gen.dims();
        if dims.vocab != corpus.vocab_size() {
            return Err(Error::Vocab(format!(
                "model expects {} symbols, corpus uses {}",
                dims.vocab,
                corpus.vocab_size()
            )));
        }
        if corpus.window_count(policy.max_len) == 0 {
            return Err(Error::NoWindow(policy.max_len));
        }
        Ok(Trainer { config, policy, state, corpus })
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    pub fn plan(&self) -> StepPlan {
        plan_step(&self.policy, &self.state.schedule)
    }

    fn real_windows(&mut self, layout: &Layout) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(layout.rows());
        for &len in &layout.lengths {
            out.push(self.corpus.sample_window(len, &mut self.state.rng)?.to_vec());
        }
        Ok(out)
    }

    fn noise(&mut self, rows: usize) -> Tensor<f32> {
        let dim = self.state.gen.dims().noise;
        sample_noise(rows, dim, self.config.noise_std, &mut self.state.rng)
    }

    /// One critic update on `plan`; generator parameters are left untouched.
    pub fn disc_update(&mut self, plan: &StepPlan) -> Result<StepLoss> {
        let iter = self.state.counters.iter;
        let layout = Layout::new(plan, self.config.batch_size)?;
        let vocab = self.corpus.vocab_size();
        let windows = self.real_windows(&layout)?;
        let real = padded_onehot(&windows, layout.max_len, vocab);
        let z = self.noise(layout.rows());
        let eps: Vec<f32> = sample_eps(layout.rows(), self.config.gan.eps_mode, &mut self.state.rng);

        let tape = Tape::with_higher_order();
        let gen = self.state.gen.bind(&tape, false);
        let fake: Vec<Tensor<f32>> =
            fake_steps(&tape, &gen, &z, &real, &layout)?.iter().map(|v| (*v.value()).clone()).collect();
        let x_hat: Vec<_> = interpolate_steps(&real, &fake, &eps)?.into_iter().map(|t| tape.var(t)).collect();
        let fake: Vec<_> = fake.into_iter().map(|t| tape.constant(t)).collect();
        let real: Vec<_> = real.into_iter().map(|t| tape.constant(t)).collect();

        let disc = self.state.disc.bind(&tape, true);
        let readout = layout.readout();
        let s_fake = disc.score(&fake, readout)?;
        let s_real = disc.score(&real, readout)?;
        let pen = penalty_terms(&disc, &x_hat, readout)?.scale(self.config.gan.lambda as f32)?;
        let rows = s_fake.sub(s_real)?.add(pen)?;
        let loss = rows.mul(tape.constant(layout.weights.clone()))?.sum()?;
        let value = loss.item();
        ensure_finite(value, iter, "critic loss")?;
        let grads = tape.grad(loss, &disc.all())?;
        let per_length = layout.group_means(&rows.value());
        drop(tape);

        self.state.disc_opt.update(&self.config.disc_adam(), self.state.disc.tensors_mut(), &grads)?;
        if let Some(name) = first_non_finite(self.state.disc.named()) {
            return Err(Error::NonFinite { iter, what: name });
        }
        self.state.last_disc_loss = value;
        Ok(StepLoss { iter, kind: UpdateKind::Disc, loss: value, per_length })
    }

    /// One generator update on `plan`; critic parameters are left untouched.
    pub fn gen_update(&mut self, plan: &StepPlan) -> Result<StepLoss> {
        let iter = self.state.counters.iter;
        let layout = Layout::new(plan, self.config.batch_size)?;
        let vocab = self.corpus.vocab_size();
        let real = if layout.th.iter().any(|&t| t) {
            let windows = self.real_windows(&layout)?;
            padded_onehot(&windows, layout.max_len, vocab)
        } else {
            Vec::new()
        };
        let z = self.noise(layout.rows());

        let tape = Tape::new();
        let gen = self.state.gen.bind(&tape, true);
        let disc = self.state.disc.bind(&tape, false);
        let fake = fake_steps(&tape, &gen, &z, &real, &layout)?;
        let scores = disc.score(&fake, layout.readout())?;
        let loss = scores.mul(tape.constant(layout.weights.clone()))?.sum()?.neg()?;
        let value = loss.item();
        ensure_finite(value, iter, "generator loss")?;
        let grads = tape.grad(loss, &gen.all())?;
        let per_length = layout.group_means(&scores.value()).into_iter().map(|(l, s)| (l, -s)).collect();
        drop(tape);

        self.state.gen_opt.update(&self.config.adam, self.state.gen.tensors_mut(), &grads)?;
        if let Some(name) = first_non_finite(self.state.gen.named()) {
            return Err(Error::NonFinite { iter, what: name });
        }
        self.state.last_gen_loss = value;
        Ok(StepLoss { iter, kind: UpdateKind::Gen, loss: value, per_length })
    }

    /// Runs the next update of the current cycle and moves the counters on.
    pub fn step(&mut self) -> Result<StepLoss> {
        let plan = self.plan();
        let disc_turn = self.state.counters.cycle_pos < self.config.disc_iters;
        let out = if disc_turn { self.disc_update(&plan)? } else { self.gen_update(&plan)? };
        let c = &mut self.state.counters;
        c.iter += 1;
        c.cycle_pos += 1;
        if disc_turn {
            c.disc_updates += 1;
        } else {
            c.gen_updates += 1;
        }
        if c.cycle_pos == self.config.cycle_len() {
            c.cycle_pos = 0;
            c.cycles += 1;
            self.state.schedule = advance(&self.policy, &self.state.schedule);
        }
        Ok(out)
    }

    /// Runs until `config.total_iters` updates have been made.
    pub fn train(&mut self, hooks: &mut Hooks<'_>) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        let mut last_cap = None;
        while self.state.counters.iter < self.config.total_iters {
            let before = self.state.clone();
            let loss = match self.step() {
                Ok(l) => l,
                Err(e @ Error::NonFinite { .. }) => {
                    if let Some(dir) = &hooks.checkpoint_dir {
                        // best effort: the original error is the one to report
                        let _ = self.save_to(&before, &dir.join("nonfinite-dump.ckpt"), &hooks.meta);
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let iter = self.state.counters.iter;
            if let Some(log) = hooks.log.as_mut() {
                if iter.is_multiple_of(self.config.log_every) {
                    let name = match loss.kind {
                        UpdateKind::Disc => "loss_d",
                        UpdateKind::Gen => "loss_g",
                    };
                    log_line(log, iter, name, loss.loss)?;
                }
                if last_cap != Some(self.state.schedule.current_cap) {
                    log_line(log, iter, "cap", self.state.schedule.current_cap)?;
                    last_cap = Some(self.state.schedule.current_cap);
                }
            }
            report.trace.push(loss);
            if self.config.eval_every > 0 && iter.is_multiple_of(self.config.eval_every) {
                if let Some(ev) = &hooks.eval {
                    let r = self.evaluate(ev)?;
                    if let Some(log) = hooks.log.as_mut() {
                        for (n, v) in &r.per_n {
                            if let Some(v) = v {
                                log_line(log, iter, &format!("in_test_{n}"), v)?;
                            }
                        }
                    }
                    report.evals.push((iter, r));
                }
            }
            if self.config.checkpoint_every > 0 && iter.is_multiple_of(self.config.checkpoint_every) {
                if let Some(dir) = &hooks.checkpoint_dir {
                    self.save_to(&self.state, &dir.join(format!("iter-{iter:09}.ckpt")), &hooks.meta)?;
                }
            }
        }
        if let Some(log) = hooks.log.as_mut() {
            log.flush().map_err(|e| Error::io("metrics log", e))?;
        }
        Ok(report)
    }

    /// Scores the current generator with a generator seeded from the run
    /// seed and iteration, so evaluation never disturbs training randomness.
    pub fn evaluate(&self, hook: &EvalHook<'_>) -> Result<EvalReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.state.counters.iter);
        evaluate_model(&self.state.gen, hook.vocab, &hook.config, hook.indexes, &mut rng)
    }

    fn save_to(&self, state: &TrainerState, path: &std::path::Path, meta: &BTreeMap<String, String>) -> Result<()> {
        let mut ckpt = state.to_checkpoint();
        for (k, v) in meta {
            ckpt.meta.entry(k.clone()).or_insert_with(|| v.clone());
        }
        ckpt.save(path)
    }
}

fn log_line(log: &mut dyn Write, iter: u64, name: &str, value: impl std::fmt::Display) -> Result<()> {
    writeln!(log, "{iter}\t{name}\t{value}").map_err(|e| Error::io("metrics log", e))
}

/// Side outputs of [`Trainer::train`].
#[derive(Default)]
pub struct Hooks<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub eval: Option<EvalHook<'a>>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Extra entries stored in every checkpoint.
    pub meta: BTreeMap<String, String>,
}

pub struct EvalHook<'a> {
    pub vocab: &'a Vocab,
    pub indexes: &'a [NgramIndex],
    pub config: EvalConfig,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub trace: Vec<StepLoss>,
    pub evals: Vec<(u64, EvalReport)>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f32> {
        self.trace.iter().map(|s| s.loss).collect()
    }
}

/// Restores the state stored by [`TrainerState::to_checkpoint`].
pub fn load_state(path: impl AsRef<std::path::Path>) -> Result<(TrainerState, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let state = TrainerState::from_checkpoint(&ckpt)?;
    Ok((state, ckpt))
}

pub(crate) fn missing(what: &str) -> Error {
    Error::Checkpoint(CheckpointError::Missing(what.to_owned()))
}
