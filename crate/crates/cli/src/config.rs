//! Run configuration: defaults, presets, `key=value` files and flag overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use charwgan::curriculum::{preset_by_name, SchedulePolicy};
use charwgan::eval::EvalConfig;
use charwgan::recnet::ModelDims;
use charwgan::trainer::TrainConfig;
use charwgan::wgan::EpsMode;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub log: Option<PathBuf>,
    pub max_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub noise_dim: usize,
    pub policy: SchedulePolicy,
    pub train: TrainConfig,
    pub eval_samples: usize,
    pub eval_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let policy = SchedulePolicy::default();
        RunConfig {
            corpus: None,
            test_corpus: None,
            vocab: None,
            checkpoint_dir: PathBuf::from("checkpoints"),
            log: None,
            max_vocab: 256,
            embed: 512,
            hidden: 512,
            noise_dim: 512,
            eval_len: policy.max_len,
            policy,
            train: TrainConfig { checkpoint_every: 1000, ..Default::default() },
            eval_samples: charwgan::eval::DEFAULT_SAMPLES,
        }
    }
}

/// Every key accepted by [`RunConfig::set`], in output order.
pub const KEYS: &[&str] = &[
    "corpus",
    "test_corpus",
    "vocab",
    "checkpoint_dir",
    "log",
    "max_vocab",
    "embed",
    "hidden",
    "noise_dim",
    "cl",
    "vl",
    "th",
    "max_len",
    "iters_per_stage",
    "start_len",
    "batch_size",
    "disc_iters",
    "gen_iters",
    "noise_std",
    "lr",
    "disc_lr",
    "beta1",
    "beta2",
    "adam_eps",
    "lambda",
    "eps_mode",
    "total_iters",
    "checkpoint_every",
    "eval_every",
    "log_every",
    "eval_samples",
    "eval_len",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid value `{value}` for `{key}`, expected true or false"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        let p = &mut self.policy;
        match key {
            "preset" => self.apply_preset(value.trim())?,
            "corpus" => self.corpus = opt_path(value),
            "test_corpus" => self.test_corpus = opt_path(value),
            "vocab" => self.vocab = opt_path(value),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value.trim()),
            "log" => self.log = opt_path(value),
            "max_vocab" => self.max_vocab = parse(key, value)?,
            "embed" => self.embed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "noise_dim" => self.noise_dim = parse(key, value)?,
            "cl" => p.cl = parse_bool(key, value)?,
            "vl" => p.vl = parse_bool(key, value)?,
            "th" => p.th = parse_bool(key, value)?,
            "max_len" => p.max_len = parse(key, value)?,
            "iters_per_stage" => p.iters_per_stage = parse(key, value)?,
            "start_len" => p.start_len = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "disc_iters" => t.disc_iters = parse(key, value)?,
            "gen_iters" => t.gen_iters = parse(key, value)?,
            "noise_std" => t.noise_std = parse(key, value)?,
            "lr" => t.adam.lr = parse(key, value)?,
            "disc_lr" => t.disc_lr = if value.trim().is_empty() { None } else { Some(parse(key, value)?) },
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_eps" => t.adam.eps = parse(key, value)?,
            "lambda" => t.gan.lambda = parse(key, value)?,
            "eps_mode" => {
                t.gan.eps_mode = match value.trim() {
                    "sequence" => EpsMode::PerSequence,
                    "batch" => EpsMode::PerBatch,
                    _ => return Err(CliError::Usage(format!("eps_mode must be `sequence` or `batch`, got `{value}`"))),
                }
            }
            "total_iters" => t.total_iters = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "eval_len" => self.eval_len = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let p = &self.policy;
        match key {
            "corpus" => path(&self.corpus),
            "test_corpus" => path(&self.test_corpus),
            "vocab" => path(&self.vocab),
            "checkpoint_dir" => self.checkpoint_dir.display().to_string(),
            "log" => path(&self.log),
            "max_vocab" => self.max_vocab.to_string(),
            "embed" => self.embed.to_string(),
            "hidden" => self.hidden.to_string(),
            "noise_dim" => self.noise_dim.to_string(),
            "cl" => p.cl.to_string(),
            "vl" => p.vl.to_string(),
            "th" => p.th.to_string(),
            "max_len" => p.max_len.to_string(),
            "iters_per_stage" => p.iters_per_stage.to_string(),
            "start_len" => p.start_len.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "disc_iters" => t.disc_iters.to_string(),
            "gen_iters" => t.gen_iters.to_string(),
            "noise_std" => t.noise_std.to_string(),
            "lr" => t.adam.lr.to_string(),
            "disc_lr" => t.disc_lr.map(|v| v.to_string()).unwrap_or_default(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "lambda" => t.gan.lambda.to_string(),
            "eps_mode" => match t.gan.eps_mode {
                EpsMode::PerSequence => "sequence".into(),
                EpsMode::PerBatch => "batch".into(),
            },
            "total_iters" => t.total_iters.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "log_every" => t.log_every.to_string(),
            "eval_samples" => self.eval_samples.to_string(),
            "eval_len" => self.eval_len.to_string(),
            "seed" => t.seed.to_string(),
            _ => String::new(),
        }
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<(), CliError> {
        let preset = preset_by_name(name)?;
        self.policy.cl = preset.policy.cl;
        self.policy.vl = preset.policy.vl;
        self.policy.th = preset.policy.th;
        self.eval_len = preset.eval_len;
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value", no + 1)))?;
            self.set(k.trim(), v).map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| charwgan::Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k));
        }
        out
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            noise: self.noise_dim,
            noise_proj: self.noise_dim != self.hidden,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { num_samples: self.eval_samples, len: self.eval_len, noise_std: self.train.noise_std, ..Default::default() }
    }

    /// Checks every numeric constraint; path checks happen at launch.
    pub fn validate(&self) -> Result<(), CliError> {
        self.policy.validate()?;
        self.train.validate()?;
        if self.embed == 0 || self.hidden == 0 || self.noise_dim == 0 {
            return Err(CliError::Usage("embed, hidden and noise_dim must be positive".into()));
        }
        if self.max_vocab < 2 {
            return Err(CliError::Usage("max_vocab must be at least 2".into()));
        }
        if self.eval_len == 0 {
            return Err(CliError::Usage("eval_len must be at least 1".into()));
        }
        Ok(())
    }
}
