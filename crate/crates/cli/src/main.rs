//! `charwgan`: train, sample, evaluate and inspect recurrent text GANs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] charwgan::Error),
}

impl CliError {
    /// 1 validation, 2 numerical abort, 3 I/O or file format.
    fn exit_code(&self) -> u8 {
        use charwgan::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                E::NonFinite { .. } => 2,
                E::Io { .. } | E::Checkpoint(_) | E::EmptyCorpus(_) => 3,
                _ => 1,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "charwgan", version, about = "Character-level recurrent WGAN-GP text generation")]
struct Cli {
    /// Seed for every random choice; overrides any configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use 64-bit floats in gradient checks.
    #[arg(long = "f64", global = true)]
    f64: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a generator and discriminator.
    Train(Box<TrainArgs>),
    /// Print decoded samples from a checkpoint.
    Sample(SampleArgs),
    /// Score a checkpoint or a samples file with %-IN-TEST-n.
    Eval(EvalArgs),
    /// Show the contents of a checkpoint.
    Inspect {
        checkpoint: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Random instances per check.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Write a synthetic corpus drawn from a small word grammar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        sentences: usize,
        /// Seed of the grammar itself; `--seed` picks the sentences.
        #[arg(long, default_value_t = 1)]
        grammar_seed: u64,
    },
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// `key=value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of table2-row1 .. table2-row7.
    #[arg(long)]
    preset: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,

    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    test_corpus: Option<PathBuf>,
    /// Vocabulary file, written from the corpus when missing.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Metrics log; defaults to metrics.tsv in the checkpoint directory.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    noise_dim: Option<usize>,

    /// Curriculum learning.
    #[arg(long)]
    cl: bool,
    /// Variable length.
    #[arg(long)]
    vl: bool,
    /// Teacher helping.
    #[arg(long)]
    th: bool,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    iters_per_stage: Option<u64>,
    #[arg(long)]
    start_len: Option<usize>,

    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    disc_iters: Option<u64>,
    #[arg(long)]
    gen_iters: Option<u64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Critic learning rate; defaults to --lr.
    #[arg(long)]
    disc_lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `sequence` or `batch`.
    #[arg(long)]
    eps_mode: Option<String>,
    #[arg(long)]
    total_iters: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    eval_len: Option<usize>,
}

impl TrainArgs {
    /// Explicitly given flags as configuration entries.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! opt {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    out.push((stringify!($f), v.to_string()));
                }
            )*};
        }
        macro_rules! path {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    out.push((stringify!($f), v.display().to_string()));
                }
            )*};
        }
        path!(corpus, test_corpus, vocab, checkpoint_dir, log);
        opt!(max_vocab, embed, hidden, noise_dim, max_len, iters_per_stage, start_len);
        opt!(batch_size, disc_iters, gen_iters, noise_std, lr, disc_lr, beta1, beta2, adam_eps, lambda, eps_mode);
        opt!(total_iters, checkpoint_every, eval_every, log_every, eval_samples, eval_len);
        for (on, key) in [(self.cl, "cl"), (self.vl, "vl"), (self.th, "th")] {
            if on {
                out.push((key, "true".into()));
            }
        }
        out
    }
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    num: usize,
    #[arg(long, default_value_t = 32)]
    len: usize,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Generate samples from this checkpoint.
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    checkpoint: Option<PathBuf>,
    /// Score these lines instead of generating.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    test_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    len: usize,
    #[arg(long, default_value_t = charwgan::eval::DEFAULT_SAMPLES)]
    num: usize,
    /// Comma-separated n-gram orders.
    #[arg(long, value_delimiter = ',', default_values_t = charwgan::eval::DEFAULT_NS)]
    ns: Vec<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a, cli.seed),
        Command::Sample(a) => commands::sample(&a, cli.seed.unwrap_or(0)),
        Command::Eval(a) => commands::eval(&a, cli.seed.unwrap_or(0)),
        Command::Inspect { checkpoint } => commands::inspect(&checkpoint),
        Command::Gradcheck { instances } => commands::gradcheck(instances, cli.f64, cli.seed.unwrap_or(0)),
        Command::Synth { out, sentences, grammar_seed } => {
            commands::synth(&out, sentences, grammar_seed, cli.seed.unwrap_or(0))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
