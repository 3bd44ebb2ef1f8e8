use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use charwgan::checkpoint::Checkpoint;
use charwgan::eval::{build_indexes, generate_samples, EvalConfig, EvalReport};
use charwgan::gradcheck::suite;
use charwgan::textdata::synth::WordGrammar;
use charwgan::textdata::{Corpus, Vocab};
use charwgan::trainer::{vocab_from_meta, vocab_to_meta, EvalHook, Hooks, Trainer, TrainerState};
use charwgan::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, KEYS};
use crate::{CliError, EvalArgs, SampleArgs, TrainArgs};

const CONFIG_PREFIX: &str = "config.";

fn io(path: &Path, e: io::Error) -> CliError {
    CliError::Core(Error::io(path, e))
}

fn require_file(flag: &str, path: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    let path = path.ok_or_else(|| CliError::Usage(format!("missing required {flag}")))?;
    if !path.is_file() {
        let e = io::Error::new(io::ErrorKind::NotFound, format!("{flag} file not found"));
        return Err(io(path, e));
    }
    Ok(path.clone())
}

/// Defaults, then the resumed run's settings, the config file, the preset and flags.
fn resolve(args: &TrainArgs, seed: Option<u64>, resumed: Option<&Checkpoint>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(ck) = resumed {
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix(CONFIG_PREFIX) {
                cfg.set(key, v)?;
            }
        }
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(p) = &args.preset {
        cfg.apply_preset(p)?;
    }
    for (k, v) in args.overrides() {
        cfg.set(k, &v)?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let resumed = args.resume.as_ref().map(Checkpoint::load).transpose()?;
    let cfg = resolve(args, seed, resumed.as_ref())?;
    let corpus_path = require_file("--corpus", cfg.corpus.as_ref())?;
    let test_path = match &cfg.test_corpus {
        Some(p) => Some(require_file("--test-corpus", Some(p))?),
        None => None,
    };
    if args.dry_run {
        print!("{}", cfg.to_kv());
        return Ok(());
    }

    let vocab = match (&resumed, &cfg.vocab) {
        (Some(ck), _) => vocab_from_meta(ck)?,
        (None, Some(p)) if p.exists() => Vocab::load(p)?,
        (None, p) => {
            let v = Vocab::build(&corpus_path, cfg.max_vocab)?;
            if let Some(p) = p {
                v.save(p)?;
            }
            v
        }
    };
    let corpus = Corpus::load(&corpus_path, &vocab)?;
    let mut trainer = match &resumed {
        Some(ck) => Trainer::resume(cfg.train, cfg.policy, TrainerState::from_checkpoint(ck)?, &corpus)?,
        None => Trainer::new(cfg.train, cfg.policy, cfg.dims(vocab.len()), &corpus)?,
    };
    let indexes = match &test_path {
        Some(p) => build_indexes(p, &charwgan::eval::DEFAULT_NS)?,
        None => Vec::new(),
    };

    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| io(&cfg.checkpoint_dir, e))?;
    let log_path = cfg.log.clone().unwrap_or_else(|| cfg.checkpoint_dir.join("metrics.tsv"));
    let file = OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| io(&log_path, e))?;
    let mut log = BufWriter::new(file);

    let mut meta = BTreeMap::new();
    meta.insert("vocab".to_owned(), vocab_to_meta(&vocab));
    for k in KEYS {
        meta.insert(format!("{CONFIG_PREFIX}{k}"), cfg.get(k));
    }
    let mut hooks = Hooks {
        log: Some(&mut log),
        eval: (!indexes.is_empty()).then(|| EvalHook { vocab: &vocab, indexes: &indexes, config: cfg.eval_config() }),
        checkpoint_dir: Some(cfg.checkpoint_dir.clone()),
        meta: meta.clone(),
    };
    eprintln!(
        "training {} for {} iterations, checkpoints in {}",
        cfg.policy.label(),
        cfg.train.total_iters,
        cfg.checkpoint_dir.display()
    );
    let report = trainer.train(&mut hooks)?;
    drop(hooks);
    log.flush().map_err(|e| io(&log_path, e))?;

    let mut ckpt = trainer.state.to_checkpoint();
    ckpt.meta.extend(meta);
    let final_path = cfg.checkpoint_dir.join("final.ckpt");
    ckpt.save(&final_path)?;
    let c = &trainer.state.counters;
    println!(
        "done: {} iterations ({} critic, {} generator), cap {}, checkpoint {}",
        c.iter,
        c.disc_updates,
        c.gen_updates,
        trainer.state.schedule.current_cap,
        final_path.display()
    );
    if let Some((_, r)) = report.evals.last() {
        print!("{r}");
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, TrainerState, Vocab), CliError> {
    let ck = Checkpoint::load(path)?;
    let state = TrainerState::from_checkpoint(&ck)?;
    let vocab = vocab_from_meta(&ck)?;
    Ok((ck, state, vocab))
}

fn noise_std(flag: Option<f64>, ck: &Checkpoint) -> Result<f64, CliError> {
    let v = match flag {
        Some(v) => v,
        None => ck.meta_parse(&format!("{CONFIG_PREFIX}noise_std")).unwrap_or(10f64.sqrt()),
    };
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::Usage(format!("noise std must be positive, got {v}")));
    }
    Ok(v)
}

pub fn sample(args: &SampleArgs, seed: u64) -> Result<(), CliError> {
    if args.len == 0 {
        return Err(CliError::Usage("--len must be at least 1".into()));
    }
    let (ck, state, vocab) = load_model(&args.checkpoint)?;
    let cfg = EvalConfig { num_samples: args.num, len: args.len, noise_std: noise_std(args.noise_std, &ck)?, ..Default::default() };
    let samples = generate_samples(&state.gen, &vocab, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut out = io::stdout().lock();
    for s in samples {
        writeln!(out, "{s}").map_err(|e| io(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, seed: u64) -> Result<(), CliError> {
    let test = require_file("--test-corpus", args.test_corpus.as_ref())?;
    if args.ns.is_empty() || args.ns.contains(&0) {
        return Err(CliError::Usage("--ns must list orders of at least 1".into()));
    }
    let (samples, len) = match (&args.samples, &args.checkpoint) {
        (Some(p), _) => {
            let p = require_file("--samples", Some(p))?;
            let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
            let lines: Vec<String> = text.lines().map(str::to_owned).collect();
            let len = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
            (lines, len)
        }
        (None, Some(c)) => {
            if args.len == 0 {
                return Err(CliError::Usage("--len must be at least 1".into()));
            }
            let (ck, state, vocab) = load_model(c)?;
            let cfg = EvalConfig { num_samples: args.num, len: args.len, noise_std: noise_std(args.noise_std, &ck)?, ..Default::default() };
            (generate_samples(&state.gen, &vocab, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?, args.len)
        }
        (None, None) => return Err(CliError::Usage("one of --checkpoint or --samples is required".into())),
    };
    let indexes = build_indexes(&test, &args.ns)?;
    let report = EvalReport::score(&samples, &indexes, len);
    print!("{report}\n{}", report.to_kv());
    Ok(())
}

pub fn inspect(path: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(path)?;
    println!("format: SGF1 version {}", charwgan::checkpoint::VERSION);
    println!("tensors:");
    for (name, t) in &ck.tensors {
        if !name.starts_with("adam.") {
            println!("  {name:<24} {:?}", t.shape());
        }
    }
    let moments = ck.tensors.iter().filter(|(n, _)| n.starts_with("adam.")).count();
    println!("optimizer moment tensors: {moments}");
    let get = |k: &str| ck.meta.get(k).map(String::as_str).unwrap_or("-");
    println!(
        "schedule: cap {} after {} stage steps",
        get("schedule.current_cap"),
        get("schedule.global_iter")
    );
    println!(
        "iterations: {} ({} critic, {} generator, {} cycles)",
        get("iter"),
        get("disc_updates"),
        get("gen_updates"),
        get("cycles")
    );
    let config: Vec<_> = ck.meta.iter().filter(|(k, _)| k.starts_with(CONFIG_PREFIX)).collect();
    if !config.is_empty() {
        println!("config:");
        for (k, v) in config {
            println!("  {}={v}", &k[CONFIG_PREFIX.len()..]);
        }
    }
    Ok(())
}

pub fn gradcheck(instances: usize, double: bool, seed: u64) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // single precision needs a larger step and looser bounds
    let (results, tol1, tol2) = if double {
        (suite::run::<f64, _>(instances, 1e-5, 1e-8, &mut rng)?, 1e-4, 1e-3)
    } else {
        (suite::run::<f32, _>(instances, 1e-2, 1e-3, &mut rng)?, 5e-2, 1e-1)
    };
    let mut failed = 0;
    for r in &results {
        let tol = if r.order == 1 { tol1 } else { tol2 };
        let ok = r.worst < tol;
        failed += usize::from(!ok);
        println!(
            "{:<4} {:<36} order {} worst {:.3e} over {} (limit {tol:.0e})",
            if ok { "ok" } else { "FAIL" },
            r.name,
            r.order,
            r.worst,
            r.instances
        );
    }
    if failed > 0 {
        return Err(CliError::Core(Error::NonFinite {
            iter: 0,
            what: format!("{failed} gradient checks above tolerance"),
        }));
    }
    Ok(())
}

pub fn synth(out: &Path, sentences: usize, grammar_seed: u64, seed: u64) -> Result<(), CliError> {
    WordGrammar::toy(grammar_seed).write_corpus(out, sentences, seed)?;
    Ok(())
}
