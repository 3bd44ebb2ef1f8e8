//! %-IN-TEST-n: the share of word n-grams in generated text that also occur
//! in a held-out corpus.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::recnet::{decode_argmax, generate_free, sample_noise, GeneratorParams};
use crate::scalar::Scalar;
use crate::textdata::Vocab;

pub const DEFAULT_NS: [usize; 4] = [1, 2, 3, 4];
pub const DEFAULT_SAMPLES: usize = 640;

/// Splits on runs of whitespace; nothing else is normalized.
pub fn tokenize(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Every consecutive `n`-word window of one line, joined by single spaces.
pub fn ngrams(line: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    let words = tokenize(line);
    let count = if n == 0 { 0 } else { (words.len() + 1).saturating_sub(n) };
    (0..count).map(move |i| words[i..i + n].join(" "))
}

/// Set of word n-grams from a test corpus.
#[derive(Clone, Debug, Default)]
pub struct NgramIndex {
    n: usize,
    grams: HashSet<String>,
}

impl NgramIndex {
    pub fn from_lines<S: AsRef<str>>(lines: impl IntoIterator<Item = S>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        let mut grams = HashSet::new();
        for line in lines {
            grams.extend(ngrams(line.as_ref(), n));
        }
        Ok(NgramIndex { n, grams })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn contains(&self, gram: &str) -> bool {
        self.grams.contains(gram)
    }
}

pub fn build_index(test_corpus: impl AsRef<Path>, n: usize) -> Result<NgramIndex> {
    let text = read(test_corpus.as_ref())?;
    NgramIndex::from_lines(text.lines(), n)
}

/// One index per order, built from a single read of the corpus.
pub fn build_indexes(test_corpus: impl AsRef<Path>, ns: &[usize]) -> Result<Vec<NgramIndex>> {
    let text = read(test_corpus.as_ref())?;
    ns.iter().map(|&n| NgramIndex::from_lines(text.lines(), n)).collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `(found, total)` over every n-gram occurrence in `samples`.
pub fn count_in_test<S: AsRef<str>>(samples: &[S], index: &NgramIndex) -> (u64, u64) {
    let mut found = 0;
    let mut total = 0;
    for s in samples {
        for g in ngrams(s.as_ref(), index.n) {
            total += 1;
            found += index.contains(&g) as u64;
        }
    }
    (found, total)
}

/// Percentage of n-gram occurrences found in the index, `None` when the
/// samples hold no n-gram at all.
pub fn percent_in_test<S: AsRef<str>>(samples: &[S], index: &NgramIndex) -> Option<f64> {
    let (found, total) = count_in_test(samples, index);
    (total > 0).then(|| 100.0 * found as f64 / total as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub per_n: BTreeMap<usize, Option<f64>>,
    pub total_ngrams_per_n: BTreeMap<usize, u64>,
    pub num_samples: usize,
    pub sample_len: usize,
}

impl EvalReport {
    pub fn score<S: AsRef<str>>(samples: &[S], indexes: &[NgramIndex], sample_len: usize) -> Self {
        let mut report = EvalReport { num_samples: samples.len(), sample_len, ..Default::default() };
        for index in indexes {
            let (found, total) = count_in_test(samples, index);
            report.per_n.insert(index.n, (total > 0).then(|| 100.0 * found as f64 / total as f64));
            report.total_ngrams_per_n.insert(index.n, total);
        }
        report
    }

    pub fn get(&self, n: usize) -> Option<f64> {
        self.per_n.get(&n).copied().flatten()
    }

    /// True when every defined percentage is at most the one for the next lower order.
    pub fn is_monotone(&self) -> bool {
        let vals: Vec<f64> = self.per_n.values().flatten().copied().collect();
        vals.windows(2).all(|w| w[1] <= w[0])
    }

    /// `key=value` lines for scripts.
    pub fn to_kv(&self) -> String {
        let mut out = format!("num_samples={}\nsample_len={}\n", self.num_samples, self.sample_len);
        for (n, v) in &self.per_n {
            match v {
                Some(v) => out.push_str(&format!("in_test_{n}={v:.4}\n")),
                None => out.push_str(&format!("in_test_{n}=NA\n")),
            }
            out.push_str(&format!("ngrams_{n}={}\n", self.total_ngrams_per_n[n]));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}  length: {}", self.num_samples, self.sample_len)?;
        let head: Vec<String> = self.per_n.keys().map(|n| format!("{n:>7}")).collect();
        writeln!(f, "%-IN-TEST-n {}", head.join(""))?;
        let vals: Vec<String> = self
            .per_n
            .values()
            .map(|v| match v {
                Some(v) => format!("{v:>7.1}"),
                None => format!("{:>7}", "-"),
            })
            .collect();
        writeln!(f, "{:11} {}", "", vals.join(""))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub num_samples: usize,
    pub len: usize,
    pub noise_std: f64,
    /// Sequences generated per forward pass.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { num_samples: DEFAULT_SAMPLES, len: 32, noise_std: 10f64.sqrt(), chunk: 128 }
    }
}

/// Free-runs the generator and argmax-decodes `num_samples` sequences.
pub fn generate_samples<F: Scalar, R: Rng + ?Sized>(
    params: &GeneratorParams<F>,
    vocab: &Vocab,
    config: &EvalConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    if vocab.len() != params.embed.rows() {
        return Err(Error::Vocab(format!(
            "vocabulary has {} symbols but the model expects {}",
            vocab.len(),
            params.embed.rows()
        )));
    }
    let noise = params.dims().noise;
    let mut out = Vec::with_capacity(config.num_samples);
    while out.len() < config.num_samples {
        let rows = config.chunk.max(1).min(config.num_samples - out.len());
        let z = sample_noise::<F, R>(rows, noise, config.noise_std, rng);
        out.extend(decode_argmax(&generate_free(params, &z, config.len)?, vocab));
    }
    Ok(out)
}

pub fn evaluate_model<F: Scalar, R: Rng + ?Sized>(
    params: &GeneratorParams<F>,
    vocab: &Vocab,
    config: &EvalConfig,
    indexes: &[NgramIndex],
    rng: &mut R,
) -> Result<EvalReport> {
    let samples = generate_samples(params, vocab, config, rng)?;
    Ok(EvalReport::score(&samples, indexes, config.len))
}
