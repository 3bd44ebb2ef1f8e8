//! Corpus loading, character vocabularies and real-sequence sampling.

mod batch;
pub mod synth;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;

pub use batch::CharSeqBatch;
pub use vocab::Vocab;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Encoded corpus lines. Immutable once built.
#[derive(Debug)]
pub struct Corpus {
    lines: Vec<Vec<usize>>,
    vocab_size: usize,
    // cumulative window counts per window length, built on first use
    windows: Vec<OnceLock<Vec<u64>>>,
}

impl Corpus {
    pub fn from_lines<S: AsRef<str>>(lines: impl IntoIterator<Item = S>, vocab: &Vocab) -> Self {
        let lines: Vec<Vec<usize>> = lines.into_iter().map(|l| vocab.encode(l.as_ref())).collect();
        Self::from_encoded(lines, vocab.len())
    }

    fn from_encoded(lines: Vec<Vec<usize>>, vocab_size: usize) -> Self {
        let longest = lines.iter().map(Vec::len).max().unwrap_or(0);
        Corpus { lines, vocab_size, windows: (0..=longest).map(|_| OnceLock::new()).collect() }
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lines(text.lines(), vocab))
    }

    /// Streams the file and keeps a uniform random subset of `capacity` lines.
    pub fn load_reservoir<R: Rng + ?Sized>(
        path: impl AsRef<Path>,
        vocab: &Vocab,
        capacity: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut kept: Vec<Vec<usize>> = Vec::with_capacity(capacity);
        for (seen, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if kept.len() < capacity {
                kept.push(vocab.encode(&line));
            } else {
                let j = rng.random_range(0..=seen);
                if j < capacity {
                    kept[j] = vocab.encode(&line);
                }
            }
        }
        Ok(Self::from_encoded(kept, vocab.len()))
    }

    pub fn lines(&self) -> &[Vec<usize>] {
        &self.lines
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn longest_line(&self) -> usize {
        self.windows.len().saturating_sub(1)
    }

    fn window_table(&self, len: usize) -> Option<&[u64]> {
        let slot = self.windows.get(len)?;
        let table = slot.get_or_init(|| {
            let mut acc = 0u64;
            self.lines
                .iter()
                .map(|l| {
                    acc += (l.len() + 1).saturating_sub(len) as u64;
                    acc
                })
                .collect()
        });
        (table.last().copied().unwrap_or(0) > 0).then_some(table.as_slice())
    }

    /// Number of `len`-character windows that fit inside single lines.
    pub fn window_count(&self, len: usize) -> u64 {
        self.window_table(len).and_then(|t| t.last().copied()).unwrap_or(0)
    }

    /// One window drawn uniformly from every eligible (line, offset) pair.
    pub fn sample_window<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<&[usize]> {
        if len == 0 {
            return Ok(&[]);
        }
        let table = self.window_table(len).ok_or(Error::NoWindow(len))?;
        let pick = rng.random_range(0..*table.last().unwrap());
        let line = table.partition_point(|&c| c <= pick);
        let before = if line == 0 { 0 } else { table[line - 1] };
        let start = (pick - before) as usize;
        Ok(&self.lines[line][start..start + len])
    }

    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        batch: usize,
        len: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<usize>>> {
        (0..batch).map(|_| self.sample_window(len, rng).map(<[usize]>::to_vec)).collect()
    }

    /// A one-hot batch of `batch` real windows of length `len`.
    pub fn sample_real<F: Scalar, R: Rng + ?Sized>(
        &self,
        batch: usize,
        len: usize,
        rng: &mut R,
    ) -> Result<CharSeqBatch<F>> {
        if len == 0 {
            return Err(Error::NoWindow(0));
        }
        let ids = self.sample_windows(batch, len, rng)?;
        CharSeqBatch::from_ids(&ids, self.vocab_size)
    }

    /// Real windows split into a `len - 1` character prefix and the final character.
    pub fn sample_prefix<F: Scalar, R: Rng + ?Sized>(
        &self,
        batch: usize,
        len: usize,
        rng: &mut R,
    ) -> Result<(CharSeqBatch<F>, CharSeqBatch<F>)> {
        if len == 0 {
            return Err(Error::NoWindow(0));
        }
        let ids = self.sample_windows(batch, len, rng)?;
        let prefix: Vec<Vec<usize>> = ids.iter().map(|w| w[..len - 1].to_vec()).collect();
        let next: Vec<Vec<usize>> = ids.iter().map(|w| vec![w[len - 1]]).collect();
        Ok((
            CharSeqBatch::from_ids(&prefix, self.vocab_size)?,
            CharSeqBatch::from_ids(&next, self.vocab_size)?,
        ))
    }
}
