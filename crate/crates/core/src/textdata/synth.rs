//! Synthetic sentence generator for desk-scale experiments.
//!
//! Sentences are random walks over a fixed 50-word lexicon (19 letters plus
//! space). Every word may be followed by one of a handful of successors, so
//! the text has real word-bigram structure for the n-gram metric to detect.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const LEXICON: [&str; 50] = [
    "a", "i", "o", "s", "t", "e", "d", "n", "an", "at", "as", "in", "is", "it", "on", "to", "so",
    "do", "no", "he", "be", "me", "of", "or", "us", "up", "the", "and", "bat", "cat", "dog", "sun",
    "pen", "red", "hot", "lip", "map", "nut", "pot", "rug", "tin", "fog", "big", "hid", "kin",
    "cub", "sea", "tree", "milk", "bird",
];

#[derive(Clone, Debug)]
pub struct WordGrammar {
    words: Vec<String>,
    successors: Vec<Vec<usize>>,
    min_words: usize,
    max_words: usize,
}

impl WordGrammar {
    /// The default toy language: [`LEXICON`], six successors per word,
    /// sentences of 4 to 10 words.
    pub fn toy(seed: u64) -> Self {
        Self::new(LEXICON.iter().map(|w| w.to_string()).collect(), 6, 4, 10, seed)
            .expect("toy grammar parameters are valid")
    }

    pub fn new(
        words: Vec<String>,
        successors_per_word: usize,
        min_words: usize,
        max_words: usize,
        seed: u64,
    ) -> Result<Self> {
        if words.is_empty() || successors_per_word == 0 || successors_per_word > words.len() {
            return Err(Error::Config("grammar needs words and 1..=|words| successors".into()));
        }
        if min_words == 0 || min_words > max_words {
            return Err(Error::Config("sentence length range must satisfy 1 <= min <= max".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let successors = (0..words.len())
            .map(|_| sample(&mut rng, words.len(), successors_per_word).into_vec())
            .collect();
        Ok(WordGrammar { words, successors, min_words, max_words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let n = rng.random_range(self.min_words..=self.max_words);
        let mut w = rng.random_range(0..self.words.len());
        let mut out = self.words[w].clone();
        for _ in 1..n {
            let next = &self.successors[w];
            w = next[rng.random_range(0..next.len())];
            out.push(' ');
            out.push_str(&self.words[w]);
        }
        out
    }

    pub fn sentences<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<String> {
        (0..n).map(|_| self.sentence(rng)).collect()
    }

    pub fn write_corpus(&self, path: impl AsRef<Path>, n: usize, seed: u64) -> Result<()> {
        let path = path.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = self.sentences(n, &mut rng).join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
