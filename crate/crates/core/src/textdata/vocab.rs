use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Character vocabulary. Ids are contiguous; the last id is the unknown symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    unk_id: usize,
}

/// Placeholder printed for the unknown symbol.
pub const UNK_CHAR: char = '\u{FFFD}';

impl Vocab {
    /// Keeps the `max_vocab - 1` most frequent characters; equal counts are
    /// ordered by ascending code point. Line breaks are not characters.
    pub fn from_text(text: &str, max_vocab: usize) -> Result<Self> {
        if max_vocab < 2 {
            return Err(Error::Vocab(format!("max_vocab must be >= 2, got {max_vocab}")));
        }
        let mut counts: HashMap<char, u64> = HashMap::new();
        for line in text.lines() {
            for c in line.chars() {
                *counts.entry(c).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Vocab("corpus contains no characters".into()));
        }
        let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(max_vocab - 1);
        Ok(Self::from_chars(ranked.into_iter().map(|(c, _)| c).collect()))
    }

    pub fn build(corpus_path: impl AsRef<Path>, max_vocab: usize) -> Result<Self> {
        let path = corpus_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match Self::from_text(&text, max_vocab) {
            Err(Error::Vocab(msg)) if msg.contains("no characters") => {
                Err(Error::EmptyCorpus(path.to_path_buf()))
            }
            other => other,
        }
    }

    /// Vocabulary over `chars` in the given order, plus the unknown symbol.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let unk_id = chars.len();
        Vocab { chars, index, unk_id }
    }

    /// Number of ids including the unknown symbol.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unk_id)
    }

    pub fn char_of(&self, id: usize) -> char {
        self.chars.get(id).copied().unwrap_or(UNK_CHAR)
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.id(c)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.char_of(i)).collect()
    }

    /// `<id>\t<U+XXXX>` per line, unknown symbol last.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.chars.iter().chain(std::iter::once(&UNK_CHAR)).enumerate() {
            writeln!(out, "{i}\tU+{:04X}", *c as u32).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut chars = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = || Error::Vocab(format!("malformed vocab line {}: {line:?}", lineno + 1));
            let (id, cp) = line.split_once('\t').ok_or_else(bad)?;
            let id: usize = id.parse().map_err(|_| bad())?;
            if id != lineno {
                return Err(Error::Vocab(format!("ids must ascend from 0; line {} has id {id}", lineno + 1)));
            }
            let hex = cp.strip_prefix("U+").ok_or_else(bad)?;
            let c = u32::from_str_radix(hex, 16).ok().and_then(char::from_u32).ok_or_else(bad)?;
            chars.push(c);
        }
        if chars.len() < 2 {
            return Err(Error::Vocab("vocab file needs at least one character plus unk".into()));
        }
        chars.pop();
        let vocab = Self::from_chars(chars);
        if vocab.index.len() != vocab.chars.len() {
            return Err(Error::Vocab("duplicate characters in vocab file".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
