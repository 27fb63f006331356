//! Finite words over `{1, …, N}` and blocks of equal-length words.

use crate::error::{Error, Result};
use serde::{Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// A finite word; symbols are stored 1-based.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Checked constructor: every symbol must lie in `1..=n_symbols`.
    pub fn new(symbols: Vec<u8>, n_symbols: usize) -> Result<Self> {
        let w = Word(symbols);
        w.check(n_symbols)?;
        Ok(w)
    }

    /// Unchecked constructor for symbols known to be valid (all nonzero).
    pub fn from_symbols(symbols: Vec<u8>) -> Self {
        debug_assert!(symbols.iter().all(|&s| s >= 1));
        Word(symbols)
    }

    pub fn check(&self, n_symbols: usize) -> Result<()> {
        match self
            .0
            .iter()
            .find(|&&s| s == 0 || s as usize > n_symbols)
        {
            Some(s) => Err(Error::InvalidWord(format!(
                "symbol {s} outside 1..={n_symbols}"
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn first(&self) -> Option<u8> {
        self.0.first().copied()
    }

    pub fn prefix(&self, j: usize) -> Result<Word> {
        if j > self.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                max: self.len(),
            });
        }
        Ok(Word(self.0[..j].to_vec()))
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn push(&mut self, symbol: u8) {
        self.0.push(symbol);
    }

    pub fn into_symbols(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Word::empty());
        }
        s.split('.')
            .map(|t| match t.parse::<u8>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(Error::InvalidWord(format!("bad symbol `{t}` in `{s}`"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Word)
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl From<&[u8]> for Word {
    fn from(s: &[u8]) -> Self {
        Word::from_symbols(s.to_vec())
    }
}

/// A sequence of words sharing one length `n ≥ 1`; may hold zero words.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Block {
    words: Vec<Word>,
}

impl Block {
    pub fn new(words: Vec<Word>) -> Result<Self> {
        if let Some(first) = words.first() {
            let n = first.len();
            if n == 0 {
                return Err(Error::InvalidBlock("member words must be nonempty".into()));
            }
            if let Some(w) = words.iter().find(|w| w.len() != n) {
                return Err(Error::InvalidBlock(format!(
                    "word {w} has length {} but block length is {n}",
                    w.len()
                )));
            }
        }
        Ok(Block { words })
    }

    pub fn empty() -> Self {
        Block { words: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.words.len()
    }

    /// Common word length; `None` for an empty block.
    pub fn word_len(&self) -> Option<usize> {
        self.words.first().map(Word::len)
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    /// Concatenation of all member words.
    pub fn flatten(&self) -> Word {
        Word(self.words.iter().flat_map(|w| w.0.iter().copied()).collect())
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

fn check_pair(a: &Block, b: &Block) -> Result<usize> {
    if a.count() != b.count() + 1 {
        return Err(Error::InvalidBlock(format!(
            "A must have one more word than B (got {} and {})",
            a.count(),
            b.count()
        )));
    }
    let n = a
        .word_len()
        .ok_or_else(|| Error::InvalidBlock("A must be nonempty".into()))?;
    if let Some(m) = b.word_len() {
        if m != n {
            return Err(Error::InvalidBlock(format!(
                "word length mismatch between A ({n}) and B ({m})"
            )));
        }
    }
    Ok(n)
}

/// `a₀b₁a₁…b_k a_k`, of length `(2k+1)n`.
pub fn concat_star(a: &Block, b: &Block) -> Result<Word> {
    let n = check_pair(a, b)?;
    let mut out = Vec::with_capacity((2 * b.count() + 1) * n);
    for (i, w) in a.words.iter().enumerate() {
        if i > 0 {
            out.extend_from_slice(&b.words[i - 1].0);
        }
        out.extend_from_slice(&w.0);
    }
    Ok(Word(out))
}

/// `a₀b₁…a_{k−1}b_k`, of length `2kn`.
pub fn concat_hash(a: &Block, b: &Block) -> Result<Word> {
    let n = check_pair(a, b)?;
    let mut out = Vec::with_capacity(2 * b.count() * n);
    for (aw, bw) in a.words.iter().zip(b.words.iter()) {
        out.extend_from_slice(&aw.0);
        out.extend_from_slice(&bw.0);
    }
    Ok(Word(out))
}

pub fn prefix(w: &Word, j: usize) -> Result<Word> {
    w.prefix(j)
}

/// Drops the first `i` member words.
pub fn block_shift(a: &Block, i: usize) -> Result<Block> {
    if i >= a.count() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: a.count().saturating_sub(1),
        });
    }
    Ok(Block {
        words: a.words[i..].to_vec(),
    })
}

/// Number of words of length `n` over `n_symbols` letters, if it fits in `u64`.
pub fn word_count(n_symbols: usize, n: usize) -> Option<u64> {
    (n_symbols as u64).checked_pow(n as u32)
}

/// Lexicographic enumeration of `𝒜^n`.
pub struct WordIter {
    n_symbols: u8,
    current: Option<Vec<u8>>,
}

impl Iterator for WordIter {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        let cur = self.current.take()?;
        let mut nxt = cur.clone();
        let mut i = nxt.len();
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if nxt[i] < self.n_symbols {
                nxt[i] += 1;
                advanced = true;
                break;
            }
            nxt[i] = 1;
        }
        if advanced {
            self.current = Some(nxt);
        }
        Some(Word(cur))
    }
}

pub fn enumerate_words(n_symbols: usize, n: usize) -> WordIter {
    assert!((1..=255).contains(&n_symbols), "alphabet size must be in 1..=255");
    WordIter {
        n_symbols: n_symbols as u8,
        current: Some(vec![1; n]),
    }
}

/// The `index`-th word of `𝒜^n` in lexicographic order.
pub fn word_at(n_symbols: usize, n: usize, mut index: u64) -> Word {
    let mut v = vec![1u8; n];
    for slot in v.iter_mut().rev() {
        *slot = (index % n_symbols as u64) as u8 + 1;
        index /= n_symbols as u64;
    }
    Word(v)
}
