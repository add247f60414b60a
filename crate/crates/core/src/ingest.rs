//! Line tokenization and length segregation.

use serde::Serialize;

use crate::error::Result;
use crate::interner::{Interner, TokenHandle};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizerConfig {
    /// Extra single-character separators on top of whitespace. Empty by default.
    pub delimiters: Vec<char>,
}

impl TokenizerConfig {
    pub fn with_delimiters(delims: &str) -> Self {
        TokenizerConfig { delimiters: delims.chars().filter(|c| !c.is_whitespace()).collect() }
    }

    /// Splits `line` into raw token slices.
    pub fn split<'a>(&'a self, line: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let delims = &self.delimiters;
        line.split(move |c: char| c.is_whitespace() || delims.contains(&c)).filter(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedLine {
    pub tokens: Vec<TokenHandle>,
    pub line_no: u64,
}

impl TokenizedLine {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lines are segregated by token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketKey(pub usize);

/// Tokenizes and interns one line. Whitespace-only lines yield `None`.
pub fn tokenize(
    line: &str,
    line_no: u64,
    cfg: &TokenizerConfig,
    interner: &mut Interner,
) -> Result<Option<TokenizedLine>> {
    let line = line.trim_end_matches(['\n', '\r']);
    let mut tokens = Vec::new();
    for tok in cfg.split(line) {
        tokens.push(interner.intern(tok)?);
    }
    if tokens.is_empty() {
        return Ok(None);
    }
    Ok(Some(TokenizedLine { tokens, line_no }))
}

pub fn route(line: &TokenizedLine) -> BucketKey {
    BucketKey(line.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BatchStats {
    pub lines: u64,
    pub accepted: u64,
    pub skipped: u64,
    pub new_buckets: u64,
    pub validations: u64,
    pub reeval_passes: u64,
    pub trimmed_rows: u64,
}

impl BatchStats {
    pub fn absorb(&mut self, other: &BatchStats) {
        self.lines += other.lines;
        self.accepted += other.accepted;
        self.skipped += other.skipped;
        self.new_buckets += other.new_buckets;
        self.validations += other.validations;
        self.reeval_passes += other.reeval_passes;
        self.trimmed_rows += other.trimmed_rows;
    }
}
