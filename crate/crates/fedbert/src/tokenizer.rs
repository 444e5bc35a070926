//! Corpus-built tokenizer producing fixed-length id sequences.
//!
//! The surface tokenizer splits text into lowercased ASCII-letter runs and
//! single-character symbol tokens, which approximates sub-word fragmentation
//! of the numeric text feature. A vocabulary ranks surface tokens by corpus
//! frequency behind four reserved entries, and `encode` maps text to a padded
//! id sequence with an attention mask.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

/// Reserved token spellings, in id order. Surface tokens can never collide
/// with them: a letter run contains no brackets and a symbol token is a
/// single character.
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary file must start with the reserved tokens {RESERVED:?}")]
    BadReserved,
    #[error("line {line}: duplicate token `{token}`")]
    DuplicateToken { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable token/id bijection with ids contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { token_to_id, id_to_token: tokens }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Writes one token per line; the line number is the id.
    pub fn save<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for token in &self.id_to_token {
            writeln!(out, "{token}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        let mut seen = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let token = line?;
            if let Some(_prev) = seen.insert(token.clone(), idx) {
                return Err(TokenizerError::DuplicateToken { line: idx + 1, token });
            }
            tokens.push(token);
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(TokenizerError::BadReserved);
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

/// Fixed-length encoded text: `ids[i]` is meaningful where `mask[i] == 1`,
/// and `true_length` counts the meaningful prefix (always at least 2, for the
/// leading CLS and trailing SEP).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub true_length: usize,
}

/// Splits text into surface tokens: maximal ASCII-letter runs become
/// lowercased word tokens, every other non-whitespace character becomes a
/// single-character token, and whitespace only delimits.
pub fn surface_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphabetic() {
            run.push(ch.to_ascii_lowercase());
            continue;
        }
        if !run.is_empty() {
            tokens.push(std::mem::take(&mut run));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

/// Builds a vocabulary of at most `max_size` entries: the reserved tokens
/// first, then surface tokens by descending corpus frequency, ties broken
/// lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Vocabulary {
    assert!(max_size >= RESERVED.len() + 1, "max_size must be at least {}", RESERVED.len() + 1);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in corpus {
        for token in surface_tokenize(doc.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().take(max_size - RESERVED.len()).map(|(t, _)| t));
    Vocabulary::from_tokens(tokens)
}

/// Encodes text as `[CLS] tokens... [SEP]` padded to `max_len`. Surface
/// tokens beyond `max_len - 2` are truncated from the right; unknown tokens
/// map to UNK.
pub fn encode(vocab: &Vocabulary, text: &str, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must fit CLS and SEP");
    let surface = surface_tokenize(text);
    let body = surface.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    for token in &surface[..body] {
        ids.push(vocab.id_of(token).unwrap_or(UNK));
    }
    ids.push(SEP);
    let true_length = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; true_length];
    mask.resize(max_len, 0);
    TokenSequence { ids, mask, true_length }
}
