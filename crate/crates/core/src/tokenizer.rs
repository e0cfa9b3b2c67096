//! Model-scoped greedy longest-match tokenizer with byte fallback.
//!
//! Ids `0..256` are the raw bytes. Vocabulary entry `k` (line `k` of the
//! vocab file) has id `256 + k`. Matching runs over the UTF-8 bytes of the
//! input, left to right, always consuming the longest entry that matches at
//! the current position and falling back to a single byte otherwise.
//!
//! Vocab files are line based, so no entry can contain `\n`. Any split of a
//! text next to a `\n` therefore tokenizes to the concatenation of the
//! pieces, which is what lets stored token histories be concatenated
//! without re-tokenizing them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, DecodeError};

/// Number of ids reserved for byte fallback.
pub const BYTE_FALLBACK: u32 = 256;

const DEFAULT_VOCAB: &str = include_str!("../vocab/default.vocab");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocab {model}: line {line} is empty")]
    EmptyEntry { model: String, line: usize },
    #[error("vocab {model}: entry {entry:?} on line {line} duplicates line {first}")]
    Duplicate {
        model: String,
        entry: String,
        line: usize,
        first: usize,
    },
    #[error("vocab file is not valid utf-8: {0}")]
    Encoding(String),
    #[error("reading vocab {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("token id {id} is outside the vocabulary (size {size})")]
    UnknownToken { id: u32, size: u32 },
    #[error("fallback bytes do not form valid utf-8")]
    Encoding,
}

/// A sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    pub fn extend_from(&mut self, other: &TokenSequence) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }
}

impl Deref for TokenSequence {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

impl FromIterator<u32> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(u8, u32)>,
    id: Option<u32>,
}

/// Immutable vocabulary for one model.
#[derive(Clone)]
pub struct Vocab {
    model_id: String,
    entries: Vec<String>,
    trie: Vec<TrieNode>,
}

impl fmt::Debug for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocab")
            .field("model_id", &self.model_id)
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl Vocab {
    pub fn from_entries<S: Into<String>>(
        model_id: impl Into<String>,
        entries: impl IntoIterator<Item = S>,
    ) -> Result<Self, VocabError> {
        let model_id = model_id.into();
        let entries: Vec<String> = entries.into_iter().map(Into::into).collect();
        let mut first_seen: HashMap<&str, usize> = HashMap::with_capacity(entries.len());
        for (line, entry) in entries.iter().enumerate() {
            if entry.is_empty() {
                return Err(VocabError::EmptyEntry { model: model_id, line });
            }
            if let Some(&first) = first_seen.get(entry.as_str()) {
                return Err(VocabError::Duplicate {
                    model: model_id.clone(),
                    entry: entry.clone(),
                    line,
                    first,
                });
            }
            first_seen.insert(entry, line);
        }

        let mut trie = vec![TrieNode::default()];
        for (k, entry) in entries.iter().enumerate() {
            let mut node = 0usize;
            for &b in entry.as_bytes() {
                node = match trie[node].children.binary_search_by_key(&b, |c| c.0) {
                    Ok(i) => trie[node].children[i].1 as usize,
                    Err(i) => {
                        let next = trie.len() as u32;
                        trie.push(TrieNode::default());
                        trie[node].children.insert(i, (b, next));
                        next as usize
                    }
                };
            }
            trie[node].id = Some(BYTE_FALLBACK + k as u32);
        }
        Ok(Self { model_id, entries, trie })
    }

    /// Parses vocab file contents: one entry per LF-terminated line. A single
    /// trailing newline is allowed; any other empty line is an error.
    pub fn parse(model_id: impl Into<String>, text: &str) -> Result<Self, VocabError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::from_entries(model_id, Vec::<String>::new());
        }
        Self::from_entries(model_id, body.split('\n'))
    }

    /// The vocabulary shipped with the crate, bound to `model_id`.
    pub fn default_for(model_id: impl Into<String>) -> Self {
        Self::parse(model_id, DEFAULT_VOCAB).expect("shipped vocab is valid")
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Total id space: byte fallback plus entries.
    pub fn id_space(&self) -> u32 {
        BYTE_FALLBACK + self.entries.len() as u32
    }

    /// Longest entry matching at the start of `bytes`: (id, byte length).
    fn longest_match(&self, bytes: &[u8]) -> Option<(u32, usize)> {
        let mut node = 0usize;
        let mut best = None;
        for (i, &b) in bytes.iter().enumerate() {
            match self.trie[node].children.binary_search_by_key(&b, |c| c.0) {
                Ok(pos) => node = self.trie[node].children[pos].1 as usize,
                Err(_) => break,
            }
            if let Some(id) = self.trie[node].id {
                best = Some((id, i + 1));
            }
        }
        best
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        let mut pos = 0;
        while pos < bytes.len() {
            match self.longest_match(&bytes[pos..]) {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    out.push(u32::from(bytes[pos]));
                    pos += 1;
                }
            }
        }
        TokenSequence(out)
    }

    pub fn detokenize_bytes(&self, tokens: &[u32]) -> Result<Vec<u8>, TokenError> {
        let mut out = Vec::with_capacity(tokens.len() * 4);
        for &id in tokens {
            if id < BYTE_FALLBACK {
                out.push(id as u8);
            } else {
                let entry = self
                    .entries
                    .get((id - BYTE_FALLBACK) as usize)
                    .ok_or(TokenError::UnknownToken { id, size: self.id_space() })?;
                out.extend_from_slice(entry.as_bytes());
            }
        }
        Ok(out)
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<String, TokenError> {
        String::from_utf8(self.detokenize_bytes(tokens)?).map_err(|_| TokenError::Encoding)
    }
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab, VocabError> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| VocabError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = String::from_utf8(raw).map_err(|e| VocabError::Encoding(e.to_string()))?;
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Vocab::parse(model_id, &text)
}

/// LEB128 encoding of each id, concatenated. This is the stored and
/// replicated form of tokenized context.
pub fn encode_tokens(tokens: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tokens.len() * 2);
    for &id in tokens {
        codec::put_varint(&mut out, u64::from(id));
    }
    out
}

pub fn encoded_len(tokens: &[u32]) -> usize {
    tokens.iter().map(|&id| codec::varint_len(u64::from(id))).sum()
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenSequence, DecodeError> {
    let mut reader = codec::Reader::new(bytes);
    let mut out = Vec::with_capacity(bytes.len() / 2);
    while !reader.is_empty() {
        let at = reader.position();
        let v = reader.varint()?;
        let id = u32::try_from(v).map_err(|_| DecodeError::Overflow(at))?;
        out.push(id);
    }
    Ok(TokenSequence(out))
}

/// Builds vocab entries from a text corpus: the `size` most frequent words
/// (ties broken alphabetically), each in bare, leading-space and
/// capitalized forms, after the role markers. Entries shorter than two
/// bytes are skipped since they never beat byte fallback.
pub fn build_vocab_entries(corpus: &str, size: usize, markers: &[&str]) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for raw in corpus.split_whitespace() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if word.is_empty() {
            continue;
        }
        *counts.entry(word.to_lowercase()).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut add = |e: String| {
        if e.len() >= 2 && !e.contains('\n') && seen.insert(e.clone()) {
            out.push(e);
        }
    };
    for m in markers {
        add((*m).to_string());
    }
    for (word, _) in ranked.into_iter().take(size) {
        let mut chars = word.chars();
        let capital: String = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => continue,
        };
        add(word.clone());
        add(format!(" {word}"));
        add(capital.clone());
        add(format!(" {capital}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(entries: &[&str]) -> Vocab {
        Vocab::from_entries("m", entries.iter().copied()).unwrap()
    }

    #[test]
    fn ids_follow_line_order() {
        let v = Vocab::parse("m", "robot\nthe\n").unwrap();
        assert_eq!(v.tokenize("robot").to_vec(), vec![256]);
        assert_eq!(v.tokenize("the").to_vec(), vec![257]);
    }

    #[test]
    fn duplicate_entry_rejected() {
        let err = Vocab::parse("m", "robot\na\nb\nrobot\n").unwrap_err();
        assert!(matches!(err, VocabError::Duplicate { line: 3, first: 0, .. }));
    }

    #[test]
    fn empty_line_rejected() {
        let err = Vocab::parse("m", "robot\n\nthe\n").unwrap_err();
        assert!(matches!(err, VocabError::EmptyEntry { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_fallback_only() {
        let v = Vocab::parse("m", "").unwrap();
        assert_eq!(v.id_space(), 256);
        assert_eq!(v.tokenize("€").to_vec(), vec![226, 130, 172]);
    }

    #[test]
    fn empty_text() {
        let v = vocab(&["robot"]);
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.detokenize(&[]).unwrap(), "");
    }

    #[test]
    fn longest_entry_wins() {
        let v = vocab(&["ro", "robot", "rob"]);
        assert_eq!(v.tokenize("robots").to_vec(), vec![257, u32::from(b's')]);
        assert_eq!(v.tokenize("rox").to_vec(), vec![256, u32::from(b'x')]);
        assert_eq!(v.detokenize(&[256, 257]).unwrap(), "rorobot");
    }

    #[test]
    fn unknown_id_rejected() {
        let v = vocab(&["robot"]);
        assert_eq!(
            v.detokenize(&[257]),
            Err(TokenError::UnknownToken { id: 257, size: 257 })
        );
    }

    #[test]
    fn broken_fallback_utf8_rejected() {
        let v = vocab(&[]);
        assert_eq!(v.detokenize(&[226, 130]), Err(TokenError::Encoding));
    }

    #[test]
    fn leb128_encoding() {
        assert!(encode_tokens(&[]).is_empty());
        assert_eq!(encode_tokens(&[256]), vec![0x80, 0x02]);
        assert_eq!(encode_tokens(&[5, 300]), vec![5, 0xAC, 0x02]);
        assert_eq!(encoded_len(&[5, 300, 20000]), 1 + 2 + 3);
        assert_eq!(decode_tokens(&[5, 0xAC, 0x02]).unwrap().to_vec(), vec![5, 300]);
        assert!(decode_tokens(&[0x80]).is_err());
    }

    #[test]
    fn default_vocab_loads() {
        let v = Vocab::default_for("qwen");
        assert_eq!(v.model_id(), "qwen");
        assert!(v.id_space() < 16384, "all ids must fit two varint bytes");
        assert_eq!(v.tokenize("<|user|>\n").to_vec(), vec![257, 10]);
        assert!(v.entries().iter().all(|e| e.len() >= 2));
    }

    #[test]
    fn built_vocab_ranks_by_frequency() {
        let entries = build_vocab_entries("b a b c b a, x", 2, &["<|user|>"]);
        assert_eq!(entries, vec!["<|user|>", " b", " B", " a", " A"]);
    }
}
