//! Deterministic stand-in for the inference engine.
//!
//! The engine accepts an optional pre-tokenized context and a text prompt.
//! Only the prompt is tokenized; the context ids are prepended as-is. The
//! generated ids are a pure function of `(seed, model_id, input ids,
//! max_tokens)` and the engine reports how long a given hardware profile
//! would have spent tokenizing, prefilling and decoding. The caller decides
//! how that time elapses (virtual clock or real sleep).
//!
//! Seed material is hashed with FNV-1a (64 bit) over
//! `seed as i64 LE || model_id || 0xFF || ids as u32 LE` followed by the
//! murmur3 `fmix64` finalizer. With temperature 0 the i-th id is
//! `256 + fmix64(h ^ (i + 1) * 0x9E3779B97F4A7C15) % |entries|`; otherwise
//! ids are drawn from a splitmix64 stream seeded with
//! `h ^ temperature.to_bits()`. A vocab without entries generates printable
//! ASCII fallback bytes instead.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenSequence, Vocab, BYTE_FALLBACK};
use crate::transport::Nanos;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("model {0} is not loaded")]
    ModelNotLoaded(String),
    #[error("max_tokens must be at least 1")]
    InvalidParams,
    #[error("unknown hardware profile {0}")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    pub tokenize_us_per_char: f64,
    pub prefill_us_per_token: f64,
    pub decode_base_us_per_token: f64,
    pub decode_us_per_context_token: f64,
}

impl HardwareProfile {
    pub fn m2() -> Self {
        Self {
            name: "m2".into(),
            tokenize_us_per_char: 0.2,
            prefill_us_per_token: 3.0,
            decode_base_us_per_token: 700.0,
            decode_us_per_context_token: 0.5,
        }
    }

    pub fn tx2() -> Self {
        Self {
            name: "tx2".into(),
            tokenize_us_per_char: 2.0,
            prefill_us_per_token: 30.0,
            decode_base_us_per_token: 7000.0,
            decode_us_per_context_token: 5.0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, EngineError> {
        match name {
            "m2" => Ok(Self::m2()),
            "tx2" => Ok(Self::tx2()),
            other => Err(EngineError::UnknownProfile(other.to_string())),
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.tokenize_us_per_char,
            self.prefill_us_per_token,
            self.decode_base_us_per_token,
            self.decode_us_per_context_token,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn tokenize_cost(&self, chars: usize) -> Nanos {
        us_to_nanos(chars as f64 * self.tokenize_us_per_char)
    }

    pub fn prefill_cost(&self, input_tokens: usize) -> Nanos {
        us_to_nanos(input_tokens as f64 * self.prefill_us_per_token)
    }

    pub fn decode_cost(&self, max_tokens: u32, input_tokens: usize) -> Nanos {
        let per_token =
            self.decode_base_us_per_token + self.decode_us_per_context_token * input_tokens as f64;
        us_to_nanos(f64::from(max_tokens) * per_token)
    }
}

fn us_to_nanos(us: f64) -> Nanos {
    (us * 1_000.0).round() as Nanos
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub seed: i64,
    pub temperature: f64,
    #[serde(rename = "n_predict")]
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { seed: 123, temperature: 0.0, max_tokens: 128 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionInput {
    pub model_id: String,
    pub context: Option<TokenSequence>,
    pub prompt: String,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineTiming {
    pub tokenize_ns: Nanos,
    pub prefill_ns: Nanos,
    pub decode_ns: Nanos,
}

impl EngineTiming {
    pub fn total(&self) -> Nanos {
        self.tokenize_ns + self.prefill_ns + self.decode_ns
    }

    pub fn inference(&self) -> Nanos {
        self.prefill_ns + self.decode_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutput {
    pub tokens: TokenSequence,
    pub text: String,
    pub timing: EngineTiming,
    pub input_token_count: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// Seed hash over `(seed, model_id, ids)`.
pub fn hash64(seed: i64, model_id: &str, ids: &[u32]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, model_id.as_bytes());
    h = fnv1a(h, &[0xFF]);
    for id in ids {
        h = fnv1a(h, &id.to_le_bytes());
    }
    fmix64(h)
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(GOLDEN);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Generates `count` ids from the seed hash.
pub fn generate_ids(h: u64, temperature: f64, count: u32, vocab: &Vocab) -> TokenSequence {
    let entries = u64::from(vocab.id_space() - BYTE_FALLBACK);
    let (base, span) = if entries == 0 { (32u64, 95u64) } else { (u64::from(BYTE_FALLBACK), entries) };
    if temperature > 0.0 {
        let mut rng = SplitMix64(h ^ temperature.to_bits());
        (0..count).map(|_| (base + rng.next() % span) as u32).collect()
    } else {
        (0..count)
            .map(|i| (base + fmix64(h ^ u64::from(i + 1).wrapping_mul(GOLDEN)) % span) as u32)
            .collect()
    }
}

/// One node's inference engine: a hardware profile plus the vocabularies of
/// the served models.
#[derive(Debug, Clone)]
pub struct Engine {
    profile: HardwareProfile,
    vocabs: BTreeMap<String, Arc<Vocab>>,
}

impl Engine {
    pub fn new(profile: HardwareProfile) -> Self {
        Self { profile, vocabs: BTreeMap::new() }
    }

    pub fn load(&mut self, vocab: Vocab) {
        self.vocabs.insert(vocab.model_id().to_string(), Arc::new(vocab));
    }

    pub fn profile(&self) -> &HardwareProfile {
        &self.profile
    }

    pub fn vocab(&self, model_id: &str) -> Result<&Arc<Vocab>, EngineError> {
        self.vocabs.get(model_id).ok_or_else(|| EngineError::ModelNotLoaded(model_id.to_string()))
    }

    pub fn tokenize(&self, model_id: &str, text: &str) -> Result<TokenSequence, EngineError> {
        Ok(self.vocab(model_id)?.tokenize(text))
    }

    pub fn complete(&self, input: &CompletionInput) -> Result<CompletionOutput, EngineError> {
        let vocab = self.vocab(&input.model_id)?;
        if input.params.max_tokens == 0 {
            return Err(EngineError::InvalidParams);
        }
        let prompt_ids = vocab.tokenize(&input.prompt);
        let mut full = input.context.clone().unwrap_or_default();
        full.extend_from(&prompt_ids);

        let h = hash64(input.params.seed, &input.model_id, &full);
        let tokens = generate_ids(h, input.params.temperature, input.params.max_tokens, vocab);
        let text = vocab.detokenize(&tokens).expect("generated ids are valid utf-8 entries");
        let timing = EngineTiming {
            tokenize_ns: self.profile.tokenize_cost(input.prompt.chars().count()),
            prefill_ns: self.profile.prefill_cost(full.len()),
            decode_ns: self.profile.decode_cost(input.params.max_tokens, full.len()),
        };
        Ok(CompletionOutput { tokens, text, timing, input_token_count: full.len() })
    }
}
