//! Deterministic toy text encoders.
//!
//! * [`chunked_prompt_encode`]: whitespace tokens hashed into a 65,536-slot
//!   vocabulary, embedded chunk by chunk (positions restart every
//!   `chunk_size` tokens), concatenated.
//! * [`glyph_encode`]: one token per UTF-8 byte, so any script tokenizes
//!   losslessly.
//! * [`GlyphMapper`]: per-token affine map that aligns glyph embeddings with
//!   the prompt-encoder width.
//!
//! Token embeddings are seeded unit-norm Gaussian vectors; there are no
//! pretrained weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VOCAB_SIZE: u32 = 65_536;
/// Reserved id outside the hashed range.
pub const NULL_TOKEN: u32 = VOCAB_SIZE;
pub const DEFAULT_CHUNK_SIZE: usize = 77;
pub const DEFAULT_MAX_TEXT_LEN: usize = 2048;

const PROMPT_TABLE: u64 = 1;
const GLYPH_TABLE: u64 = 2;
const POSITION_SCALE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub chunk_size: usize,
    pub d_text: usize,
    pub max_text_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            d_text: 16,
            max_text_len: DEFAULT_MAX_TEXT_LEN,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.d_text == 0 || self.max_text_len == 0 {
            return Err(Error::Configuration(
                "chunk_size, d_text and max_text_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Token ids with their `T×d_text` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSeq<S: Scalar = f64> {
    pub ids: Vec<u32>,
    pub embeddings: Tensor<S>,
}

impl<S: Scalar> TokenSeq<S> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_null(&self) -> bool {
        self.ids == [NULL_TOKEN]
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn word_id(word: &str) -> u32 {
    (fnv1a64(word.as_bytes()) % u64::from(VOCAB_SIZE)) as u32
}

pub fn tokenize(prompt: &str) -> Vec<u32> {
    prompt.split_whitespace().map(word_id).collect()
}

fn token_vector<S: Scalar>(seed: u64, table: u64, id: u32, d: usize) -> Vec<S> {
    let mut rng = Rng::new(seed).fork(table).fork(u64::from(id));
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.iter().map(|x| S::of(x / norm)).collect()
}

fn position_vector<S: Scalar>(pos: usize, d: usize) -> impl Iterator<Item = S> {
    (0..d).map(move |i| {
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * freq;
        S::of(POSITION_SCALE * if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

fn embed<S: Scalar>(
    ids: &[u32],
    positions: impl Iterator<Item = usize>,
    table: u64,
    cfg: &EncoderConfig,
) -> Tensor<S> {
    let d = cfg.d_text;
    let mut data = Vec::with_capacity(ids.len() * d);
    for (&id, pos) in ids.iter().zip(positions) {
        let tok = token_vector::<S>(cfg.seed, table, id, d);
        data.extend(tok.into_iter().zip(position_vector::<S>(pos, d)).map(|(a, b)| a + b));
    }
    Tensor::new(vec![ids.len(), d], data).expect("non-empty token list")
}

/// The canonical single-token null prompt.
pub fn null_encode<S: Scalar>(cfg: &EncoderConfig) -> TokenSeq<S> {
    TokenSeq {
        ids: vec![NULL_TOKEN],
        embeddings: embed(&[NULL_TOKEN], std::iter::once(0), PROMPT_TABLE, cfg),
    }
}

/// Chunked whitespace-token encoder for non-text layer prompts.
pub fn chunked_prompt_encode<S: Scalar>(prompt: &str, cfg: &EncoderConfig) -> TokenSeq<S> {
    let mut ids = tokenize(prompt);
    ids.truncate(cfg.max_text_len);
    if ids.is_empty() {
        return null_encode(cfg);
    }
    let chunk = cfg.chunk_size;
    let mut parts: Vec<Tensor<S>> = Vec::new();
    for piece in ids.chunks(chunk) {
        parts.push(embed(piece, 0..piece.len(), PROMPT_TABLE, cfg));
    }
    let refs: Vec<&Tensor<S>> = parts.iter().collect();
    TokenSeq {
        embeddings: Tensor::vstack(&refs).expect("chunks share width"),
        ids,
    }
}

/// Byte-level encoder for visual-text layer prompts.
pub fn glyph_encode<S: Scalar>(text: &str, cfg: &EncoderConfig) -> TokenSeq<S> {
    let mut ids: Vec<u32> = text.bytes().map(u32::from).collect();
    ids.truncate(cfg.max_text_len);
    if ids.is_empty() {
        return null_encode(cfg);
    }
    TokenSeq {
        embeddings: embed(&ids, 0..ids.len(), GLYPH_TABLE, cfg),
        ids,
    }
}

/// Per-token affine map `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphMapper<S: Scalar = f64> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> GlyphMapper<S> {
    pub fn identity(d: usize) -> Self {
        Self {
            weight: Tensor::identity(d),
            bias: Tensor::zeros(&[1, d]),
        }
    }

    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let (_, d_out) = weight.dims2()?;
        if bias.shape() != [1, d_out] {
            return Err(Error::Configuration(format!(
                "mapper bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn apply(&self, seq: &TokenSeq<S>) -> Result<TokenSeq<S>> {
        let (d_in, _) = self.weight.dims2()?;
        let (_, d) = seq.embeddings.dims2()?;
        if d != d_in {
            return Err(Error::Configuration(format!(
                "mapper expects width {d_in}, sequence has {d}"
            )));
        }
        Ok(TokenSeq {
            ids: seq.ids.clone(),
            embeddings: seq.embeddings.matmul(&self.weight)?.add_row(&self.bias)?,
        })
    }
}

/// Applies the mapper stored under `weight`/`bias` inside a graph.
pub fn glyph_map_node<S: Scalar>(
    graph: &mut Graph<S>,
    store: &ParamStore<S>,
    tokens: NodeId,
    weight: ParamId,
    bias: ParamId,
) -> Result<NodeId> {
    let w = graph.param(store, weight);
    let b = graph.param(store, bias);
    let (d_in, _) = store.get(weight).dims2()?;
    let (_, d) = graph.value(tokens).dims2()?;
    if d != d_in {
        return Err(Error::Configuration(format!(
            "mapper expects width {d_in}, sequence has {d}"
        )));
    }
    let x = graph.matmul(tokens, w)?;
    graph.add_row(x, b)
}
