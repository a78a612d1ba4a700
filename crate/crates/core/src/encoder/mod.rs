//! Tokenization and pluggable text encoders.
//!
//! A backend turns text into subword ids and subword ids into hidden states
//! plus classification logits. Pretrained checkpoints plug in behind the
//! [`EncoderBackend`] trait via the registry; the built-in [`ToyBackend`]
//! is a small trainable encoder that runs anywhere and keeps the whole test
//! suite self-contained.

mod toy;

pub use toy::{ToyArtifact, ToyBackend};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("max_len must be >= 2 to fit the special markers, got {0}")]
    BadMaxLen(usize),
    #[error("toy backend hidden dim must lie in [8, 128], got {0}")]
    HiddenDimOutOfRange(usize),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    VocabOutOfRange { id: u32, vocab_size: usize },
    #[error("encode called with an empty batch")]
    EmptyBatch,
    #[error("mean pooling needs at least one unmasked position")]
    EmptyMask,
    #[error("mask length {mask_len} does not match {rows} hidden rows")]
    MaskLengthMismatch { rows: usize, mask_len: usize },
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("cannot parse vocabulary identifier {0:?} (expected e.g. \"fnv1a:2048\")")]
    BadVocabSpec(String),
    #[error("failed to read model artifact: {0}")]
    Artifact(String),
}

/// Where a subword position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    /// A special marker (sequence start / end).
    Special,
    /// First subword of word `i`.
    Word(usize),
    /// Continuation subword of word `i`.
    Continuation(usize),
}

impl Alignment {
    pub fn word_index(&self) -> Option<usize> {
        match self {
            Alignment::Word(i) | Alignment::Continuation(i) => Some(*i),
            Alignment::Special => None,
        }
    }
}

/// A truncated subword encoding of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedInput {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub word_alignment: Vec<Alignment>,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Hidden states and logits for one input.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// One row per subword position, `hidden_dim` columns.
    pub last_hidden: Array2<f64>,
    /// Binary-classification logits, when the backend has a document head.
    pub doc_logits: Option<[f64; 2]>,
    /// Per-position tag logits, when the backend has a token head.
    pub token_logits: Option<Array2<f64>>,
}

/// Declarative description of a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBackendSpec {
    pub name: String,
    pub hidden_dim: usize,
    /// Vocabulary identifier, e.g. `"fnv1a:2048"` for the hashed vocabulary.
    pub vocab: String,
    pub doc_head: bool,
    pub token_head: bool,
    pub hidden_states: bool,
}

impl EncoderBackendSpec {
    pub fn toy(hidden_dim: usize, vocab_size: usize) -> Self {
        Self {
            name: "toy".into(),
            hidden_dim,
            vocab: format!("fnv1a:{vocab_size}"),
            doc_head: true,
            token_head: true,
            hidden_states: true,
        }
    }

    pub fn vocab_size(&self) -> Result<usize, EncoderError> {
        let err = || EncoderError::BadVocabSpec(self.vocab.clone());
        let (scheme, size) = self.vocab.split_once(':').ok_or_else(err)?;
        if scheme != "fnv1a" {
            return Err(err());
        }
        let n: usize = size.parse().map_err(|_| err())?;
        if n <= HashTokenizer::NUM_SPECIAL {
            return Err(err());
        }
        Ok(n)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Whitespace-split, character-chunked subword tokenizer over a hashed
/// vocabulary. Deterministic by construction, no vocabulary files needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashTokenizer {
    pub vocab_size: usize,
    /// Longest subword piece, in characters.
    pub max_piece_chars: usize,
}

impl HashTokenizer {
    pub const CLS: u32 = 0;
    pub const SEP: u32 = 1;
    pub const NUM_SPECIAL: usize = 2;

    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_piece_chars: 4,
        }
    }

    fn piece_id(&self, piece: &str) -> u32 {
        let buckets = (self.vocab_size - Self::NUM_SPECIAL) as u64;
        (fnv1a(piece.as_bytes()) % buckets) as u32 + Self::NUM_SPECIAL as u32
    }

    fn word_pieces(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        chars
            .chunks(self.max_piece_chars)
            .map(|c| c.iter().collect())
            .collect()
    }

    /// Encode raw text. Truncation keeps the head of the sequence; the two
    /// special markers count toward `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenizedInput, EncoderError> {
        let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        self.tokenize_words(&words, max_len)
    }

    /// Encode a pre-split word sequence, keeping the per-word alignment.
    pub fn tokenize_words(
        &self,
        words: &[String],
        max_len: usize,
    ) -> Result<TokenizedInput, EncoderError> {
        if max_len < 2 {
            return Err(EncoderError::BadMaxLen(max_len));
        }
        let budget = max_len - Self::NUM_SPECIAL;

        let mut ids = vec![Self::CLS];
        let mut alignment = vec![Alignment::Special];
        let mut used = 0;
        'outer: for (w_idx, word) in words.iter().enumerate() {
            for (p_idx, piece) in self.word_pieces(word).into_iter().enumerate() {
                if used == budget {
                    break 'outer;
                }
                ids.push(self.piece_id(&piece));
                alignment.push(if p_idx == 0 {
                    Alignment::Word(w_idx)
                } else {
                    Alignment::Continuation(w_idx)
                });
                used += 1;
            }
        }
        ids.push(Self::SEP);
        alignment.push(Alignment::Special);

        let mask = vec![1u8; ids.len()];
        Ok(TokenizedInput {
            token_ids: ids,
            attention_mask: mask,
            word_alignment: alignment,
        })
    }
}

/// A text encoder: tokenizes and produces hidden states plus whatever heads
/// it declares in its spec.
pub trait EncoderBackend {
    fn spec(&self) -> &EncoderBackendSpec;

    fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenizedInput, EncoderError>;

    fn tokenize_words(
        &self,
        words: &[String],
        max_len: usize,
    ) -> Result<TokenizedInput, EncoderError>;

    /// Encode a batch, one output per input. Inference is deterministic for
    /// fixed weights and one instance's output never depends on the others.
    fn encode(&self, batch: &[TokenizedInput]) -> Result<Vec<EncoderOutput>, EncoderError>;
}

/// Mean of the hidden rows at unmasked positions.
pub fn pool_mean(output: &EncoderOutput, mask: &[u8]) -> Result<Array1<f64>, EncoderError> {
    let rows = output.last_hidden.nrows();
    if mask.len() != rows {
        return Err(EncoderError::MaskLengthMismatch {
            rows,
            mask_len: mask.len(),
        });
    }
    let count = mask.iter().filter(|&&m| m != 0).count();
    if count == 0 {
        return Err(EncoderError::EmptyMask);
    }
    let mut acc = Array1::<f64>::zeros(output.last_hidden.ncols());
    for (i, &m) in mask.iter().enumerate() {
        if m != 0 {
            acc += &output.last_hidden.row(i);
        }
    }
    Ok(acc / count as f64)
}

type BackendMaker =
    Box<dyn Fn(&EncoderBackendSpec, &BackendInit) -> Result<Box<dyn EncoderBackend>, EncoderError>>;

/// Construction-time knobs that are not part of the spec proper.
#[derive(Debug, Clone, Copy)]
pub struct BackendInit {
    pub seed: u64,
    pub num_tags: usize,
}

impl Default for BackendInit {
    fn default() -> Self {
        Self {
            seed: 0,
            num_tags: 2,
        }
    }
}

/// Registry of backend constructors keyed by name. External checkpoint
/// backends register here; only `"toy"` ships built in.
pub struct BackendRegistry {
    makers: BTreeMap<String, BackendMaker>,
}

impl BackendRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self {
            makers: BTreeMap::new(),
        };
        reg.register("toy", |spec, init| {
            Ok(Box::new(ToyBackend::new(spec, init.num_tags, init.seed)?))
        });
        reg
    }

    pub fn register(
        &mut self,
        name: &str,
        maker: impl Fn(&EncoderBackendSpec, &BackendInit) -> Result<Box<dyn EncoderBackend>, EncoderError>
            + 'static,
    ) {
        self.makers.insert(name.to_string(), Box::new(maker));
    }

    pub fn make(
        &self,
        spec: &EncoderBackendSpec,
        init: &BackendInit,
    ) -> Result<Box<dyn EncoderBackend>, EncoderError> {
        let maker = self
            .makers
            .get(&spec.name)
            .ok_or_else(|| EncoderError::UnknownBackend(spec.name.clone()))?;
        maker(spec, init)
    }

    pub fn names(&self) -> Vec<&str> {
        self.makers.keys().map(String::as_str).collect()
    }
}
