//! Task heads: binding an encoder to document, sentence, or token
//! classification, including subword-label alignment and decoding back to
//! word-level tags.
//!
//! Labels sit on the first subword of each word; continuation subwords and
//! special markers carry the ignore marker and receive no supervision.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenInstance;
use crate::encoder::{Alignment, EncoderBackend, EncoderError, TokenizedInput};

pub const DEFAULT_IGNORE_INDEX: i64 = -100;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("instance {id}: tag {tag:?} not in the configured tag set")]
    UnknownTag { id: String, tag: String },
    #[error("backend {backend:?} lacks a {capability} head")]
    MissingCapability {
        backend: String,
        capability: &'static str,
    },
    #[error("instance {id} has no label but the task needs one")]
    Unlabeled { id: String },
    #[error("instance {id} is a {got} instance, expected {expected}")]
    WrongKind {
        id: String,
        got: String,
        expected: String,
    },
    #[error("tag set must contain \"O\"")]
    MissingOutsideTag,
    #[error("failed to read/write predictions: {0}")]
    PredictionIo(String),
}

/// Which granularity a head classifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Document,
    Sentence,
    Token,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Document => f.write_str("document"),
            TaskKind::Sentence => f.write_str("sentence"),
            TaskKind::Token => f.write_str("token"),
        }
    }
}

impl TaskKind {
    pub fn is_binary(&self) -> bool {
        matches!(self, TaskKind::Document | TaskKind::Sentence)
    }
}

/// Output layer description for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeadSpec {
    pub kind: TaskKind,
    /// 2 for the binary tasks, tag-set size for the token task.
    pub num_classes: usize,
    /// Target value placed on unsupervised subword positions.
    pub ignore_index: i64,
}

impl TaskHeadSpec {
    pub fn binary(kind: TaskKind) -> Self {
        Self {
            kind,
            num_classes: 2,
            ignore_index: DEFAULT_IGNORE_INDEX,
        }
    }

    pub fn token(num_tags: usize) -> Self {
        Self {
            kind: TaskKind::Token,
            num_classes: num_tags,
            ignore_index: DEFAULT_IGNORE_INDEX,
        }
    }
}

/// The task's BIO tag inventory, index <-> string both ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagVocab {
    tags: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl TagVocab {
    pub fn new(tags: &[String]) -> Result<Self, TaskError> {
        if !tags.iter().any(|t| t == "O") {
            return Err(TaskError::MissingOutsideTag);
        }
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            tags: tags.to_vec(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Rebuild the lookup map after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self
            .tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self
    }
}

/// One model output ready for dumping or scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Binary { id: String, score: f64 },
    Tags { id: String, tags: Vec<String> },
}

/// Map word-level tags onto subword positions: the first subword of each
/// word carries the tag index, everything else the ignore marker. Words
/// dropped by truncation get no target at all.
pub fn align_labels(
    instance: &TokenInstance,
    tok: &TokenizedInput,
    vocab: &TagVocab,
    ignore_index: i64,
) -> Result<Vec<i64>, TaskError> {
    let mut targets = vec![ignore_index; tok.token_ids.len()];
    for (pos, align) in tok.word_alignment.iter().enumerate() {
        if let Alignment::Word(w) = align {
            let tag = &instance.tags[*w];
            let idx = vocab.index_of(tag).ok_or_else(|| TaskError::UnknownTag {
                id: instance.id.clone(),
                tag: tag.clone(),
            })?;
            targets[pos] = idx as i64;
        }
    }
    Ok(targets)
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let p1 = e1 / (e0 + e1);
    // the pair must sum to exactly 1 after normalization
    [1.0 - p1, p1]
}

/// Positive-class probability from the two document logits.
pub fn positive_probability(doc_logits: [f64; 2]) -> f64 {
    softmax2(doc_logits)[1]
}

/// Classify one text: softmax over the two document logits, returning the
/// positive-class probability.
pub fn predict_binary(
    backend: &dyn EncoderBackend,
    text: &str,
    max_len: usize,
) -> Result<f64, TaskError> {
    if !backend.spec().doc_head {
        return Err(TaskError::MissingCapability {
            backend: backend.spec().name.clone(),
            capability: "document",
        });
    }
    let tok = backend.tokenize(text, max_len)?;
    let out = backend.encode(&[tok])?;
    let logits = out[0].doc_logits.expect("doc head declared in spec");
    Ok(positive_probability(logits))
}

/// Word-level tags from per-subword logits: argmax at each word's first
/// subword, ties broken toward the lowest tag index.
pub fn decode_tags(
    token_logits: &Array2<f64>,
    alignment: &[Alignment],
    vocab: &TagVocab,
) -> Vec<String> {
    let mut out = Vec::new();
    for (pos, align) in alignment.iter().enumerate() {
        if let Alignment::Word(_) = align {
            let row = token_logits.row(pos);
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            out.push(vocab.tag(best).to_string());
        }
    }
    out
}

/// Tag a token instance, padding words lost to truncation with "O" so the
/// output always matches the instance's word count.
pub fn predict_tags(
    backend: &dyn EncoderBackend,
    instance: &TokenInstance,
    vocab: &TagVocab,
    max_len: usize,
) -> Result<Vec<String>, TaskError> {
    if !backend.spec().token_head {
        return Err(TaskError::MissingCapability {
            backend: backend.spec().name.clone(),
            capability: "token",
        });
    }
    let tok = backend.tokenize_words(&instance.words, max_len)?;
    let out = backend.encode(std::slice::from_ref(&tok))?;
    let logits = out[0].token_logits.as_ref().expect("token head declared");
    let mut tags = decode_tags(logits, &tok.word_alignment, vocab);
    while tags.len() < instance.words.len() {
        tags.push("O".to_string());
    }
    Ok(tags)
}

/// Write predictions as JSON lines: `{"id","score"}` for binary tasks,
/// `{"id","tags":[...]}` for the token task.
pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<(), TaskError> {
    let mut out = String::new();
    for p in preds {
        out.push_str(
            &serde_json::to_string(p).map_err(|e| TaskError::PredictionIo(e.to_string()))?,
        );
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| TaskError::PredictionIo(e.to_string()))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, TaskError> {
    let data = std::fs::read_to_string(path).map_err(|e| TaskError::PredictionIo(e.to_string()))?;
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TaskError::PredictionIo(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderBackendSpec, HashTokenizer, ToyBackend};

    fn vocab3() -> TagVocab {
        TagVocab::new(&[
            "O".into(),
            "B-trigger".into(),
            "I-trigger".into(),
            "B-place".into(),
            "I-place".into(),
        ])
        .unwrap()
    }

    fn instance(words: &[&str], tags: &[&str]) -> TokenInstance {
        TokenInstance {
            id: "t1".into(),
            lang: "en".into(),
            words: words.iter().map(|s| s.to_string()).collect(),
            tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn align_puts_tag_on_first_subword_only() {
        let tok = HashTokenizer::new(128);
        let inst = instance(&["New", "Yorkers"], &["B-place", "I-place"]);
        // "Yorkers" splits into "York" + "ers"
        let t = tok.tokenize_words(&inst.words, 150).unwrap();
        let targets = align_labels(&inst, &t, &vocab3(), -100).unwrap();
        assert_eq!(targets, vec![-100, 3, 4, -100, -100]);
    }

    #[test]
    fn align_all_outside() {
        let tok = HashTokenizer::new(128);
        let inst = instance(&["just", "plain", "words"], &["O", "O", "O"]);
        let t = tok.tokenize_words(&inst.words, 150).unwrap();
        let targets = align_labels(&inst, &t, &vocab3(), -100).unwrap();
        let supervised: Vec<i64> = targets.iter().copied().filter(|&t| t >= 0).collect();
        assert_eq!(supervised, vec![0, 0, 0]);
    }

    #[test]
    fn align_rejects_unknown_tag() {
        let tok = HashTokenizer::new(128);
        let inst = instance(&["x"], &["B-unknown"]);
        let t = tok.tokenize_words(&inst.words, 150).unwrap();
        let err = align_labels(&inst, &t, &vocab3(), -100).unwrap_err();
        assert!(err.to_string().contains("B-unknown"), "{err}");
    }

    #[test]
    fn align_truncation_drops_tail_words() {
        let tok = HashTokenizer::new(128);
        let words: Vec<&str> = vec!["word"; 200];
        let tags: Vec<&str> = vec!["O"; 200];
        let inst = instance(&words, &tags);
        let t = tok.tokenize_words(&inst.words, 150).unwrap();
        let targets = align_labels(&inst, &t, &vocab3(), -100).unwrap();
        let supervised = targets.iter().filter(|&&t| t >= 0).count();
        let surviving_words = t
            .word_alignment
            .iter()
            .filter(|a| matches!(a, Alignment::Word(_)))
            .count();
        assert_eq!(supervised, surviving_words);
        assert_eq!(surviving_words, 148); // one piece per word, 2 markers
    }

    #[test]
    fn softmax_symmetry_and_saturation() {
        assert_eq!(positive_probability([0.0, 0.0]), 0.5);
        assert!((positive_probability([-1000.0, 1000.0]) - 1.0).abs() < f64::EPSILON);
    }

    #[test]
    fn softmax_hand_computed() {
        // e^0.9 / (e^0.3 + e^0.9)
        let p = positive_probability([0.3, 0.9]);
        assert!((p - 0.6456563062).abs() < 1e-4, "{p}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = softmax2([0.7, -1.3]);
        assert_eq!(p[0] + p[1], 1.0);
    }

    #[test]
    fn decode_tags_argmax_and_ties() {
        let vocab = vocab3();
        // one word, logits peaked at O
        let logits = ndarray::arr2(&[
            [0.0; 5],                  // special
            [5.0, 1.0, 1.0, 1.0, 1.0], // word 0
            [0.0; 5],                  // special
        ]);
        let alignment = vec![Alignment::Special, Alignment::Word(0), Alignment::Special];
        assert_eq!(decode_tags(&logits, &alignment, &vocab), vec!["O"]);

        // exact tie between tags 1 and 3 -> lower index wins
        let logits = ndarray::arr2(&[[1.0, 7.0, 0.0, 7.0, 0.0]]);
        let alignment = vec![Alignment::Word(0)];
        assert_eq!(decode_tags(&logits, &alignment, &vocab), vec!["B-trigger"]);
    }

    #[test]
    fn decode_four_word_fixture() {
        let vocab = vocab3();
        let logits = ndarray::arr2(&[
            [9.0, 0.0, 0.0, 0.0, 0.0], // word 0 -> O
            [0.0, 9.0, 0.0, 0.0, 0.0], // word 1 -> B-trigger
            [0.0, 0.0, 9.0, 0.0, 0.0], // word 2 -> I-trigger
            [0.0, 0.0, 0.0, 9.0, 0.0], // word 3 -> B-place
        ]);
        let alignment = vec![
            Alignment::Word(0),
            Alignment::Word(1),
            Alignment::Word(2),
            Alignment::Word(3),
        ];
        assert_eq!(
            decode_tags(&logits, &alignment, &vocab),
            vec!["O", "B-trigger", "I-trigger", "B-place"]
        );
    }

    #[test]
    fn decode_length_matches_word_count() {
        let backend = ToyBackend::new(&EncoderBackendSpec::toy(16, 256), 5, 1).unwrap();
        let vocab = vocab3();
        let inst = instance(&["one", "two", "three"], &["O", "O", "O"]);
        let tags = predict_tags(&backend, &inst, &vocab, 150).unwrap();
        assert_eq!(tags.len(), 3);
    }

    #[test]
    fn truncated_words_scored_as_outside() {
        let backend = ToyBackend::new(&EncoderBackendSpec::toy(16, 256), 5, 1).unwrap();
        let vocab = vocab3();
        let words: Vec<&str> = vec!["word"; 200];
        let tags_in: Vec<&str> = vec!["O"; 200];
        let inst = instance(&words, &tags_in);
        let tags = predict_tags(&backend, &inst, &vocab, 150).unwrap();
        assert_eq!(tags.len(), 200);
        assert!(tags[148..].iter().all(|t| t == "O"));
    }

    #[test]
    fn prediction_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let preds = vec![
            Prediction::Binary {
                id: "a".into(),
                score: 0.75,
            },
            Prediction::Tags {
                id: "b".into(),
                tags: vec!["O".into(), "B-place".into()],
            },
        ];
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.lines().next().unwrap().contains("\"score\""));
    }
}
