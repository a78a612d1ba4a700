//! Corpus ingestion and iteration.
//!
//! Labeled data arrives as one JSON object per line (UTF-8), one file per
//! language and granularity. Everything downstream consumes the concatenated
//! multilingual list, so loading, concatenation, splitting, and batching all
//! live here. All shuffling is seeded and reproducible.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSON line: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: schema violation: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bundle mixes instance kinds: {0} and {1}")]
    MixedKinds(InstanceKind, InstanceKind),
    #[error("need at least 2 instances to split, got {0}")]
    TooSmallToSplit(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("batch size must be >= 1")]
    BadBatchSize,
}

/// Granularity of a labeled instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Document,
    Sentence,
    Token,
    News,
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InstanceKind::Document => "document",
            InstanceKind::Sentence => "sentence",
            InstanceKind::Token => "token",
            InstanceKind::News => "news",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for InstanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "document" => Ok(InstanceKind::Document),
            "sentence" => Ok(InstanceKind::Sentence),
            "token" => Ok(InstanceKind::Token),
            "news" => Ok(InstanceKind::News),
            other => Err(format!("unknown instance kind {other:?}")),
        }
    }
}

/// A whole news article or document, optionally labeled (1 = contains a
/// protest event).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// A single sentence, same shape as [`Document`] but scored independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceInstance {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// A word sequence with one BIO tag per word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenInstance {
    pub id: String,
    pub lang: String,
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

/// A dated news item with title and abstract, the input to the replication
/// pipeline. The `date` string is kept verbatim after validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub date: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

impl NewsItem {
    /// Title and abstract joined by a single space, the scoring input.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

/// One loaded record of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Instance {
    Document(Document),
    Sentence(SentenceInstance),
    Token(TokenInstance),
    News(NewsItem),
}

impl Instance {
    pub fn kind(&self) -> InstanceKind {
        match self {
            Instance::Document(_) => InstanceKind::Document,
            Instance::Sentence(_) => InstanceKind::Sentence,
            Instance::Token(_) => InstanceKind::Token,
            Instance::News(_) => InstanceKind::News,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Instance::Document(d) => &d.id,
            Instance::Sentence(s) => &s.id,
            Instance::Token(t) => &t.id,
            Instance::News(n) => &n.id,
        }
    }

    pub fn lang(&self) -> &str {
        match self {
            Instance::Document(d) => &d.lang,
            Instance::Sentence(s) => &s.lang,
            Instance::Token(t) => &t.lang,
            Instance::News(_) => "",
        }
    }

    /// Raw text for kinds that carry free text.
    pub fn text(&self) -> Option<String> {
        match self {
            Instance::Document(d) => Some(d.text.clone()),
            Instance::Sentence(s) => Some(s.text.clone()),
            Instance::News(n) => Some(n.text()),
            Instance::Token(_) => None,
        }
    }

    pub fn label(&self) -> Option<u8> {
        match self {
            Instance::Document(d) => d.label,
            Instance::Sentence(s) => s.label,
            _ => None,
        }
    }

    pub fn as_token(&self) -> Option<&TokenInstance> {
        match self {
            Instance::Token(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_news(&self) -> Option<&NewsItem> {
        match self {
            Instance::News(n) => Some(n),
            _ => None,
        }
    }
}

/// Per-language instance lists plus a provenance note per source file.
#[derive(Debug, Clone)]
pub struct CorpusBundle {
    kind: InstanceKind,
    by_lang: BTreeMap<String, Vec<Instance>>,
    pub provenance: Vec<String>,
    pub seed: u64,
}

impl CorpusBundle {
    pub fn new(kind: InstanceKind, seed: u64) -> Self {
        Self {
            kind,
            by_lang: BTreeMap::new(),
            provenance: Vec::new(),
            seed,
        }
    }

    pub fn kind(&self) -> InstanceKind {
        self.kind
    }

    /// Add one language's worth of instances. Every instance must match the
    /// bundle kind.
    pub fn add_language(
        &mut self,
        lang: &str,
        instances: Vec<Instance>,
        source: &str,
    ) -> Result<(), CorpusError> {
        for inst in &instances {
            if inst.kind() != self.kind {
                return Err(CorpusError::MixedKinds(self.kind, inst.kind()));
            }
        }
        self.by_lang
            .entry(lang.to_string())
            .or_default()
            .extend(instances);
        self.provenance.push(format!(
            "{source} ({lang}, loaded {})",
            chrono::Utc::now().to_rfc3339()
        ));
        Ok(())
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.by_lang.keys().map(String::as_str)
    }

    pub fn language(&self, lang: &str) -> Option<&[Instance]> {
        self.by_lang.get(lang).map(Vec::as_slice)
    }

    pub fn total(&self) -> usize {
        self.by_lang.values().map(Vec::len).sum()
    }
}

fn validate_label(label: Option<u8>, path: &Path, line: usize) -> Result<(), CorpusError> {
    match label {
        None | Some(0) | Some(1) => Ok(()),
        Some(other) => Err(CorpusError::Schema {
            path: path.to_path_buf(),
            line,
            message: format!("label must be 0 or 1, got {other}"),
        }),
    }
}

/// A BIO tag is "O" or "B-"/"I-" followed by a non-empty type name.
pub fn check_bio_shape(tag: &str) -> bool {
    tag == "O" || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.len() > 2)
}

/// Load one JSONL file of the given kind. Errors carry the 1-based line
/// number of the offending record.
pub fn load_corpus(
    path: impl AsRef<Path>,
    lang: &str,
    kind: InstanceKind,
) -> Result<Vec<Instance>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut out = Vec::new();
    let mut seen_news_ids: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        let inst = parse_record(value, lang, kind, path, lineno)?;
        if let Instance::News(n) = &inst {
            if !seen_news_ids.insert(n.id.clone()) {
                return Err(CorpusError::Schema {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("duplicate news id {:?}", n.id),
                });
            }
        }
        out.push(inst);
    }
    Ok(out)
}

fn parse_record(
    value: serde_json::Value,
    lang: &str,
    kind: InstanceKind,
    path: &Path,
    lineno: usize,
) -> Result<Instance, CorpusError> {
    let schema_err = |message: String| CorpusError::Schema {
        path: path.to_path_buf(),
        line: lineno,
        message,
    };
    let get_str = |v: &serde_json::Value, key: &str| -> Result<String, CorpusError> {
        v.get(key)
            .and_then(|x| x.as_str())
            .map(str::to_string)
            .ok_or_else(|| schema_err(format!("missing or non-string field {key:?}")))
    };

    match kind {
        InstanceKind::Document | InstanceKind::Sentence => {
            let id = get_str(&value, "id")?;
            let rec_lang = value
                .get("lang")
                .and_then(|x| x.as_str())
                .unwrap_or(lang)
                .to_string();
            let text = get_str(&value, "text")?;
            if text.is_empty() {
                return Err(schema_err("text must be non-empty".into()));
            }
            let label = match value.get("label") {
                None | Some(serde_json::Value::Null) => None,
                Some(v) => Some(
                    v.as_u64()
                        .ok_or_else(|| schema_err(format!("label must be an integer, got {v}")))?
                        .min(u8::MAX as u64) as u8,
                ),
            };
            validate_label(label, path, lineno)?;
            Ok(if kind == InstanceKind::Document {
                Instance::Document(Document {
                    id,
                    lang: rec_lang,
                    text,
                    label,
                })
            } else {
                Instance::Sentence(SentenceInstance {
                    id,
                    lang: rec_lang,
                    text,
                    label,
                })
            })
        }
        InstanceKind::Token => {
            let id = get_str(&value, "id")?;
            let rec_lang = value
                .get("lang")
                .and_then(|x| x.as_str())
                .unwrap_or(lang)
                .to_string();
            let to_vec = |key: &str| -> Result<Vec<String>, CorpusError> {
                value
                    .get(key)
                    .and_then(|x| x.as_array())
                    .ok_or_else(|| schema_err(format!("missing array field {key:?}")))?
                    .iter()
                    .map(|x| {
                        x.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| schema_err(format!("{key:?} must hold strings")))
                    })
                    .collect()
            };
            let words = to_vec("words")?;
            let tags = to_vec("tags")?;
            if words.is_empty() || words.len() != tags.len() {
                return Err(schema_err(format!(
                    "words/tags must be equal-length and non-empty ({} vs {})",
                    words.len(),
                    tags.len()
                )));
            }
            for tag in &tags {
                if !check_bio_shape(tag) {
                    return Err(schema_err(format!("unknown tag {tag:?}")));
                }
            }
            Ok(Instance::Token(TokenInstance {
                id,
                lang: rec_lang,
                words,
                tags,
            }))
        }
        InstanceKind::News => {
            let id = get_str(&value, "id")?;
            let date = get_str(&value, "date")?;
            chrono::NaiveDate::parse_from_str(&date, "%Y-%m-%d").map_err(|e| {
                schema_err(format!(
                    "date {date:?} does not parse as a calendar date: {e}"
                ))
            })?;
            let title = get_str(&value, "title")?;
            let abstract_text = get_str(&value, "abstract")?;
            Ok(Instance::News(NewsItem {
                id,
                date,
                title,
                abstract_text,
            }))
        }
    }
}

/// Concatenate all languages of a bundle and shuffle. The permutation is a
/// pure function of `seed`; the output is always a permutation of the union.
pub fn concat_multilingual(bundle: &CorpusBundle, seed: u64) -> Vec<Instance> {
    let mut all: Vec<Instance> = bundle
        .by_lang
        .values()
        .flat_map(|v| v.iter().cloned())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all
}

/// Deterministically split into train and validation parts.
///
/// The validation size is `round(ratio * n)` (half-up), clamped so both
/// sides stay non-empty.
pub fn split_train_val<T: Clone>(
    data: &[T],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if data.len() < 2 {
        return Err(CorpusError::TooSmallToSplit(data.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    let n = data.len();
    let raw = (ratio * n as f64 + 0.5).floor() as usize;
    let val_n = raw.clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let val: Vec<T> = order[..val_n].iter().map(|&i| data[i].clone()).collect();
    let train: Vec<T> = order[val_n..].iter().map(|&i| data[i].clone()).collect();
    Ok((train, val))
}

/// Plan one epoch of batches as index lists. With `shuffle` off the input
/// order is preserved; on, the order is a pure function of `seed`.
pub fn plan_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>, CorpusError> {
    if batch_size < 1 {
        return Err(CorpusError::BadBatchSize);
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Batch view over a slice; every instance appears exactly once per epoch
/// and the final batch may be short.
pub fn batch_iter<T>(
    data: &[T],
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Vec<&T>>, CorpusError> {
    let plan = plan_batches(data.len(), batch_size, seed, shuffle)?;
    Ok(plan
        .into_iter()
        .map(move |idxs| idxs.into_iter().map(|i| &data[i]).collect()))
}
