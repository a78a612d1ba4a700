//! Diagnostic plots: tf-idf document vectors and finetuned-model pooled
//! features, reduced to 2-D and written as labeled scatter CSVs plus
//! rendered images, per language and concatenated.

mod tsne;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::corpus::Document;
use crate::encoder::{pool_mean, EncoderBackend, EncoderError};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("feature extraction needs at least one document")]
    EmptyDocs,
    #[error("{n} rows is too few for perplexity {perplexity}: need n > {min_required}")]
    TooFewRows {
        n: usize,
        perplexity: f64,
        min_required: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown 2-D reduction method {0:?}")]
    UnknownMethod(String),
    #[error("backend {0:?} does not expose hidden states")]
    NoHiddenStates(String),
    #[error("failed to write output: {0}")]
    Io(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// N feature rows with aligned ids, language codes, and labels.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub ids: Vec<String>,
    pub langs: Vec<String>,
    pub labels: Vec<Option<u8>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), VizError> {
        let n = self.data.nrows();
        if self.ids.len() != n || self.langs.len() != n || self.labels.len() != n {
            return Err(VizError::NonFinite(format!(
                "metadata lengths ({}, {}, {}) do not match {n} rows",
                self.ids.len(),
                self.langs.len(),
                self.labels.len()
            )));
        }
        if let Some((idx, _)) = self.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(VizError::NonFinite(format!("feature entry {idx}")));
        }
        Ok(())
    }

    /// Dump as CSV: id, lang, label, then one column per feature dim.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), VizError> {
        let mut out = String::from("id,lang,label");
        for d in 0..self.data.ncols() {
            out.push_str(&format!(",f{d}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            let label = self.labels[i].map_or(String::new(), |l| l.to_string());
            out.push_str(&format!("{},{},{label}", self.ids[i], self.langs[i]));
            for v in self.data.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| VizError::Io(e.to_string()))
    }
}

fn terms(text: &str) -> impl Iterator<Item = String> + '_ {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect::<Vec<_>>()
        .into_iter()
}

/// Raw tf-idf rows without normalization: tf is the in-document count and
/// idf = ln((1+N)/(1+df)) + 1 over the sorted vocabulary of lowercased,
/// punctuation-split terms.
pub fn tfidf_features_raw(docs: &[Document]) -> Result<FeatureMatrix, VizError> {
    if docs.is_empty() {
        return Err(VizError::EmptyDocs);
    }
    let n = docs.len();

    let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut seen = std::collections::BTreeSet::new();
        for term in terms(&doc.text) {
            vocab.entry(term.clone()).or_default();
            if seen.insert(term.clone()) {
                *df.entry(term).or_default() += 1;
            }
        }
    }
    for (i, (_term, slot)) in vocab.iter_mut().enumerate() {
        *slot = i;
    }

    let mut data = Array2::<f64>::zeros((n, vocab.len()));
    for (row, doc) in docs.iter().enumerate() {
        let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
        let doc_terms: Vec<String> = terms(&doc.text).collect();
        for term in &doc_terms {
            *tf.entry(term.as_str()).or_default() += 1.0;
        }
        for (term, count) in tf {
            let col = vocab[term];
            let idf = ((1.0 + n as f64) / (1.0 + df[term] as f64)).ln() + 1.0;
            data[[row, col]] = count * idf;
        }
    }

    Ok(FeatureMatrix {
        data,
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        langs: docs.iter().map(|d| d.lang.clone()).collect(),
        labels: docs.iter().map(|d| d.label).collect(),
    })
}

/// tf-idf rows, L2-normalized (zero rows stay zero).
pub fn tfidf_features(docs: &[Document]) -> Result<FeatureMatrix, VizError> {
    let mut features = tfidf_features_raw(docs)?;
    for mut row in features.data.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(features)
}

/// Mean-pooled last-layer features, one row per document.
pub fn model_features(
    backend: &dyn EncoderBackend,
    docs: &[Document],
    max_len: usize,
) -> Result<FeatureMatrix, VizError> {
    if docs.is_empty() {
        return Err(VizError::EmptyDocs);
    }
    if !backend.spec().hidden_states {
        return Err(VizError::NoHiddenStates(backend.spec().name.clone()));
    }
    let dim = backend.spec().hidden_dim;
    let mut data = Array2::<f64>::zeros((docs.len(), dim));
    for (i, doc) in docs.iter().enumerate() {
        let tok = backend.tokenize(&doc.text, max_len)?;
        let out = backend.encode(std::slice::from_ref(&tok))?;
        let pooled = pool_mean(&out[0], &tok.attention_mask)?;
        data.row_mut(i).assign(&pooled);
    }
    Ok(FeatureMatrix {
        data,
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        langs: docs.iter().map(|d| d.lang.clone()).collect(),
        labels: docs.iter().map(|d| d.label).collect(),
    })
}

/// Supported 2-D reducers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMethod {
    Tsne,
}

impl FromStr for ReduceMethod {
    type Err = VizError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsne" | "t-sne" => Ok(ReduceMethod::Tsne),
            other => Err(VizError::UnknownMethod(other.to_string())),
        }
    }
}

/// 2-D points with the feature metadata carried through unchanged.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    pub points: Vec<(f64, f64)>,
    pub ids: Vec<String>,
    pub langs: Vec<String>,
    pub labels: Vec<Option<u8>>,
}

/// Reduce features to 2-D. Seed-deterministic; requires n > 3 * perplexity.
pub fn reduce_2d(
    features: &FeatureMatrix,
    method: ReduceMethod,
    seed: u64,
    perplexity: f64,
) -> Result<ScatterSet, VizError> {
    features.validate()?;
    let n = features.len();
    let min_required = 3.0 * perplexity;
    if (n as f64) <= min_required {
        return Err(VizError::TooFewRows {
            n,
            perplexity,
            min_required,
        });
    }
    let embedding = match method {
        ReduceMethod::Tsne => tsne::tsne(&features.data, perplexity, seed, 500),
    };
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(VizError::NonFinite("2-D embedding".into()));
    }
    Ok(ScatterSet {
        points: (0..n)
            .map(|i| (embedding[[i, 0]], embedding[[i, 1]]))
            .collect(),
        ids: features.ids.clone(),
        langs: features.langs.clone(),
        labels: features.labels.clone(),
    })
}

/// How to panel the scatter output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    /// One panel per language plus the concatenated panel.
    Language,
    /// Only the concatenated panel.
    Concatenated,
}

const COLOR_NEGATIVE: [u8; 3] = [31, 119, 180]; // blue: no protest event
const COLOR_POSITIVE: [u8; 3] = [255, 127, 14]; // orange: protest event
const COLOR_UNLABELED: [u8; 3] = [128, 128, 128];

fn render_scatter_png(
    points: &[(f64, f64)],
    labels: &[Option<u8>],
    path: &Path,
) -> Result<(), VizError> {
    const SIZE: u32 = 640;
    const MARGIN: f64 = 30.0;
    const RADIUS: i64 = 3;

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);

    let mut img = image::RgbImage::from_pixel(SIZE, SIZE, image::Rgb([255, 255, 255]));
    let scale = f64::from(SIZE) - 2.0 * MARGIN;
    for (&(x, y), label) in points.iter().zip(labels) {
        let px = MARGIN + (x - min_x) / span_x * scale;
        let py = MARGIN + (1.0 - (y - min_y) / span_y) * scale;
        let color = match label {
            Some(1) => COLOR_POSITIVE,
            Some(_) => COLOR_NEGATIVE,
            None => COLOR_UNLABELED,
        };
        for dy in -RADIUS..=RADIUS {
            for dx in -RADIUS..=RADIUS {
                if dx * dx + dy * dy > RADIUS * RADIUS {
                    continue;
                }
                let cx = px as i64 + dx;
                let cy = py as i64 + dy;
                if cx >= 0 && cy >= 0 && (cx as u32) < SIZE && (cy as u32) < SIZE {
                    img.put_pixel(cx as u32, cy as u32, image::Rgb(color));
                }
            }
        }
    }
    img.save(path).map_err(|e| VizError::Io(e.to_string()))
}

fn write_group_csv(set: &ScatterSet, idxs: &[usize], path: &Path) -> Result<(), VizError> {
    let mut out = String::from("id,lang,label,x,y\n");
    for &i in idxs {
        let label = set.labels[i].map_or(String::new(), |l| l.to_string());
        let (x, y) = set.points[i];
        out.push_str(&format!(
            "{},{},{label},{x},{y}\n",
            set.ids[i], set.langs[i]
        ));
    }
    std::fs::write(path, out).map_err(|e| VizError::Io(e.to_string()))
}

/// Write one CSV and one PNG per group under `out_dir`, named
/// `{stem}_{group}.csv` / `.png`; language grouping adds an `_all`
/// concatenated panel. Returns the files written. Empty groups are skipped
/// with a warning.
pub fn emit_scatter(
    set: &ScatterSet,
    group_by: GroupBy,
    out_dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>, VizError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| VizError::Io(e.to_string()))?;

    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    if group_by == GroupBy::Language {
        let mut by_lang: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, lang) in set.langs.iter().enumerate() {
            by_lang.entry(lang.as_str()).or_default().push(i);
        }
        for (lang, idxs) in by_lang {
            groups.push((lang.to_string(), idxs));
        }
    }
    groups.push(("all".to_string(), (0..set.points.len()).collect()));

    let mut written = Vec::new();
    for (name, idxs) in groups {
        if idxs.is_empty() {
            log::warn!("scatter group {name:?} is empty, skipping");
            continue;
        }
        let csv_path = out_dir.join(format!("{stem}_{name}.csv"));
        write_group_csv(set, &idxs, &csv_path)?;
        written.push(csv_path);

        let png_path = out_dir.join(format!("{stem}_{name}.png"));
        let points: Vec<(f64, f64)> = idxs.iter().map(|&i| set.points[i]).collect();
        let labels: Vec<Option<u8>> = idxs.iter().map(|&i| set.labels[i]).collect();
        render_scatter_png(&points, &labels, &png_path)?;
        written.push(png_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderBackendSpec, ToyBackend};

    fn doc(id: &str, lang: &str, text: &str, label: u8) -> Document {
        Document {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
            label: Some(label),
        }
    }

    #[test]
    fn tfidf_absent_term_is_zero() {
        let docs = vec![doc("a", "en", "cat sat", 0), doc("b", "en", "dog ran", 1)];
        let feats = tfidf_features(&docs).unwrap();
        // vocab sorted: cat, dog, ran, sat
        assert_eq!(feats.data[[0, 1]], 0.0);
        assert_eq!(feats.data[[1, 0]], 0.0);
    }

    #[test]
    fn tfidf_raw_weight_matches_formula() {
        // N=2, term "cat" in one doc with tf=1: weight = ln(3/2) + 1
        let docs = vec![doc("a", "en", "cat", 0), doc("b", "en", "dog", 1)];
        let feats = tfidf_features_raw(&docs).unwrap();
        let expected = (3.0f64 / 2.0).ln() + 1.0;
        assert!((feats.data[[0, 0]] - expected).abs() < 1e-12);
        assert!((expected - 1.4054651081).abs() < 1e-9);
    }

    #[test]
    fn tfidf_ubiquitous_term_idf_is_one() {
        let docs = vec![
            doc("a", "en", "cat alpha", 0),
            doc("b", "en", "cat beta", 0),
            doc("c", "en", "cat gamma", 0),
        ];
        let feats = tfidf_features_raw(&docs).unwrap();
        // vocab sorted: alpha, beta, cat, gamma
        assert_eq!(feats.data[[0, 2]], 1.0);
    }

    #[test]
    fn tfidf_rows_unit_norm() {
        let docs = vec![
            doc("a", "en", "isolated vocabulary entirely alone", 0),
            doc("b", "en", "other words here", 1),
        ];
        let feats = tfidf_features(&docs).unwrap();
        for row in feats.data.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tfidf_lowercases_and_splits_punctuation() {
        let docs = vec![doc("a", "en", "Protest, PROTEST; protest!", 1)];
        let feats = tfidf_features_raw(&docs).unwrap();
        assert_eq!(feats.data.ncols(), 1);
        assert_eq!(feats.data[[0, 0]], 3.0); // tf 3, idf ln(2/2)+1 = 1
    }

    fn toy() -> ToyBackend {
        ToyBackend::new(&EncoderBackendSpec::toy(16, 256), 2, 4).unwrap()
    }

    #[test]
    fn model_features_shape_and_duplicates() {
        let backend = toy();
        let docs = vec![
            doc("a", "en", "same text", 0),
            doc("b", "en", "same text", 1),
            doc("c", "es", "otro texto", 0),
        ];
        let feats = model_features(&backend, &docs, 150).unwrap();
        assert_eq!(feats.data.dim(), (3, 16));
        assert_eq!(feats.data.row(0), feats.data.row(1));
        assert_ne!(feats.data.row(0), feats.data.row(2));
    }

    #[test]
    fn model_features_equal_direct_pooling() {
        let backend = toy();
        let docs = vec![doc("a", "en", "compose the same way", 1)];
        let feats = model_features(&backend, &docs, 150).unwrap();
        let tok = backend.tokenize("compose the same way", 150).unwrap();
        let out = backend.encode(std::slice::from_ref(&tok)).unwrap();
        let direct = pool_mean(&out[0], &tok.attention_mask).unwrap();
        assert_eq!(feats.data.row(0).to_owned(), direct);
    }

    fn cluster_features() -> FeatureMatrix {
        let (points, labels) = crate::synth::two_cluster_points(60, 8, 10.0, 2);
        let n = points.len();
        let data = Array2::from_shape_fn((n, 8), |(i, j)| points[i][j]);
        FeatureMatrix {
            data,
            ids: (0..n).map(|i| format!("p{i}")).collect(),
            langs: (0..n)
                .map(|i| if i % 2 == 0 { "en" } else { "es" }.to_string())
                .collect(),
            labels: labels.into_iter().map(Some).collect(),
        }
    }

    #[test]
    fn reduce_preserves_rows_and_metadata() {
        let feats = cluster_features();
        let set = reduce_2d(&feats, ReduceMethod::Tsne, 1, 10.0).unwrap();
        assert_eq!(set.points.len(), 60);
        assert_eq!(set.ids, feats.ids);
        assert_eq!(set.labels, feats.labels);
    }

    #[test]
    fn reduce_deterministic_under_seed() {
        let feats = cluster_features();
        let a = reduce_2d(&feats, ReduceMethod::Tsne, 7, 10.0).unwrap();
        let b = reduce_2d(&feats, ReduceMethod::Tsne, 7, 10.0).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn reduce_rejects_small_n() {
        let feats = cluster_features();
        let err = reduce_2d(&feats, ReduceMethod::Tsne, 1, 30.0).unwrap_err();
        assert!(err.to_string().contains("need n >"), "{err}");
    }

    #[test]
    fn emit_groups_and_counts() {
        let feats = cluster_features();
        let set = reduce_2d(&feats, ReduceMethod::Tsne, 1, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_scatter(&set, GroupBy::Language, dir.path(), "scatter").unwrap();
        // en, es, all -> 3 CSVs + 3 PNGs
        assert_eq!(files.len(), 6);
        let en_csv = std::fs::read_to_string(dir.path().join("scatter_en.csv")).unwrap();
        assert_eq!(en_csv.lines().count(), 1 + 30);
        let all_csv = std::fs::read_to_string(dir.path().join("scatter_all.csv")).unwrap();
        assert_eq!(all_csv.lines().count(), 1 + 60);
        assert!(dir.path().join("scatter_all.png").exists());
    }

    #[test]
    fn feature_csv_dump() {
        let docs = vec![doc("a", "en", "tiny corpus", 0)];
        let feats = tfidf_features(&docs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        feats.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,lang,label,f0"));
        assert!(text.lines().nth(1).unwrap().starts_with("a,en,0,"));
    }
}
