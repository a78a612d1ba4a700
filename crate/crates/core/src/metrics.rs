//! Scoring: per-class precision/recall/F1, macro F1 over binary labels,
//! BIO span extraction, exact-span CoNLL F1, and deltas against reference
//! leaderboard scores.
//!
//! Zero denominators score 0 everywhere, matching the usual shared-task
//! scorer convention.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/gold length mismatch: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("instance {id}: tag sequence lengths differ ({preds} vs {golds})")]
    SequenceLengthMismatch {
        id: String,
        preds: usize,
        golds: usize,
    },
    #[error("empty input where at least one instance is required")]
    Empty,
    #[error("no reference row for keys: {0}")]
    MissingKey(String),
    #[error("failed to read reference table: {0}")]
    Table(String),
}

/// Per-class true positive / false positive / false negative counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    counts: BTreeMap<String, (u64, u64, u64)>,
}

impl ConfusionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, pred: &str, gold: &str) {
        if pred == gold {
            self.counts.entry(pred.to_string()).or_default().0 += 1;
        } else {
            self.counts.entry(pred.to_string()).or_default().1 += 1;
            self.counts.entry(gold.to_string()).or_default().2 += 1;
        }
    }

    pub fn add_tp(&mut self, class: &str, n: u64) {
        self.counts.entry(class.to_string()).or_default().0 += n;
    }

    pub fn add_fp(&mut self, class: &str, n: u64) {
        self.counts.entry(class.to_string()).or_default().1 += n;
    }

    pub fn add_fn(&mut self, class: &str, n: u64) {
        self.counts.entry(class.to_string()).or_default().2 += n;
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn get(&self, class: &str) -> (u64, u64, u64) {
        self.counts.get(class).copied().unwrap_or((0, 0, 0))
    }

    pub fn totals(&self) -> (u64, u64, u64) {
        self.counts
            .values()
            .fold((0, 0, 0), |(tp, fp, fnn), &(a, b, c)| {
                (tp + a, fp + b, fnn + c)
            })
    }
}

/// Precision, recall, and F1 for one class; 0 whenever a denominator is 0.
pub fn prf(counts: &ConfusionCounts, class: &str) -> (f64, f64, f64) {
    let (tp, fp, fnn) = counts.get(class);
    prf_from_raw(tp, fp, fnn)
}

fn prf_from_raw(tp: u64, fp: u64, fnn: u64) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnn == 0 {
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Unweighted mean of the per-class F1 over both classes {0, 1}.
pub fn macro_f1(preds: &[u8], golds: &[u8]) -> Result<f64, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok((binary_class_f1(preds, golds, 0) + binary_class_f1(preds, golds, 1)) / 2.0)
}

/// F1 of the positive class alone.
pub fn positive_f1(preds: &[u8], golds: &[u8]) -> Result<f64, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(binary_class_f1(preds, golds, 1))
}

fn binary_class_f1(preds: &[u8], golds: &[u8], class: u8) -> f64 {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fnn = 0u64;
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == class, g == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    prf_from_raw(tp, fp, fnn).2
}

/// An exact labeled span: start and end word indices (inclusive) plus type.
pub type Span = (usize, usize, String);

/// Extract maximal `B-X (I-X)*` runs. An `I-X` with no open same-type span
/// opens a new one, so malformed model output still scores.
pub fn bio_spans(tags: &[String]) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = match tag.split_once('-') {
            Some((p, t)) if p == "B" || p == "I" => (p, t),
            _ => ("O", ""),
        };
        match prefix {
            "B" => {
                if let Some((start, open_ty)) = open.take() {
                    spans.insert((start, i - 1, open_ty));
                }
                open = Some((i, ty.to_string()));
            }
            "I" => match &open {
                Some((_, open_ty)) if open_ty == ty => {}
                _ => {
                    if let Some((start, open_ty)) = open.take() {
                        spans.insert((start, i - 1, open_ty));
                    }
                    open = Some((i, ty.to_string()));
                }
            },
            _ => {
                if let Some((start, open_ty)) = open.take() {
                    spans.insert((start, i - 1, open_ty));
                }
            }
        }
    }
    if let Some((start, open_ty)) = open {
        spans.insert((start, tags.len() - 1, open_ty));
    }
    spans
}

/// Re-serialize a span set to a well-formed BIO sequence of length `len`.
pub fn spans_to_bio(spans: &BTreeSet<Span>, len: usize) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for (start, end, ty) in spans {
        tags[*start] = format!("B-{ty}");
        for tag in tags.iter_mut().take(*end + 1).skip(start + 1) {
            *tag = format!("I-{ty}");
        }
    }
    tags
}

/// Micro-averaged precision/recall/F1 over exact span matches, pooled
/// across sequences, with per-type scores alongside.
#[derive(Debug, Clone, Serialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    /// Micro F1 as a percentage in [0, 100].
    pub f1: f64,
    pub per_type: BTreeMap<String, (f64, f64, f64)>,
    /// Unweighted mean of per-type F1, percentage.
    pub macro_f1: f64,
}

/// Exact-match span F1 (percentage). `ids` label the error if two
/// sequences disagree in length.
pub fn conll_f1(
    pred_seqs: &[Vec<String>],
    gold_seqs: &[Vec<String>],
    ids: Option<&[String]>,
) -> Result<SpanScores, MetricsError> {
    if pred_seqs.len() != gold_seqs.len() {
        return Err(MetricsError::LengthMismatch {
            preds: pred_seqs.len(),
            golds: gold_seqs.len(),
        });
    }
    let mut counts = ConfusionCounts::new();
    for (i, (pred, gold)) in pred_seqs.iter().zip(gold_seqs).enumerate() {
        if pred.len() != gold.len() {
            let id = ids
                .and_then(|ids| ids.get(i).cloned())
                .unwrap_or_else(|| i.to_string());
            return Err(MetricsError::SequenceLengthMismatch {
                id,
                preds: pred.len(),
                golds: gold.len(),
            });
        }
        let pred_spans = bio_spans(pred);
        let gold_spans = bio_spans(gold);
        for span in &pred_spans {
            if gold_spans.contains(span) {
                counts.add_tp(&span.2, 1);
            } else {
                counts.add_fp(&span.2, 1);
            }
        }
        for span in &gold_spans {
            if !pred_spans.contains(span) {
                counts.add_fn(&span.2, 1);
            }
        }
    }

    let (tp, fp, fnn) = counts.totals();
    let (precision, recall, f1) = prf_from_raw(tp, fp, fnn);
    let per_type: BTreeMap<String, (f64, f64, f64)> = counts
        .classes()
        .map(|c| {
            let (p, r, f) = prf(&counts, c);
            (c.to_string(), (p * 100.0, r * 100.0, f * 100.0))
        })
        .collect();
    let macro_f1 = if per_type.is_empty() {
        0.0
    } else {
        per_type.values().map(|(_, _, f)| f).sum::<f64>() / per_type.len() as f64
    };
    Ok(SpanScores {
        precision: precision * 100.0,
        recall: recall * 100.0,
        f1: f1 * 100.0,
        per_type,
        macro_f1,
    })
}

/// One leaderboard score: model, language, metric name, percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub lang: String,
    pub metric: String,
    pub score: f64,
}

/// Scores keyed by (model, lang, metric), loadable from CSV.
#[derive(Debug, Clone, Default)]
pub struct ReferenceTable {
    pub rows: Vec<ReferenceRow>,
}

/// Signed difference of one result against its reference row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub lang: String,
    pub metric: String,
    pub result: f64,
    pub reference: f64,
    pub delta: f64,
}

impl ReferenceTable {
    /// The checked-in reference scores shipped with the crate.
    pub fn builtin() -> Self {
        let csv = include_str!("../data/reference_scores.csv");
        Self::from_csv_str(csv).expect("bundled reference table parses")
    }

    pub fn from_csv_str(data: &str) -> Result<Self, MetricsError> {
        let mut reader = csv::Reader::from_reader(data.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<ReferenceRow>, _>>()
            .map_err(|e| MetricsError::Table(e.to_string()))?;
        for row in &rows {
            if !(0.0..=100.0).contains(&row.score) {
                return Err(MetricsError::Table(format!(
                    "score {} out of [0, 100] for {}/{}/{}",
                    row.score, row.model, row.lang, row.metric
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let data = std::fs::read_to_string(path.as_ref())
            .map_err(|e| MetricsError::Table(e.to_string()))?;
        Self::from_csv_str(&data)
    }

    pub fn filter_model(&self, model: &str) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .filter(|r| r.model == model)
                .cloned()
                .collect(),
        }
    }

    fn lookup(&self, lang: &str, metric: &str) -> Option<&ReferenceRow> {
        self.rows
            .iter()
            .find(|r| r.lang == lang && r.metric == metric)
    }
}

/// Per-(lang, metric) deltas of `results` minus `reference`. Every result
/// key must exist in the reference; missing keys are reported together.
pub fn compare_to_reference(
    results: &ReferenceTable,
    reference: &ReferenceTable,
) -> Result<Vec<DeltaRow>, MetricsError> {
    let mut missing = Vec::new();
    let mut deltas = Vec::new();
    for row in &results.rows {
        match reference.lookup(&row.lang, &row.metric) {
            Some(base) => deltas.push(DeltaRow {
                lang: row.lang.clone(),
                metric: row.metric.clone(),
                result: row.score,
                reference: base.score,
                delta: row.score - base.score,
            }),
            None => missing.push(format!("({}, {})", row.lang, row.metric)),
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::MissingKey(missing.join(", ")));
    }
    Ok(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf_perfect_class() {
        let mut c = ConfusionCounts::new();
        c.add_tp("x", 5);
        assert_eq!(prf(&c, "x"), (1.0, 1.0, 1.0));
    }

    #[test]
    fn prf_zero_denominators() {
        let c = ConfusionCounts::new();
        assert_eq!(prf(&c, "x"), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf_balanced_errors() {
        let mut c = ConfusionCounts::new();
        c.add_tp("x", 1);
        c.add_fp("x", 1);
        c.add_fn("x", 1);
        assert_eq!(prf(&c, "x"), (0.5, 0.5, 0.5));
    }

    #[test]
    fn macro_f1_perfect() {
        let v = vec![1, 0, 1, 0, 1];
        assert_eq!(macro_f1(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn macro_f1_hand_computed() {
        // class 1: tp=1 fp=1 fn=0 -> F1 = 2/3; class 0: tp=2 fp=0 fn=1 -> F1 = 0.8
        let got = macro_f1(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert!((got - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((got - 0.7333333333).abs() < 1e-9);
    }

    #[test]
    fn macro_f1_all_wrong() {
        assert_eq!(macro_f1(&[1, 1, 1], &[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn macro_f1_length_mismatch() {
        assert!(macro_f1(&[1], &[1, 0]).is_err());
    }

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bio_spans_basic() {
        let spans = bio_spans(&tags(&["B-a", "I-a", "O", "B-b"]));
        let expected: BTreeSet<Span> = [(0, 1, "a".to_string()), (3, 3, "b".to_string())].into();
        assert_eq!(spans, expected);
    }

    #[test]
    fn bio_spans_repairs_dangling_inside() {
        let spans = bio_spans(&tags(&["I-a", "I-a"]));
        let expected: BTreeSet<Span> = [(0, 1, "a".to_string())].into();
        assert_eq!(spans, expected);
    }

    #[test]
    fn bio_spans_type_change_closes() {
        let spans = bio_spans(&tags(&["B-a", "I-b"]));
        let expected: BTreeSet<Span> = [(0, 0, "a".to_string()), (1, 1, "b".to_string())].into();
        assert_eq!(spans, expected);
    }

    #[test]
    fn conll_f1_perfect() {
        let gold = vec![tags(&["B-a", "I-a", "O", "B-b"])];
        let got = conll_f1(&gold, &gold, None).unwrap();
        assert_eq!(got.f1, 100.0);
    }

    #[test]
    fn conll_f1_hand_computed() {
        let gold = vec![tags(&["B-a", "I-a", "O", "B-b"])];
        let pred = vec![tags(&["B-a", "I-a", "O", "O"])];
        let got = conll_f1(&pred, &gold, None).unwrap();
        assert_eq!(got.precision, 100.0);
        assert_eq!(got.recall, 50.0);
        assert!((got.f1 - 66.6666666).abs() < 1e-4);
    }

    #[test]
    fn conll_f1_disjoint_spans() {
        let gold = vec![tags(&["B-a", "O", "O"])];
        let pred = vec![tags(&["O", "O", "B-a"])];
        assert_eq!(conll_f1(&pred, &gold, None).unwrap().f1, 0.0);
    }

    #[test]
    fn conll_f1_length_mismatch_names_id() {
        let gold = vec![tags(&["B-a", "O"])];
        let pred = vec![tags(&["B-a"])];
        let ids = vec!["doc-7".to_string()];
        let err = conll_f1(&pred, &gold, Some(&ids)).unwrap_err();
        assert!(err.to_string().contains("doc-7"), "{err}");
    }

    #[test]
    fn spans_round_trip_after_repair() {
        let noisy = tags(&["I-a", "I-a", "O", "B-b", "I-a"]);
        let repaired = spans_to_bio(&bio_spans(&noisy), noisy.len());
        assert_eq!(bio_spans(&repaired), bio_spans(&noisy));
        // the repaired form is stable
        assert_eq!(spans_to_bio(&bio_spans(&repaired), noisy.len()), repaired);
    }

    #[test]
    fn builtin_reference_table_loads() {
        let table = ReferenceTable::builtin();
        assert!(table.rows.len() >= 20);
        let row = table.lookup_model("xlm-r-large", "pt", "doc_macro_f1_2021");
        assert_eq!(row, Some(85.39));
    }

    impl ReferenceTable {
        fn lookup_model(&self, model: &str, lang: &str, metric: &str) -> Option<f64> {
            self.rows
                .iter()
                .find(|r| r.model == model && r.lang == lang && r.metric == metric)
                .map(|r| r.score)
        }
    }

    #[test]
    fn compare_reports_signed_deltas() {
        let table = ReferenceTable::builtin();
        let results = table.filter_model("xlm-r-large");
        let reference = table.filter_model("case21-best");
        // only langs with a case21-best row
        let results = ReferenceTable {
            rows: results
                .rows
                .into_iter()
                .filter(|r| r.metric == "doc_macro_f1_2021")
                .collect(),
        };
        let deltas = compare_to_reference(&results, &reference).unwrap();
        let get = |lang: &str| {
            deltas
                .iter()
                .find(|d| d.lang == lang)
                .map(|d| d.delta)
                .unwrap()
        };
        assert!((get("pt") - 1.39).abs() < 1e-9);
        assert!((get("hi") - 2.00).abs() < 1e-9);
        assert!((get("en") + 2.25).abs() < 1e-9);
    }

    #[test]
    fn compare_missing_key_lists_it() {
        let results = ReferenceTable {
            rows: vec![ReferenceRow {
                model: "m".into(),
                lang: "fr".into(),
                metric: "nope".into(),
                score: 10.0,
            }],
        };
        let err = compare_to_reference(&results, &ReferenceTable::builtin()).unwrap_err();
        assert!(err.to_string().contains("fr"), "{err}");
    }
}
