//! News-to-event-record replication pipeline.
//!
//! Each news item flows through four gates: score the title+abstract text
//! and keep items at or above the threshold, pull location (GPE) spans,
//! geocode the concatenated spans, and emit a dated five-field event row.
//! The run report accounts for every item dropped at each gate.

mod geo;
mod ner;

pub use geo::{
    geocode, normalize_query, GeoClient, GeoResult, GeocodeCache, MockGeoClient, RestGeoClient,
    RetryPolicy, TransportFailure,
};
pub use ner::{EntityRecognizer, EntitySpan, LexiconRecognizer};

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NewsItem;
use crate::encoder::EncoderBackend;
use crate::tasks::{predict_binary, TaskError};

#[derive(Debug, Error)]
pub enum ReplicateError {
    #[error("geocode query must be non-empty")]
    EmptyQuery,
    #[error("geocoding transport failed for {query:?} after {attempts} attempts: {message}")]
    Transport {
        query: String,
        attempts: u32,
        message: String,
    },
    #[error("entity recognizer failed: {0}")]
    Recognizer(String),
    #[error("items/scores length mismatch: {items} vs {scores}")]
    LengthMismatch { items: usize, scores: usize },
    #[error("geocode cache i/o: {0}")]
    CacheIo(String),
    #[error("failed to write pipeline output: {0}")]
    OutputIo(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// The geocoder input: location spans joined by single spaces, in document
/// order. Construction rejects blank queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoQuery(String);

impl GeoQuery {
    pub fn new(query: impl Into<String>) -> Result<Self, ReplicateError> {
        let query = query.into();
        if query.trim().is_empty() {
            return Err(ReplicateError::EmptyQuery);
        }
        Ok(Self(query))
    }

    pub fn from_spans(spans: &[String]) -> Result<Self, ReplicateError> {
        Self::new(spans.join(" "))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// One replicated event: id and date from the source item, place fields
/// from the geocoder. The date string is never transformed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub date: String,
    pub city: String,
    pub region: String,
    pub country: String,
}

/// Scores a text with the positive-class probability of a document
/// classifier.
pub trait DocScorer {
    fn score(&self, text: &str) -> Result<f64, ReplicateError>;
}

/// The standard scorer: a finetuned backend's document head.
pub struct BackendScorer<'a> {
    backend: &'a dyn EncoderBackend,
    max_len: usize,
}

impl<'a> BackendScorer<'a> {
    pub fn new(backend: &'a dyn EncoderBackend, max_len: usize) -> Self {
        Self { backend, max_len }
    }
}

impl DocScorer for BackendScorer<'_> {
    fn score(&self, text: &str) -> Result<f64, ReplicateError> {
        Ok(predict_binary(self.backend, text, self.max_len)?)
    }
}

/// Deterministic keyword scorer for dry runs and fixtures: `hit` when any
/// keyword occurs (case-insensitive), `miss` otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeywordScorer {
    pub keywords: Vec<String>,
    pub hit: f64,
    pub miss: f64,
}

impl KeywordScorer {
    pub fn new(keywords: Vec<String>) -> Self {
        Self {
            keywords,
            hit: 0.95,
            miss: 0.05,
        }
    }
}

impl DocScorer for KeywordScorer {
    fn score(&self, text: &str) -> Result<f64, ReplicateError> {
        let lowered = text.to_lowercase();
        let hit = self
            .keywords
            .iter()
            .any(|k| lowered.contains(&k.to_lowercase()));
        Ok(if hit { self.hit } else { self.miss })
    }
}

/// Score one item over its title and abstract.
pub fn score_item(item: &NewsItem, scorer: &dyn DocScorer) -> Result<f64, ReplicateError> {
    scorer.score(&item.text())
}

/// Keep items whose score reaches the threshold (inclusive), preserving
/// order.
pub fn filter_protest(
    items: &[NewsItem],
    scores: &[f64],
    threshold: f64,
) -> Result<Vec<NewsItem>, ReplicateError> {
    if items.len() != scores.len() {
        return Err(ReplicateError::LengthMismatch {
            items: items.len(),
            scores: scores.len(),
        });
    }
    Ok(items
        .iter()
        .zip(scores)
        .filter(|(_, &s)| s >= threshold)
        .map(|(item, _)| item.clone())
        .collect())
}

/// Location (GPE) spans in document order, duplicates preserved.
pub fn extract_locations(
    text: &str,
    ner: &dyn EntityRecognizer,
) -> Result<Vec<String>, ReplicateError> {
    Ok(ner
        .entities(text)?
        .into_iter()
        .filter(|span| span.label == "GPE")
        .map(|span| span.text)
        .collect())
}

/// Pipeline knobs. The threshold applies to the positive-class
/// probability; `threshold_on_logit` switches to the raw log-odds instead.
/// The optional date window drops items outside it before scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateParams {
    pub threshold: f64,
    pub threshold_on_logit: bool,
    pub date_window: Option<(NaiveDate, NaiveDate)>,
}

impl Default for ReplicateParams {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            threshold_on_logit: false,
            date_window: None,
        }
    }
}

/// Where each input item ended up.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub total: usize,
    pub kept: usize,
    pub dropped_outside_window: usize,
    pub dropped_below_threshold: usize,
    pub dropped_no_location: usize,
    pub dropped_geocode_miss: usize,
    /// Ids of items whose query geocoded to nothing.
    pub skipped_ids: Vec<String>,
}

impl RunReport {
    /// Stage drops plus kept records always account for every input item.
    pub fn accounted(&self) -> usize {
        self.kept
            + self.dropped_outside_window
            + self.dropped_below_threshold
            + self.dropped_no_location
            + self.dropped_geocode_miss
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), ReplicateError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| ReplicateError::OutputIo(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| ReplicateError::OutputIo(e.to_string()))
    }
}

/// Records plus the accounting report.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub records: Vec<EventRecord>,
    pub report: RunReport,
}

fn effective_score(probability: f64, on_logit: bool) -> f64 {
    if on_logit {
        (probability / (1.0 - probability)).ln()
    } else {
        probability
    }
}

/// Run the whole pipeline. Geocode misses are logged and skipped; only
/// transport failures abort the run.
pub fn replicate_run(
    corpus: &[NewsItem],
    scorer: &dyn DocScorer,
    ner: &dyn EntityRecognizer,
    client: &dyn GeoClient,
    cache: &mut GeocodeCache,
    params: &ReplicateParams,
) -> Result<ReplicateOutcome, ReplicateError> {
    let mut report = RunReport {
        total: corpus.len(),
        ..RunReport::default()
    };
    let mut records = Vec::new();
    let retry = RetryPolicy::default();

    for item in corpus {
        if let Some((start, end)) = &params.date_window {
            let date = NaiveDate::parse_from_str(&item.date, "%Y-%m-%d")
                .map_err(|e| ReplicateError::OutputIo(format!("bad item date: {e}")))?;
            if date < *start || date > *end {
                report.dropped_outside_window += 1;
                continue;
            }
        }

        let probability = score_item(item, scorer)?;
        if effective_score(probability, params.threshold_on_logit) < params.threshold {
            report.dropped_below_threshold += 1;
            continue;
        }

        let locations = extract_locations(&item.text(), ner)?;
        if locations.is_empty() {
            report.dropped_no_location += 1;
            continue;
        }

        let query = GeoQuery::from_spans(&locations)?;
        match geocode(&query, cache, client, &retry)? {
            Some(place) => {
                records.push(EventRecord {
                    id: item.id.clone(),
                    date: item.date.clone(),
                    city: place.city,
                    region: place.region,
                    country: place.country,
                });
                report.kept += 1;
            }
            None => {
                report.dropped_geocode_miss += 1;
                report.skipped_ids.push(item.id.clone());
                log::warn!(
                    "no geocoding candidates for item {}: {:?}",
                    item.id,
                    query.as_str()
                );
            }
        }
    }

    Ok(ReplicateOutcome { records, report })
}

/// Write records as CSV with the fixed `id,date,city,region,country`
/// header.
pub fn write_event_csv(
    records: &[EventRecord],
    path: impl AsRef<Path>,
) -> Result<(), ReplicateError> {
    let mut writer = csv::Writer::from_path(path.as_ref())
        .map_err(|e| ReplicateError::OutputIo(e.to_string()))?;
    writer
        .write_record(["id", "date", "city", "region", "country"])
        .map_err(|e| ReplicateError::OutputIo(e.to_string()))?;
    for r in records {
        writer
            .write_record([&r.id, &r.date, &r.city, &r.region, &r.country])
            .map_err(|e| ReplicateError::OutputIo(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| ReplicateError::OutputIo(e.to_string()))
}
