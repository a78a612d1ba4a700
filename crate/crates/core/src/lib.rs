//! Multilingual protest event detection toolkit.
//!
//! Finetunes and evaluates text encoders for document, sentence, and token
//! (span) classification over concatenated multilingual training data, and
//! turns a news corpus into dated, geolocated protest event records.
//! Visualization and leaderboard-comparison utilities round it out.
//!
//! Module map:
//! - [`corpus`]: JSONL ingestion, multilingual concatenation, splits, batches
//! - [`encoder`]: tokenization and pluggable encoder backends
//! - [`trainer`]: optimizer, schedule, accumulation, training loop
//! - [`tasks`]: task heads, label alignment, prediction decoding
//! - [`metrics`]: macro F1, span F1, reference-score comparison
//! - [`replicate`]: classify -> locate -> geocode -> event rows
//! - [`viz`]: tf-idf / model features, 2-D reduction, scatter output
//! - [`synth`]: deterministic synthetic corpora for tests and demos

pub mod corpus;
pub mod encoder;
pub mod metrics;
pub mod replicate;
pub mod synth;
pub mod tasks;
pub mod trainer;
pub mod viz;
