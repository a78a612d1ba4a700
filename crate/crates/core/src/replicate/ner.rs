//! Entity-recognizer plug-in interface plus a gazetteer-backed recognizer.
//!
//! The pipeline only needs location (GPE) spans, but recognizers return
//! everything they find and the filtering happens downstream, so English-only
//! and multilingual recognizers interchange freely.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReplicateError;

/// One recognized entity, positioned by character offset for ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    pub label: String,
    pub start: usize,
}

/// Anything that can tag entity spans in running text.
pub trait EntityRecognizer {
    /// All entity spans in document order.
    fn entities(&self, text: &str) -> Result<Vec<EntitySpan>, ReplicateError>;
}

#[derive(Debug, Deserialize)]
struct LexiconEntry {
    phrase: String,
    label: String,
}

/// Case-insensitive, word-boundary gazetteer matcher. Longer phrases win
/// when matches overlap.
#[derive(Debug, Clone, Default)]
pub struct LexiconRecognizer {
    entries: Vec<(String, String)>,
}

impl LexiconRecognizer {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        Self { entries }
    }

    /// Load entries from JSONL lines of `{"phrase": ..., "label": ...}`.
    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self, ReplicateError> {
        let data = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ReplicateError::Recognizer(e.to_string()))?;
        let mut entries = Vec::new();
        for line in data.lines().filter(|l| !l.trim().is_empty()) {
            let entry: LexiconEntry = serde_json::from_str(line)
                .map_err(|e| ReplicateError::Recognizer(format!("bad lexicon line: {e}")))?;
            entries.push((entry.phrase, entry.label));
        }
        Ok(Self { entries })
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

impl EntityRecognizer for LexiconRecognizer {
    fn entities(&self, text: &str) -> Result<Vec<EntitySpan>, ReplicateError> {
        let haystack: Vec<char> = text.chars().collect();
        let lowered: String = text.to_lowercase();
        let lowered_chars: Vec<char> = lowered.chars().collect();

        let mut candidates: Vec<(usize, usize, &str, &str)> = Vec::new();
        for (phrase, label) in &self.entries {
            let needle: Vec<char> = phrase.to_lowercase().chars().collect();
            if needle.is_empty() || lowered_chars.len() < needle.len() {
                continue;
            }
            for start in 0..=(lowered_chars.len() - needle.len()) {
                if lowered_chars[start..start + needle.len()] != needle[..] {
                    continue;
                }
                let before_ok = start == 0 || !is_word_char(lowered_chars[start - 1]);
                let after = start + needle.len();
                let after_ok = after == lowered_chars.len() || !is_word_char(lowered_chars[after]);
                if before_ok && after_ok {
                    candidates.push((start, needle.len(), phrase, label));
                }
            }
        }

        // document order; on same start the longer phrase wins
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut spans = Vec::new();
        let mut covered_until = 0usize;
        for (start, len, _, label) in candidates {
            if start < covered_until {
                continue;
            }
            let original: String = haystack[start..start + len].iter().collect();
            spans.push(EntitySpan {
                text: original,
                label: label.to_string(),
                start,
            });
            covered_until = start + len;
        }
        Ok(spans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recognizer() -> LexiconRecognizer {
        LexiconRecognizer::new(vec![
            ("Portland".into(), "GPE".into()),
            ("Oregon".into(), "GPE".into()),
            ("Monday".into(), "DATE".into()),
        ])
    }

    #[test]
    fn finds_spans_in_document_order() {
        let spans = recognizer()
            .entities("Crowds met in Portland and across Oregon on Monday.")
            .unwrap();
        let texts: Vec<&str> = spans.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["Portland", "Oregon", "Monday"]);
    }

    #[test]
    fn matching_ignores_case_but_keeps_original() {
        let spans = recognizer().entities("PORTLAND stands.").unwrap();
        assert_eq!(spans[0].text, "PORTLAND");
        assert_eq!(spans[0].label, "GPE");
    }

    #[test]
    fn word_boundaries_respected() {
        let spans = recognizer().entities("The Portlandia statue").unwrap();
        assert!(spans.is_empty());
    }

    #[test]
    fn duplicates_preserved() {
        let spans = recognizer().entities("Portland, yes Portland").unwrap();
        assert_eq!(spans.len(), 2);
    }
}
