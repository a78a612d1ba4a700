//! Geocoding: a persistent query cache, a mock client for tests and dry
//! runs, and a REST client for Locations-style endpoints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GeoQuery, ReplicateError};

/// A resolved place. `country` is always non-empty on success; city and
/// region may be blank when the service cannot narrow further.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoResult {
    pub city: String,
    pub region: String,
    pub country: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<String>,
}

/// Transport-level failure of a single lookup attempt.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct TransportFailure(pub String);

/// One lookup against a geocoding service. `Ok(None)` means the service
/// answered but found nothing; errors are transport problems.
pub trait GeoClient {
    fn lookup(&self, query: &str) -> Result<Option<GeoResult>, TransportFailure>;
}

/// Cache key: lowercased, whitespace-normalized query string.
pub fn normalize_query(query: &str) -> String {
    query
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    query: String,
    result: Option<GeoResult>,
}

/// Query -> result map persisted as JSONL. Misses are cached too, so a
/// warm re-run never touches the network.
#[derive(Debug, Default)]
pub struct GeocodeCache {
    entries: BTreeMap<String, Option<GeoResult>>,
    path: Option<PathBuf>,
}

impl GeocodeCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a persistent cache file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ReplicateError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let data = std::fs::read_to_string(&path)
                .map_err(|e| ReplicateError::CacheIo(e.to_string()))?;
            for line in data.lines().filter(|l| !l.trim().is_empty()) {
                let parsed: CacheLine = serde_json::from_str(line)
                    .map_err(|e| ReplicateError::CacheIo(format!("bad cache line: {e}")))?;
                entries.insert(parsed.query, parsed.result);
            }
        }
        Ok(Self {
            entries,
            path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, normalized: &str) -> Option<&Option<GeoResult>> {
        self.entries.get(normalized)
    }

    fn insert(
        &mut self,
        normalized: String,
        result: Option<GeoResult>,
    ) -> Result<(), ReplicateError> {
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| ReplicateError::CacheIo(e.to_string()))?;
                }
            }
            let line = serde_json::to_string(&CacheLine {
                query: normalized.clone(),
                result: result.clone(),
            })
            .map_err(|e| ReplicateError::CacheIo(e.to_string()))?;
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ReplicateError::CacheIo(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| ReplicateError::CacheIo(e.to_string()))?;
        }
        self.entries.insert(normalized, result);
        Ok(())
    }
}

/// Bounded retries with exponential backoff between attempts.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

/// Resolve a query through the cache, hitting the client only on a miss.
/// `Ok(None)` is the service's own "no candidates" answer and is cached
/// like a success; transport failures surface after the retry budget.
pub fn geocode(
    query: &GeoQuery,
    cache: &mut GeocodeCache,
    client: &dyn GeoClient,
    retry: &RetryPolicy,
) -> Result<Option<GeoResult>, ReplicateError> {
    if query.as_str().trim().is_empty() {
        return Err(ReplicateError::EmptyQuery);
    }
    let key = normalize_query(query.as_str());
    if let Some(cached) = cache.get(&key) {
        return Ok(cached.clone());
    }

    let mut last_failure = None;
    for attempt in 0..retry.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(retry.backoff * 2u32.pow(attempt - 1));
        }
        match client.lookup(&key) {
            Ok(result) => {
                cache.insert(key, result.clone())?;
                return Ok(result);
            }
            Err(failure) => last_failure = Some(failure),
        }
    }
    Err(ReplicateError::Transport {
        query: key,
        attempts: retry.max_attempts.max(1),
        message: last_failure.map(|f| f.to_string()).unwrap_or_default(),
    })
}

/// Fixture-backed client: a fixed query -> place map plus a call counter.
#[derive(Debug, Default)]
pub struct MockGeoClient {
    map: BTreeMap<String, GeoResult>,
    calls: AtomicUsize,
}

impl MockGeoClient {
    pub fn new(pairs: Vec<(String, GeoResult)>) -> Self {
        Self {
            map: pairs
                .into_iter()
                .map(|(q, r)| (normalize_query(&q), r))
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Load the mapping from JSONL lines of
    /// `{"query": ..., "city": ..., "region": ..., "country": ...}`.
    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self, ReplicateError> {
        #[derive(Deserialize)]
        struct Line {
            query: String,
            city: String,
            region: String,
            country: String,
        }
        let data = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ReplicateError::CacheIo(e.to_string()))?;
        let mut pairs = Vec::new();
        for line in data.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| ReplicateError::CacheIo(format!("bad geocode fixture: {e}")))?;
            pairs.push((
                parsed.query,
                GeoResult {
                    city: parsed.city,
                    region: parsed.region,
                    country: parsed.country,
                    confidence: Some("mock".into()),
                },
            ));
        }
        Ok(Self::new(pairs))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl GeoClient for MockGeoClient {
    fn lookup(&self, query: &str) -> Result<Option<GeoResult>, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.map.get(&normalize_query(query)).cloned())
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for byte in s.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

/// HTTP/JSON client for a Locations-style REST endpoint. The URL template
/// carries `{query}` and `{key}` placeholders; requests are spaced to the
/// configured rate.
pub struct RestGeoClient {
    url_template: String,
    api_key: String,
    min_interval: Duration,
    http: reqwest::blocking::Client,
    last_call: Mutex<Option<Instant>>,
}

impl RestGeoClient {
    pub fn new(url_template: &str, api_key: &str, requests_per_second: f64) -> Self {
        let min_interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        Self {
            url_template: url_template.to_string(),
            api_key: api_key.to_string(),
            min_interval,
            http: reqwest::blocking::Client::new(),
            last_call: Mutex::new(None),
        }
    }

    fn pace(&self) {
        let mut last = self.last_call.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Debug, Deserialize)]
struct LocationsResponse {
    #[serde(rename = "resourceSets", default)]
    resource_sets: Vec<ResourceSet>,
}

#[derive(Debug, Deserialize)]
struct ResourceSet {
    #[serde(default)]
    resources: Vec<Resource>,
}

#[derive(Debug, Deserialize)]
struct Resource {
    #[serde(default)]
    address: Option<Address>,
    #[serde(default)]
    confidence: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Address {
    #[serde(default)]
    locality: Option<String>,
    #[serde(rename = "adminDistrict", default)]
    admin_district: Option<String>,
    #[serde(rename = "countryRegion", default)]
    country_region: Option<String>,
}

impl GeoClient for RestGeoClient {
    fn lookup(&self, query: &str) -> Result<Option<GeoResult>, TransportFailure> {
        self.pace();
        let url = self
            .url_template
            .replace("{query}", &percent_encode(query))
            .replace("{key}", &self.api_key);
        let response = self
            .http
            .get(&url)
            .send()
            .map_err(|e| TransportFailure(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TransportFailure(format!(
                "geocoding service returned HTTP {}",
                response.status()
            )));
        }
        let body: LocationsResponse = response
            .json()
            .map_err(|e| TransportFailure(format!("unparseable geocoding response: {e}")))?;

        for set in body.resource_sets {
            for resource in set.resources {
                if let Some(address) = resource.address {
                    let country = address.country_region.unwrap_or_default();
                    if !country.is_empty() {
                        return Ok(Some(GeoResult {
                            city: address.locality.unwrap_or_default(),
                            region: address.admin_district.unwrap_or_default(),
                            country,
                            confidence: resource.confidence,
                        }));
                    }
                }
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn portland() -> GeoResult {
        GeoResult {
            city: "Portland".into(),
            region: "Oregon".into(),
            country: "United States".into(),
            confidence: None,
        }
    }

    #[test]
    fn mock_resolves_and_counts() {
        let client = MockGeoClient::new(vec![("Portland Oregon".into(), portland())]);
        let mut cache = GeocodeCache::in_memory();
        let q = GeoQuery::new("Portland Oregon").unwrap();
        let got = geocode(&q, &mut cache, &client, &RetryPolicy::default()).unwrap();
        assert_eq!(got.unwrap().city, "Portland");
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn second_lookup_served_from_cache() {
        let client = MockGeoClient::new(vec![("Portland Oregon".into(), portland())]);
        let mut cache = GeocodeCache::in_memory();
        let q = GeoQuery::new("Portland   OREGON").unwrap();
        geocode(&q, &mut cache, &client, &RetryPolicy::default()).unwrap();
        let q2 = GeoQuery::new("portland oregon").unwrap();
        geocode(&q2, &mut cache, &client, &RetryPolicy::default()).unwrap();
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn not_found_is_cached_too() {
        let client = MockGeoClient::default();
        let mut cache = GeocodeCache::in_memory();
        let q = GeoQuery::new("nowhere at all").unwrap();
        assert!(geocode(&q, &mut cache, &client, &RetryPolicy::default())
            .unwrap()
            .is_none());
        assert!(geocode(&q, &mut cache, &client, &RetryPolicy::default())
            .unwrap()
            .is_none());
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn empty_query_rejected() {
        assert!(GeoQuery::new("   ").is_err());
    }

    #[test]
    fn cache_persists_across_opens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let client = MockGeoClient::new(vec![("Portland".into(), portland())]);
            let mut cache = GeocodeCache::open(&path).unwrap();
            let q = GeoQuery::new("Portland").unwrap();
            geocode(&q, &mut cache, &client, &RetryPolicy::default()).unwrap();
        }
        let client = MockGeoClient::default();
        let mut cache = GeocodeCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        let q = GeoQuery::new("Portland").unwrap();
        let got = geocode(&q, &mut cache, &client, &RetryPolicy::default()).unwrap();
        assert_eq!(got.unwrap().city, "Portland");
        assert_eq!(client.calls(), 0);
    }

    struct FailingClient;
    impl GeoClient for FailingClient {
        fn lookup(&self, _query: &str) -> Result<Option<GeoResult>, TransportFailure> {
            Err(TransportFailure("connection refused".into()))
        }
    }

    #[test]
    fn transport_failure_after_retries() {
        let mut cache = GeocodeCache::in_memory();
        let q = GeoQuery::new("Portland").unwrap();
        let policy = RetryPolicy {
            max_attempts: 2,
            backoff: Duration::ZERO,
        };
        let err = geocode(&q, &mut cache, &FailingClient, &policy).unwrap_err();
        match err {
            ReplicateError::Transport { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("expected transport error, got {other}"),
        }
        assert_eq!(cache.len(), 0);
    }

    #[test]
    fn locations_response_parses() {
        let json = r#"{"resourceSets":[{"resources":[{"address":{"locality":"Portland","adminDistrict":"OR","countryRegion":"United States"},"confidence":"High"}]}]}"#;
        let parsed: LocationsResponse = serde_json::from_str(json).unwrap();
        let addr = parsed.resource_sets[0].resources[0]
            .address
            .as_ref()
            .unwrap();
        assert_eq!(addr.locality.as_deref(), Some("Portland"));
    }
}
