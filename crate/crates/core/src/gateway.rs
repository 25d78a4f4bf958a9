//! Chat-completion and embedding client with a content-addressed
//! record/replay cache.
//!
//! Every request is reduced to a canonical JSON text (sorted keys, no
//! insignificant whitespace) whose SHA-256 digest names the cache file
//! `<key>.json`. In replay mode the cache is the only source of responses and
//! no HTTP client is ever constructed.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::index::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other:?} (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub chat_path: String,
    pub embed_path: String,
    pub chat_model: String,
    pub embed_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Whether temperature/top_p are sent (some reasoning models reject them).
    pub send_sampling_params: bool,
    pub temperature: f64,
    pub top_p: f64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub embed_batch_size: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".to_string(),
            chat_path: "/v1/chat/completions".to_string(),
            embed_path: "/v1/embeddings".to_string(),
            chat_model: "gpt-4o".to_string(),
            embed_model: "text-embedding-3-large".to_string(),
            api_key_env: Some("OPENAI_API_KEY".to_string()),
            send_sampling_params: true,
            temperature: 0.0,
            top_p: 1.0,
            max_in_flight: 4,
            timeout_secs: 120,
            max_attempts: 3,
            backoff_ms: 1000,
            embed_batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedRequest {
    pub model: String,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request_canonical: String,
    pub response_body: String,
    pub recorded_at: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("provider error (status {status:?}): {body}")]
    Provider { status: Option<u16>, body: String },
    #[error("replay cache miss for {key} ({summary})")]
    CacheMiss { key: String, summary: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("cache I/O error at {path}: {source}")]
    Cache { path: PathBuf, source: io::Error },
}

/// SHA-256 hex digest of a canonical request text.
pub fn cache_key(request_canonical: &str) -> String {
    hex::encode(Sha256::digest(request_canonical.as_bytes()))
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("chat request has no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    fn body(&self, with_sampling: bool) -> Value {
        let mut body = json!({ "model": self.model, "messages": self.messages });
        if with_sampling {
            body["temperature"] = json!(self.temperature);
            body["top_p"] = json!(self.top_p);
        }
        body
    }

    /// Canonical text: provider kind, endpoint, model, sampling params and
    /// messages, serialized with sorted keys.
    pub fn canonical(&self, with_sampling: bool) -> String {
        let mut v = self.body(with_sampling);
        v["provider"] = json!("openai-compatible");
        v["endpoint"] = json!("chat");
        // serde_json maps are ordered by key, so this is already sorted
        serde_json::to_string(&v).expect("request serializes")
    }

    fn summary(&self) -> String {
        let last = self.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        format!("chat {}: {}", self.model, preview(last))
    }
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.inputs.is_empty() {
            return Err(GatewayError::InvalidRequest("embedding request has no inputs".into()));
        }
        if let Some(n) = self.inputs.iter().position(|s| s.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("embedding input {n} is empty")));
        }
        Ok(())
    }

    fn body(&self) -> Value {
        json!({ "model": self.model, "input": self.inputs })
    }

    pub fn canonical(&self) -> String {
        let mut v = self.body();
        v["provider"] = json!("openai-compatible");
        v["endpoint"] = json!("embeddings");
        serde_json::to_string(&v).expect("request serializes")
    }

    fn summary(&self) -> String {
        format!(
            "embed {} x{}: {}",
            self.model,
            self.inputs.len(),
            preview(self.inputs.first().map(String::as_str).unwrap_or(""))
        )
    }
}

fn preview(s: &str) -> String {
    let flat: String = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() > 80 {
        format!("{}...", flat.chars().take(80).collect::<String>())
    } else {
        flat
    }
}

/// Directory of `<key>.json` entries.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| GatewayError::Cache {
                    path: path.clone(),
                    source: io::Error::new(io::ErrorKind::InvalidData, e),
                })?;
                if entry.key != key || cache_key(&entry.request_canonical) != key {
                    return Err(GatewayError::Cache {
                        path,
                        source: io::Error::new(io::ErrorKind::InvalidData, "entry does not match its key"),
                    });
                }
                Ok(Some(entry))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(GatewayError::Cache { path, source }),
        }
    }

    /// Writes through a temp file in the same directory, then renames.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let io_err = |source| GatewayError::Cache { path: self.dir.clone(), source };
        fs::create_dir_all(&self.dir).map_err(io_err)?;
        let mut text = serde_json::to_string_pretty(entry).expect("entry serializes");
        text.push('\n');
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        fs::write(tmp.path(), text).map_err(io_err)?;
        tmp.persist(self.path_for(&entry.key))
            .map_err(|e| io_err(e.error))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable provider client. `Sync`; concurrent calls are limited to
/// `max_in_flight` outstanding HTTP requests.
pub struct Gateway {
    config: ProviderConfig,
    mode: Mode,
    cache: ReplayCache,
    client: Option<reqwest::blocking::Client>,
    slots: Slots,
}

impl Gateway {
    pub fn new(config: ProviderConfig, mode: Mode, cache_dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let client = match mode {
            Mode::Replay => None,
            Mode::Live | Mode::Record => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(config.timeout_secs))
                    .build()
                    .map_err(|e| GatewayError::Provider { status: None, body: e.to_string() })?,
            ),
        };
        Ok(Self {
            slots: Slots::new(config.max_in_flight),
            cache: ReplayCache::new(cache_dir),
            config,
            mode,
            client,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }

    /// A chat request with the configured model and sampling defaults.
    pub fn chat_request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.chat_model.clone(),
            messages,
            temperature: self.config.temperature,
            top_p: self.config.top_p,
        }
    }

    pub fn embed_request(&self, inputs: Vec<String>) -> EmbedRequest {
        EmbedRequest { model: self.config.embed_model.clone(), inputs }
    }

    /// Returns the assistant message content.
    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let sampling = self.config.send_sampling_params;
        let body = self.exchange(
            &req.canonical(sampling),
            &self.config.chat_path,
            &req.body(sampling),
            || req.summary(),
        )?;
        parse_chat_response(&body)
    }

    /// One vector per input, in input order. Inputs are sent in batches of
    /// `embed_batch_size`.
    pub fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vector>, GatewayError> {
        req.validate()?;
        let mut out: Vec<Vector> = Vec::with_capacity(req.inputs.len());
        for chunk in req.inputs.chunks(self.config.embed_batch_size.max(1)) {
            let part = EmbedRequest { model: req.model.clone(), inputs: chunk.to_vec() };
            let body = self.exchange(
                &part.canonical(),
                &self.config.embed_path,
                &part.body(),
                || part.summary(),
            )?;
            let vectors = parse_embed_response(&body, chunk.len())?;
            out.extend(vectors);
        }
        if let Some(first) = out.first() {
            let dim = first.dimension();
            if let Some(bad) = out.iter().find(|v| v.dimension() != dim) {
                return Err(GatewayError::DimensionMismatch { expected: dim, found: bad.dimension() });
            }
        }
        Ok(out)
    }

    fn exchange(
        &self,
        canonical: &str,
        path: &str,
        body: &Value,
        summary: impl Fn() -> String,
    ) -> Result<String, GatewayError> {
        let key = cache_key(canonical);
        match self.mode {
            Mode::Replay => match self.cache.get(&key)? {
                Some(entry) => Ok(entry.response_body),
                None => Err(GatewayError::CacheMiss { key, summary: summary() }),
            },
            Mode::Record => {
                if let Some(entry) = self.cache.get(&key)? {
                    return Ok(entry.response_body);
                }
                let response_body = self.post(path, body)?;
                self.cache.put(&CacheEntry {
                    key,
                    request_canonical: canonical.to_string(),
                    response_body: response_body.clone(),
                    recorded_at: chrono::Utc::now()
                        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                })?;
                Ok(response_body)
            }
            Mode::Live => self.post(path, body),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<String, GatewayError> {
        let client = self.client.as_ref().expect("HTTP client exists outside replay mode");
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), path);
        let credential = match &self.config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| GatewayError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let _slot = self.slots.acquire();
        let attempts = self.config.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut rb = client.post(&url).json(body);
            if let Some(key) = &credential {
                rb = rb.bearer_auth(key);
            }
            match rb.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    let err = GatewayError::Provider { status: Some(status), body: text };
                    if status != 429 && status < 500 {
                        return Err(err);
                    }
                    tracing::warn!(status, attempt, "retryable provider status");
                    last_err = Some(err);
                }
                Err(e) => {
                    tracing::warn!(error = %e, attempt, "provider transport error");
                    last_err = Some(GatewayError::Provider { status: None, body: e.to_string() });
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

fn parse_chat_response(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .unwrap_or("");
    if content.trim().is_empty() {
        Err(GatewayError::EmptyCompletion)
    } else {
        Ok(content.to_string())
    }
}

fn parse_embed_response(body: &str, expected: usize) -> Result<Vec<Vector>, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::MalformedResponse("missing data array".into()))?;
    if data.len() != expected {
        return Err(GatewayError::MalformedResponse(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut items: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (n, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(n, |i| i as usize);
        let comps = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::MalformedResponse(format!("data[{n}] has no embedding")))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| GatewayError::MalformedResponse(format!("data[{n}] has a non-numeric component"))))
            .collect::<Result<Vec<f64>, _>>()?;
        items.push((index, comps));
    }
    items.sort_by_key(|(i, _)| *i);
    if items.iter().enumerate().any(|(n, (i, _))| n != *i) {
        return Err(GatewayError::MalformedResponse("embedding indices are not 0..n".into()));
    }
    let dim = items[0].1.len();
    let mut out = Vec::with_capacity(items.len());
    for (_, comps) in items {
        if comps.len() != dim {
            return Err(GatewayError::DimensionMismatch { expected: dim, found: comps.len() });
        }
        out.push(Vector::new(comps).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay_gateway(dir: &Path) -> Gateway {
        Gateway::new(ProviderConfig::default(), Mode::Replay, dir).unwrap()
    }

    #[test]
    fn cache_key_matches_standalone_sha256() {
        // SHA-256("abc") from FIPS 180-2 appendix B.1
        assert_eq!(
            cache_key("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn canonical_is_stable_and_sampling_sensitive() {
        let mk = |t| ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user("hi")],
            temperature: t,
            top_p: 1.0,
        };
        assert_eq!(mk(0.0).canonical(true), mk(0.0).canonical(true));
        assert_ne!(cache_key(&mk(0.0).canonical(true)), cache_key(&mk(0.5).canonical(true)));
        assert_eq!(mk(0.0).canonical(false), mk(0.5).canonical(false));
        assert_eq!(
            mk(0.0).canonical(true),
            r#"{"endpoint":"chat","messages":[{"content":"hi","role":"user"}],"model":"m","provider":"openai-compatible","temperature":0.0,"top_p":1.0}"#
        );
    }

    #[test]
    fn replay_hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let gw = replay_gateway(dir.path());
        let req = gw.chat_request(vec![ChatMessage::user("hello")]);
        match gw.chat(&req) {
            Err(GatewayError::CacheMiss { key, summary }) => {
                assert_eq!(key.len(), 64);
                assert!(summary.contains("hello"));
            }
            other => panic!("{other:?}"),
        }
        let canonical = req.canonical(true);
        gw.cache()
            .put(&CacheEntry {
                key: cache_key(&canonical),
                request_canonical: canonical,
                response_body: r#"{"choices":[{"message":{"role":"assistant","content":"recorded"}}]}"#.into(),
                recorded_at: "2025-01-01T00:00:00Z".into(),
            })
            .unwrap();
        assert_eq!(gw.chat(&req).unwrap(), "recorded");
    }

    #[test]
    fn request_validation() {
        let dir = tempfile::tempdir().unwrap();
        let gw = replay_gateway(dir.path());
        let empty = gw.embed_request(vec!["ok".into(), "  ".into()]);
        assert!(matches!(gw.embed(&empty), Err(GatewayError::InvalidRequest(_))));
        assert!(matches!(gw.embed(&gw.embed_request(vec![])), Err(GatewayError::InvalidRequest(_))));
        let assistant_first = gw.chat_request(vec![ChatMessage::assistant("x")]);
        assert!(matches!(gw.chat(&assistant_first), Err(GatewayError::InvalidRequest(_))));
        let mut neg = gw.chat_request(vec![ChatMessage::user("x")]);
        neg.temperature = -1.0;
        assert!(matches!(gw.chat(&neg), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn chat_response_parsing() {
        assert!(matches!(
            parse_chat_response(r#"{"choices":[{"message":{"content":""}}]}"#),
            Err(GatewayError::EmptyCompletion)
        ));
        assert!(matches!(parse_chat_response(r#"{"choices":[]}"#), Err(GatewayError::EmptyCompletion)));
        assert!(matches!(parse_chat_response("not json"), Err(GatewayError::MalformedResponse(_))));
    }

    #[test]
    fn embed_response_parsing() {
        let ok = r#"{"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]}"#;
        let v = parse_embed_response(ok, 2).unwrap();
        assert_eq!(v[0].components(), &[1.0, 0.0]);
        let ragged = r#"{"data":[{"index":0,"embedding":[1,0]},{"index":1,"embedding":[1,0,0]}]}"#;
        assert!(matches!(
            parse_embed_response(ragged, 2),
            Err(GatewayError::DimensionMismatch { expected: 2, found: 3 })
        ));
        assert!(parse_embed_response(ok, 3).is_err());
    }

    #[test]
    fn tampered_cache_entry_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        let entry = CacheEntry {
            key: cache_key("x"),
            request_canonical: "y".into(),
            response_body: "{}".into(),
            recorded_at: String::new(),
        };
        cache.put(&entry).unwrap();
        assert!(matches!(cache.get(&entry.key), Err(GatewayError::Cache { .. })));
    }

    #[test]
    fn modes_parse() {
        assert_eq!("replay".parse::<Mode>().unwrap(), Mode::Replay);
        assert!("offline".parse::<Mode>().is_err());
    }
}
