//! Deterministic OpenAI-compatible provider for offline recording and tests.
//!
//! Serves `POST /v1/chat/completions` and `POST /v1/embeddings` on a local
//! port. Embeddings are signed feature-hashed bags of words; chat replies come
//! from a caller-supplied responder.

use std::collections::{HashSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tiny_http::{Header, Method, Response, Server};

pub const DEFAULT_DIMENSION: usize = 1024;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it", "its", "of", "on",
    "or", "that", "the", "their", "this", "to", "used", "uses", "via", "which", "with", "e", "g", "s",
];

fn stem(token: &str) -> String {
    let t = token;
    if t.len() > 5 && t.ends_with("ies") {
        return format!("{}y", &t[..t.len() - 3]);
    }
    for suffix in ["ing", "ed", "es", "s"] {
        if t.len() > suffix.len() + 3 && t.ends_with(suffix) {
            return t[..t.len() - suffix.len()].to_string();
        }
    }
    t.to_string()
}

/// Lowercased, stopword-free, crudely stemmed word tokens.
pub fn tokens(text: &str) -> Vec<String> {
    let stop: HashSet<&str> = STOPWORDS.iter().copied().collect();
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .filter(|t| !stop.contains(t.as_str()))
        .map(|t| stem(&t))
        .collect()
}

/// Signed feature hashing of the token multiset with `1 + ln(tf)` weights.
/// Texts without tokens map to a fixed unit vector.
pub fn embed_text(text: &str, dimension: usize) -> Vec<f64> {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for t in tokens(text) {
        *counts.entry(t).or_default() += 1;
    }
    let mut v = vec![0.0; dimension];
    if counts.is_empty() {
        v[0] = 1.0;
        return v;
    }
    for (token, tf) in counts {
        let h = Sha256::digest(token.as_bytes());
        let bucket = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % dimension;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign * (1.0 + (tf as f64).ln());
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatCall {
    pub model: String,
    /// `(role, content)` pairs in order.
    pub messages: Vec<(String, String)>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
}

impl ChatCall {
    pub fn system(&self) -> &str {
        self.messages
            .iter()
            .find(|(r, _)| r == "system")
            .map_or("", |(_, c)| c.as_str())
    }

    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|(r, _)| r == "user")
            .map_or("", |(_, c)| c.as_str())
    }
}

pub type Responder = Arc<dyn Fn(&ChatCall) -> Option<String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

#[derive(Clone)]
pub struct StubConfig {
    pub dimension: usize,
    pub responder: Responder,
    /// Statuses returned, in order, for the first requests.
    pub failures: Vec<u16>,
    /// If set, requests without `Authorization: Bearer <key>` get 401.
    pub required_key: Option<String>,
    /// Artificial latency per request.
    pub delay: Duration,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            responder: Arc::new(|_| None),
            failures: Vec::new(),
            required_key: None,
            delay: Duration::ZERO,
        }
    }
}

struct Shared {
    config: StubConfig,
    failures: Mutex<VecDeque<u16>>,
    log: Mutex<Vec<LoggedRequest>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

pub struct StubServer {
    base_url: String,
    server: Arc<Server>,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(config: StubConfig) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub is not bound to an IP address"))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            failures: Mutex::new(config.failures.iter().copied().collect()),
            config,
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        });
        let thread = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                let mut workers = Vec::new();
                for request in server.incoming_requests() {
                    let shared = Arc::clone(&shared);
                    workers.push(std::thread::spawn(move || handle(request, &shared)));
                }
                for w in workers {
                    let _ = w.join();
                }
            })
        };
        Ok(Self { base_url: format!("http://{addr}"), server, shared, thread: Some(thread) })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.log.lock().unwrap().len()
    }

    /// Highest number of requests handled concurrently so far.
    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn json_response(status: u16, body: &Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body.to_string()).with_status_code(status).with_header(header)
}

fn error_body(message: &str) -> Value {
    json!({ "error": { "message": message, "type": "stub_error" } })
}

fn handle(mut request: tiny_http::Request, shared: &Shared) {
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let authorization = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let path = request.url().to_string();
    shared.log.lock().unwrap().push(LoggedRequest {
        path: path.clone(),
        authorization: authorization.clone(),
        body: body.clone(),
    });
    if !shared.config.delay.is_zero() {
        std::thread::sleep(shared.config.delay);
    }
    let (status, payload) = respond(shared, request.method(), &path, authorization.as_deref(), &body);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    let _ = request.respond(json_response(status, &payload));
}

fn respond(shared: &Shared, method: &Method, path: &str, authorization: Option<&str>, body: &str) -> (u16, Value) {
    if let Some(status) = shared.failures.lock().unwrap().pop_front() {
        return (status, error_body("scripted failure"));
    }
    if let Some(key) = &shared.config.required_key {
        if authorization != Some(format!("Bearer {key}").as_str()) {
            return (401, error_body("invalid credential"));
        }
    }
    if *method != Method::Post {
        return (405, error_body("only POST is served"));
    }
    let Ok(request) = serde_json::from_str::<Value>(body) else {
        return (400, error_body("body is not JSON"));
    };
    match path {
        "/v1/chat/completions" => chat(shared, &request),
        "/v1/embeddings" => embeddings(shared, &request),
        _ => (404, error_body("unknown path")),
    }
}

fn chat(shared: &Shared, request: &Value) -> (u16, Value) {
    let model = request.get("model").and_then(Value::as_str).unwrap_or_default().to_string();
    let Some(messages) = request.get("messages").and_then(Value::as_array) else {
        return (400, error_body("missing messages"));
    };
    let call = ChatCall {
        model: model.clone(),
        messages: messages
            .iter()
            .map(|m| {
                let field = |k: &str| m.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
                (field("role"), field("content"))
            })
            .collect(),
        temperature: request.get("temperature").and_then(Value::as_f64),
        top_p: request.get("top_p").and_then(Value::as_f64),
    };
    match (shared.config.responder)(&call) {
        Some(content) => (
            200,
            json!({
                "id": "chatcmpl-stub",
                "object": "chat.completion",
                "model": model,
                "choices": [{
                    "index": 0,
                    "message": { "role": "assistant", "content": content },
                    "finish_reason": "stop"
                }]
            }),
        ),
        None => (400, error_body("no scripted reply for this conversation")),
    }
}

fn embeddings(shared: &Shared, request: &Value) -> (u16, Value) {
    let model = request.get("model").and_then(Value::as_str).unwrap_or_default().to_string();
    let inputs: Vec<String> = match request.get("input") {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).map(str::to_string).collect(),
        _ => return (400, error_body("missing input")),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, text)| json!({ "object": "embedding", "index": i, "embedding": embed_text(text, shared.config.dimension) }))
        .collect();
    (200, json!({ "object": "list", "model": model, "data": data }))
}
