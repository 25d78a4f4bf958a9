//! Provider gateway against the local stub: recording, replay, retries,
//! credentials and the concurrency bound.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use cap2skill::gateway::{ChatMessage, Gateway, GatewayError, Mode, ProviderConfig};
use cap2skill_stub::{embed_text, StubConfig, StubServer};

fn echo_stub(failures: Vec<u16>) -> StubServer {
    StubServer::start(StubConfig {
        failures,
        responder: Arc::new(|call| Some(format!("echo: {}", call.last_user()))),
        ..StubConfig::default()
    })
    .unwrap()
}

fn config(stub: &StubServer) -> ProviderConfig {
    ProviderConfig {
        base_url: stub.base_url().to_string(),
        api_key_env: None,
        backoff_ms: 1,
        chat_model: "chat-m".into(),
        embed_model: "embed-m".into(),
        ..ProviderConfig::default()
    }
}

fn ask(g: &Gateway, text: &str) -> Result<String, GatewayError> {
    g.chat(&g.chat_request(vec![ChatMessage::system("be brief"), ChatMessage::user(text)]))
}

fn files_in(dir: &Path) -> Vec<std::path::PathBuf> {
    match std::fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn record_then_replay_offline() {
    let stub = echo_stub(vec![]);
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(config(&stub), Mode::Record, cache.path()).unwrap();
    assert_eq!(ask(&g, "hello").unwrap(), "echo: hello");
    let vectors = g.embed(&g.embed_request(vec!["move base".into(), "read odometry".into()])).unwrap();
    assert_eq!(stub.request_count(), 2);
    assert_eq!(files_in(cache.path()).len(), 2);

    // a recorded request is served from the cache even in record mode
    assert_eq!(ask(&g, "hello").unwrap(), "echo: hello");
    assert_eq!(stub.request_count(), 2);

    let mut offline = config(&stub);
    offline.base_url = "http://10.255.255.1:9".into();
    let r = Gateway::new(offline, Mode::Replay, cache.path()).unwrap();
    assert_eq!(ask(&r, "hello").unwrap(), "echo: hello");
    assert_eq!(r.embed(&r.embed_request(vec!["move base".into(), "read odometry".into()])).unwrap(), vectors);
    assert_eq!(stub.request_count(), 2);
}

#[test]
fn replay_miss_names_the_request() {
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(ProviderConfig::default(), Mode::Replay, cache.path()).unwrap();
    match ask(&g, "never recorded") {
        Err(GatewayError::CacheMiss { key, summary }) => {
            assert_eq!(key.len(), 64);
            assert!(summary.contains("never recorded"), "{summary}");
        }
        other => panic!("expected a cache miss, got {other:?}"),
    }
}

#[test]
fn retries_transient_statuses() {
    let stub = echo_stub(vec![503, 429]);
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(config(&stub), Mode::Live, cache.path()).unwrap();
    assert_eq!(ask(&g, "x").unwrap(), "echo: x");
    assert_eq!(stub.request_count(), 3);
    // live mode never writes the cache
    assert!(files_in(cache.path()).is_empty());
}

#[test]
fn gives_up_after_max_attempts() {
    let stub = echo_stub(vec![500, 502, 503, 504]);
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(config(&stub), Mode::Record, cache.path()).unwrap();
    assert!(matches!(ask(&g, "x"), Err(GatewayError::Provider { status: Some(503), .. })));
    assert_eq!(stub.request_count(), 3);
    assert!(files_in(cache.path()).is_empty());
}

#[test]
fn client_errors_are_not_retried() {
    let stub = echo_stub(vec![400]);
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(config(&stub), Mode::Live, cache.path()).unwrap();
    assert!(matches!(ask(&g, "x"), Err(GatewayError::Provider { status: Some(400), .. })));
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn transport_errors_surface_after_retries() {
    let mut c = ProviderConfig { api_key_env: None, backoff_ms: 1, timeout_secs: 2, ..ProviderConfig::default() };
    // a port nothing listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    c.base_url = format!("http://127.0.0.1:{port}");
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(c, Mode::Live, cache.path()).unwrap();
    assert!(matches!(ask(&g, "x"), Err(GatewayError::Provider { status: None, .. })));
}

#[test]
fn credential_is_sent_but_never_stored() {
    const VAR: &str = "CAP2SKILL_GATEWAY_TEST_KEY";
    const SECRET: &str = "sk-sentinel-4f1d2c9b";
    std::env::set_var(VAR, SECRET);
    let stub = StubServer::start(StubConfig {
        required_key: Some(SECRET.into()),
        responder: Arc::new(|_| Some("ok".into())),
        ..StubConfig::default()
    })
    .unwrap();
    let cache = tempfile::tempdir().unwrap();
    let mut c = config(&stub);
    c.api_key_env = Some(VAR.into());
    let g = Gateway::new(c.clone(), Mode::Record, cache.path()).unwrap();
    assert_eq!(ask(&g, "x").unwrap(), "ok");
    g.embed(&g.embed_request(vec!["text".into()])).unwrap();
    assert!(stub.requests().iter().all(|r| r.authorization.as_deref() == Some(&format!("Bearer {SECRET}")[..])));
    for path in files_in(cache.path()) {
        let bytes = std::fs::read(&path).unwrap();
        assert!(!String::from_utf8_lossy(&bytes).contains(SECRET), "{} leaks the key", path.display());
    }

    c.api_key_env = Some("CAP2SKILL_GATEWAY_TEST_UNSET".into());
    let g = Gateway::new(c, Mode::Live, cache.path()).unwrap();
    assert!(matches!(ask(&g, "y"), Err(GatewayError::MissingCredential(_))));
}

#[test]
fn in_flight_requests_are_bounded() {
    let stub = StubServer::start(StubConfig {
        delay: Duration::from_millis(60),
        responder: Arc::new(|call| Some(call.last_user().to_string())),
        ..StubConfig::default()
    })
    .unwrap();
    let cache = tempfile::tempdir().unwrap();
    let mut c = config(&stub);
    c.max_in_flight = 2;
    let g = Gateway::new(c, Mode::Live, cache.path()).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..8).map(|n| {
            let g = &g;
            s.spawn(move || ask(g, &format!("q{n}")).unwrap())
        }).collect();
        for (n, h) in handles.into_iter().enumerate() {
            assert_eq!(h.join().unwrap(), format!("q{n}"));
        }
    });
    assert_eq!(stub.request_count(), 8);
    assert!(stub.peak_in_flight() <= 2, "peak {}", stub.peak_in_flight());
}

#[test]
fn embeddings_are_batched_in_order() {
    let stub = echo_stub(vec![]);
    let cache = tempfile::tempdir().unwrap();
    let mut c = config(&stub);
    c.embed_batch_size = 2;
    let g = Gateway::new(c, Mode::Live, cache.path()).unwrap();
    let inputs: Vec<String> = ["base velocity", "odometry pose", "laser ranges", "arm joints", "map grid"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let vectors = g.embed(&g.embed_request(inputs.clone())).unwrap();
    assert_eq!(stub.request_count(), 3);
    for (v, text) in vectors.iter().zip(&inputs) {
        assert_eq!(v.components(), embed_text(text, cap2skill_stub::DEFAULT_DIMENSION).as_slice());
    }
}

#[test]
fn sampling_parameters_are_sent_unless_disabled() {
    let stub = echo_stub(vec![]);
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(config(&stub), Mode::Live, cache.path()).unwrap();
    ask(&g, "a").unwrap();
    let mut c = config(&stub);
    c.send_sampling_params = false;
    let g = Gateway::new(c, Mode::Live, cache.path()).unwrap();
    ask(&g, "b").unwrap();
    let bodies: Vec<serde_json::Value> =
        stub.requests().iter().map(|r| serde_json::from_str(&r.body).unwrap()).collect();
    assert_eq!(bodies[0]["temperature"], 0.0);
    assert_eq!(bodies[0]["top_p"], 1.0);
    assert!(bodies[1].get("temperature").is_none());
    assert!(bodies[1].get("top_p").is_none());
}

#[test]
fn invalid_requests_fail_before_any_call() {
    let stub = echo_stub(vec![]);
    let cache = tempfile::tempdir().unwrap();
    let g = Gateway::new(config(&stub), Mode::Live, cache.path()).unwrap();
    assert!(matches!(g.chat(&g.chat_request(vec![])), Err(GatewayError::InvalidRequest(_))));
    assert!(matches!(g.embed(&g.embed_request(vec![" ".into()])), Err(GatewayError::InvalidRequest(_))));
    assert_eq!(stub.request_count(), 0);
}
