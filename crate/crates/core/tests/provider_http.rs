//! End-to-end tests for the embedding-provider client against a scripted
//! in-process HTTP server: ordering, batching, dedup, the on-disk cache,
//! retry discipline, and error classification.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use tripletforge::embed::{
    EmbedError, Embedding, EmbeddingStore, ProviderClient, ProviderConfig, VectorSource,
};

/// What the server sends for one request, in script order; once the script
/// is exhausted every further request gets `Embed(3)`.
#[derive(Clone, Copy)]
enum Reply {
    /// 200 with one embedding of this dimension per input text.
    Embed(usize),
    /// The given status with a small JSON error body.
    Status(u16),
    /// 200 with a body that is not a valid embeddings payload.
    Garbage,
}

/// Deterministic per-text vector so tests can predict exact embeddings.
fn mock_vector(text: &str, dim: usize) -> Vec<f32> {
    let sum: u32 = text.bytes().map(u32::from).sum();
    (0..dim)
        .map(|j| (sum % 97 + 1 + (j as u32) * (j as u32)) as f32)
        .collect()
}

struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    /// Parsed request bodies in arrival order.
    bodies: Arc<Mutex<Vec<Value>>>,
}

impl MockServer {
    fn start(script: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let thread_stop = Arc::clone(&stop);
        let thread_bodies = Arc::clone(&bodies);
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for stream in listener.incoming() {
                if thread_stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(mut stream) = stream else { continue };
                let Some(body) = read_request(&mut stream) else {
                    continue;
                };
                let reply = script.get(served).copied().unwrap_or(Reply::Embed(3));
                served += 1;
                let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                thread_bodies.lock().unwrap().push(parsed.clone());
                let (status, payload) = match reply {
                    Reply::Embed(dim) => {
                        let inputs = parsed["input"].as_array().cloned().unwrap_or_default();
                        let data: Vec<Value> = inputs
                            .iter()
                            .map(|t| json!({"embedding": mock_vector(t.as_str().unwrap(), dim)}))
                            .collect();
                        (200, json!({ "data": data }).to_string())
                    }
                    Reply::Status(code) => (code, json!({"error": "scripted failure"}).to_string()),
                    Reply::Garbage => (200, "{\"data\": \"nonsense\"}".to_string()),
                };
                let reason = if status == 200 { "OK" } else { "Scripted" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\n\
                     content-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(response.as_bytes());
                let _ = stream.flush();
            }
        });
        MockServer {
            addr,
            stop,
            handle: Some(handle),
            bodies,
        }
    }

    fn url(&self) -> String {
        format!("http://{}/v1/embeddings", self.addr)
    }

    fn request_inputs(&self) -> Vec<Vec<String>> {
        self.bodies
            .lock()
            .unwrap()
            .iter()
            .map(|b| {
                b["input"]
                    .as_array()
                    .cloned()
                    .unwrap_or_default()
                    .iter()
                    .map(|t| t.as_str().unwrap().to_string())
                    .collect()
            })
            .collect()
    }

    fn models_seen(&self) -> Vec<String> {
        self.bodies
            .lock()
            .unwrap()
            .iter()
            .map(|b| b["model"].as_str().unwrap_or("").to_string())
            .collect()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr); // unblock the accept loop
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Minimal HTTP/1.1 request reader: headers, then `content-length` bytes.
fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        match buf.windows(4).position(|w| w == b"\r\n\r\n") {
            Some(p) => break p + 4,
            None => {
                let n = stream.read(&mut chunk).ok()?;
                if n == 0 {
                    return None;
                }
                buf.extend_from_slice(&chunk[..n]);
            }
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&buf[header_end..header_end + content_length]).to_string())
}

fn config(server: &MockServer) -> ProviderConfig {
    ProviderConfig {
        base_url: server.url(),
        model: "mock-embedder".into(),
        batch_size: 64,
        max_concurrent: 1,
        timeout_s: 10.0,
        max_retries: 3,
        backoff_base_s: 0.0, // tests should not sleep
    }
}

#[test]
fn embeds_in_input_order_with_unit_norm() {
    let server = MockServer::start(vec![]);
    let client = ProviderClient::new(config(&server)).unwrap();
    let texts = ["alpha", "bravo", "charlie"];
    let out = client.embed_texts(&texts, None).unwrap();

    assert_eq!(out.len(), texts.len());
    for (text, emb) in texts.iter().zip(&out) {
        let expected = Embedding::unit(mock_vector(text, 3)).unwrap();
        assert_eq!(emb, &expected, "embedding for {text:?}");
        let norm: f64 = emb.values().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
    assert_eq!(server.models_seen(), vec!["mock-embedder".to_string()]);
}

#[test]
fn splits_requests_by_batch_size_in_order() {
    let server = MockServer::start(vec![]);
    let mut cfg = config(&server);
    cfg.batch_size = 2;
    let client = ProviderClient::new(cfg).unwrap();
    let texts = ["t0", "t1", "t2", "t3", "t4"];
    let out = client.embed_texts(&texts, None).unwrap();

    assert_eq!(out.len(), 5);
    assert_eq!(client.requests_issued(), 3, "ceil(5 / 2) requests");
    let seen = server.request_inputs();
    assert_eq!(
        seen,
        vec![
            vec!["t0".to_string(), "t1".to_string()],
            vec!["t2".to_string(), "t3".to_string()],
            vec!["t4".to_string()],
        ]
    );
}

#[test]
fn repeated_texts_are_fetched_once() {
    let server = MockServer::start(vec![]);
    let client = ProviderClient::new(config(&server)).unwrap();
    let texts = ["same", "same", "other", "same"];
    let out = client.embed_texts(&texts, None).unwrap();

    assert_eq!(client.requests_issued(), 1);
    assert_eq!(
        server.request_inputs(),
        vec![vec!["same".to_string(), "other".to_string()]],
        "duplicates collapse before the request"
    );
    assert_eq!(out[0], out[1]);
    assert_eq!(out[0], out[3]);
    assert_ne!(out[0], out[2]);
}

#[test]
fn cache_round_trips_across_clients_without_new_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cache: PathBuf = dir.path().join("provider.tfvs");

    let server = MockServer::start(vec![]);
    let first = ProviderClient::new(config(&server)).unwrap();
    let warm = first.embed_texts(&["x", "y"], Some(&cache)).unwrap();
    assert_eq!(first.requests_issued(), 1);
    assert!(cache.exists());

    // A fresh client over the same cache file serves hits from disk and only
    // fetches the genuinely new text.
    let second = ProviderClient::new(config(&server)).unwrap();
    let out = second.embed_texts(&["x", "z", "y"], Some(&cache)).unwrap();
    assert_eq!(second.requests_issued(), 1);
    assert_eq!(
        server.request_inputs().last().unwrap(),
        &vec!["z".to_string()],
        "cached texts never reach the wire"
    );
    assert_eq!(out[0], warm[0]);
    assert_eq!(out[2], warm[1]);

    // Everything cached: zero traffic.
    let third = ProviderClient::new(config(&server)).unwrap();
    let replay = third.embed_texts(&["y", "x", "z"], Some(&cache)).unwrap();
    assert_eq!(third.requests_issued(), 0);
    assert_eq!(replay[0], warm[1]);
    assert_eq!(replay[1], warm[0]);

    // The cache is a plain vector store keyed by model and content.
    let store = EmbeddingStore::open(&cache).unwrap();
    assert_eq!(store.len(), 3);
    assert!(store.contains(&third.cache_key("x")));
}

#[test]
fn retries_throttles_and_server_errors_until_success() {
    let server = MockServer::start(vec![Reply::Status(429), Reply::Status(503), Reply::Embed(3)]);
    let client = ProviderClient::new(config(&server)).unwrap();
    let out = client.embed_texts(&["persist"], None).unwrap();

    assert_eq!(out.len(), 1);
    assert_eq!(
        client.requests_issued(),
        3,
        "one initial attempt plus two retries"
    );
}

#[test]
fn gives_up_after_the_retry_budget() {
    let server = MockServer::start(vec![
        Reply::Status(500),
        Reply::Status(500),
        Reply::Status(500),
    ]);
    let mut cfg = config(&server);
    cfg.max_retries = 2;
    let client = ProviderClient::new(cfg).unwrap();
    let err = client.embed_texts(&["doomed"], None).unwrap_err();

    assert!(matches!(err, EmbedError::Provider { status: 500, .. }), "{err}");
    assert_eq!(client.requests_issued(), 3, "initial attempt plus max_retries");
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![Reply::Status(400)]);
    let client = ProviderClient::new(config(&server)).unwrap();
    let err = client.embed_texts(&["rejected"], None).unwrap_err();

    assert!(matches!(err, EmbedError::Provider { status: 400, .. }), "{err}");
    assert_eq!(client.requests_issued(), 1, "4xx must fail fast");
}

#[test]
fn malformed_payloads_are_reported_not_retried() {
    let server = MockServer::start(vec![Reply::Garbage]);
    let client = ProviderClient::new(config(&server)).unwrap();
    let err = client.embed_texts(&["huh"], None).unwrap_err();

    assert!(matches!(err, EmbedError::BadResponse(_)), "{err}");
    assert_eq!(client.requests_issued(), 1);
}

#[test]
fn rejects_a_dimension_change_against_an_existing_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("provider.tfvs");
    let server = MockServer::start(vec![Reply::Embed(3), Reply::Embed(4)]);
    let client = ProviderClient::new(config(&server)).unwrap();

    client.embed_texts(&["first"], Some(&cache)).unwrap();
    let err = client.embed_texts(&["second"], Some(&cache)).unwrap_err();
    assert!(
        matches!(err, EmbedError::DimMismatch { expected: 3, got: 4 }),
        "{err}"
    );
}
