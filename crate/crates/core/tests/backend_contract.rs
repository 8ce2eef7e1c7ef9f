//! Contract tests for the chat/embed backends: the scripted mock and the
//! live client (driven against a local stub server) must behave the same
//! through the shared traits.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use astrovlm_core::backends::{
    CallTag, ChatBackend, ChatRequest, EmbedBackend, LiveBackend, LiveConfig, MockBackend, Phase,
};
use astrovlm_core::error::Error;

/// One-thread HTTP stub answering each connection with the next canned
/// response. Closes connections after every exchange so the client opens
/// a fresh one per request.
struct StubServer {
    base_url: String,
    hits: Arc<AtomicUsize>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    fn start(responses: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let hits_thread = hits.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else {
                    return;
                };
                hits_thread.fetch_add(1, Ordering::SeqCst);
                // Read the request head and exactly content-length body bytes.
                let mut buffer = Vec::new();
                let mut chunk = [0u8; 1024];
                let mut header_end = None;
                while header_end.is_none() {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    buffer.extend_from_slice(&chunk[..n]);
                    header_end = buffer.windows(4).position(|w| w == b"\r\n\r\n");
                }
                if let Some(end) = header_end {
                    let head = String::from_utf8_lossy(&buffer[..end]).to_lowercase();
                    let content_length: usize = head
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:"))
                        .and_then(|v| v.trim().parse().ok())
                        .unwrap_or(0);
                    let mut body_read = buffer.len() - (end + 4);
                    while body_read < content_length {
                        let n = stream.read(&mut chunk).unwrap_or(0);
                        if n == 0 {
                            break;
                        }
                        body_read += n;
                    }
                }
                let reason = match status {
                    200 => "OK",
                    401 => "Unauthorized",
                    429 => "Too Many Requests",
                    500 => "Internal Server Error",
                    _ => "Status",
                };
                let mut extra = String::new();
                if status == 429 {
                    extra.push_str("Retry-After: 0\r\n");
                }
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n{extra}\
                     Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        StubServer {
            base_url: format!("http://{addr}/v1"),
            hits,
            handle: Some(handle),
        }
    }

    fn live_backend(&self) -> LiveBackend {
        LiveBackend::new(LiveConfig {
            api_base: self.base_url.clone(),
            api_key: "test-key".into(),
            chat_model: "test-chat".into(),
            embed_model: "test-embed".into(),
            max_in_flight: 2,
            timeout_secs: 5,
            max_retries: 2,
        })
        .unwrap()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            // The stub exits once its scripted responses are consumed;
            // a leftover accept would block, so only join finished threads.
            if handle.is_finished() {
                let _ = handle.join();
            }
        }
    }
}

fn tag() -> CallTag {
    CallTag::new(Phase::Pipeline, "focus")
}

fn request() -> ChatRequest {
    ChatRequest::new("system", "user question")
}

#[test]
fn live_chat_returns_fixture_body() {
    let body = r#"{"choices":[{"message":{"content":"fixture reply"}}]}"#;
    let stub = StubServer::start(vec![(200, body.to_string())]);
    let live = stub.live_backend();
    let reply = live.chat(&tag(), &request()).unwrap();
    assert_eq!(reply, "fixture reply");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn live_embeddings_are_ordered_by_index() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
    let stub = StubServer::start(vec![(200, body.to_string())]);
    let live = stub.live_backend();
    let vectors = live.embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(vectors, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
}

#[test]
fn live_retries_transient_server_errors() {
    let good = r#"{"choices":[{"message":{"content":"after retry"}}]}"#;
    let stub = StubServer::start(vec![
        (500, "{}".to_string()),
        (200, good.to_string()),
    ]);
    let live = stub.live_backend();
    let reply = live.chat(&tag(), &request()).unwrap();
    assert_eq!(reply, "after retry");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn live_auth_failure_is_terminal() {
    let stub = StubServer::start(vec![(401, "{}".to_string())]);
    let live = stub.live_backend();
    let err = live.chat(&tag(), &request()).unwrap_err();
    assert!(matches!(err, Error::Auth { .. }));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1, "401 must not retry");
}

#[test]
fn live_rate_limit_surfaces_retry_after() {
    let stub = StubServer::start(vec![
        (429, "{}".to_string()),
        (429, "{}".to_string()),
        (429, "{}".to_string()),
    ]);
    let live = stub.live_backend();
    let err = live.chat(&tag(), &request()).unwrap_err();
    match err {
        Error::RateLimited { retry_after, .. } => assert_eq!(retry_after, Some(0)),
        other => panic!("unexpected: {other}"),
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3, "one try plus two retries");
}

#[test]
fn mock_satisfies_the_same_chat_contract() {
    let mock = MockBackend::default().with_entry("pipeline:focus", "fixture reply");
    let reply = mock.chat(&tag(), &request()).unwrap();
    assert_eq!(reply, "fixture reply");
}

#[test]
fn mock_embedding_contract_matches_live_shape() {
    let mock = MockBackend::default();
    let vectors = mock.embed(&["a".into(), "b".into(), "a".into()]).unwrap();
    assert_eq!(vectors.len(), 3);
    assert_eq!(vectors[0], vectors[2], "equal text, equal vector");
    assert_ne!(vectors[0], vectors[1]);
    let dims: Vec<usize> = vectors.iter().map(Vec::len).collect();
    assert!(dims.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn mock_script_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mock.json");
    std::fs::write(
        &path,
        r#"{
  "strict": true,
  "chat": {"pipeline:focus": "scripted"},
  "embed_dim": 8,
  "embed_overrides": {"kw": [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}
}"#,
    )
    .unwrap();
    let mock = MockBackend::load(&path).unwrap();
    assert_eq!(mock.chat(&tag(), &request()).unwrap(), "scripted");
    assert_eq!(mock.embed_one("kw").unwrap()[0], 1.0);
    assert_eq!(mock.embed_one("other").unwrap().len(), 8);
    let miss = mock.chat(&CallTag::new(Phase::Pipeline, "unknown"), &request());
    assert!(matches!(miss, Err(Error::ScriptedMiss { .. })));
}

#[test]
fn concurrent_mock_calls_are_content_addressed() {
    let mock = Arc::new(
        MockBackend::default()
            .with_entry("pipeline:a", "ra")
            .with_entry("pipeline:b", "rb"),
    );
    let mut handles = Vec::new();
    for _ in 0..4 {
        let mock = mock.clone();
        handles.push(std::thread::spawn(move || {
            for _ in 0..50 {
                let a = mock.chat(&CallTag::new(Phase::Pipeline, "a"), &request()).unwrap();
                let b = mock.chat(&CallTag::new(Phase::Pipeline, "b"), &request()).unwrap();
                assert_eq!(a, "ra");
                assert_eq!(b, "rb");
            }
        }));
    }
    for handle in handles {
        handle.join().unwrap();
    }
}
