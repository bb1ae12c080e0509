use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use ipag::embed::{CachedEmbedder, EmbedCache, EmbedError, HashEmbedder, ServiceEmbedder, TextEmbedder};
use serde_json::{json, Value};

type Handler = dyn Fn(usize, &str, &str, &Value) -> (u16, String) + Send + Sync;

/// A minimal HTTP/1.1 server; `handler` gets the request number, method,
/// path and JSON body.
struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<(String, String, Value)> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut length = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    let json = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).ok()? };
    Some((method, path, json))
}

impl MockServer {
    fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handler: Arc<Handler> = Arc::from(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let counter = counter.clone();
                let handler = handler.clone();
                thread::spawn(move || {
                    let mut writer = stream.try_clone().unwrap();
                    let mut reader = BufReader::new(stream);
                    while let Some((method, path, body)) = read_request(&mut reader) {
                        let n = counter.fetch_add(1, Ordering::SeqCst);
                        let (status, text) = handler(n, &method, &path, &body);
                        let reply = format!(
                            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
                            text.len()
                        );
                        if writer.write_all(reply.as_bytes()).is_err() {
                            break;
                        }
                    }
                });
            }
        });
        MockServer { url, hits }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Deterministic fake vectors: the text length followed by zeros.
fn fake_vectors(body: &Value) -> Value {
    let width = body["width"].as_u64().unwrap() as usize;
    let vectors: Vec<Vec<f64>> = body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            let mut v = vec![0.0; width];
            v[0] = t.as_str().unwrap().len() as f64;
            v
        })
        .collect();
    json!({ "vectors": vectors, "model_id": "mock-encoder" })
}

fn client(url: &str, width: usize, strict: bool) -> ServiceEmbedder {
    ServiceEmbedder::new(url, width, strict, 5).with_retries(2, Duration::from_millis(1))
}

#[test]
fn embeds_through_the_service() {
    let server = MockServer::start(Box::new(|_, method, path, body| {
        assert_eq!((method, path), ("POST", "/embed"));
        (200, fake_vectors(body).to_string())
    }));
    let c = client(&server.url, 4, true);
    let texts: Vec<String> = ["abfd", "NULL", "abfd"].map(String::from).to_vec();
    let v = c.embed_batch(&texts).unwrap();
    assert_eq!(v.len(), 3);
    assert_eq!(v[0], vec![4.0, 0.0, 0.0, 0.0]);
    assert_eq!(v[0], v[2]);
    assert_eq!(c.model_id().as_deref(), Some("mock-encoder"));
    assert_eq!(server.hits(), 1);
}

#[test]
fn health_endpoint() {
    let server = MockServer::start(Box::new(|_, method, path, _| {
        assert_eq!((method, path), ("GET", "/healthz"));
        (200, json!({"status": "ok", "model_id": "mock-encoder", "width": 768}).to_string())
    }));
    let h = client(&server.url, 768, true).health().unwrap();
    assert_eq!((h.status.as_str(), h.model_id.as_str(), h.width), ("ok", "mock-encoder", 768));
}

#[test]
fn wrong_shape_is_not_retried() {
    let server = MockServer::start(Box::new(|_, _, _, _| {
        (200, json!({"vectors": [[1.0, 2.0]], "model_id": "m"}).to_string())
    }));
    let strict = client(&server.url, 4, true);
    let err = strict.embed_batch(&["a".to_string(), "b".to_string()]).unwrap_err();
    assert!(matches!(err, EmbedError::Shape { got: 1, width: 2, expected: 2, expected_width: 4 }), "{err}");
    assert_eq!(server.hits(), 1);
    let lax = client(&server.url, 4, false);
    let v = lax.embed_batch(&["a".to_string()]).unwrap();
    assert_eq!(v[0], HashEmbedder::new(4, 5).embed_one("a"));
}

#[test]
fn transient_failures_are_retried() {
    let server = MockServer::start(Box::new(|n, _, _, body| {
        if n == 0 {
            (503, json!({"detail": "model not loaded"}).to_string())
        } else {
            (200, fake_vectors(body).to_string())
        }
    }));
    let v = client(&server.url, 3, true).embed_batch(&["int".to_string()]).unwrap();
    assert_eq!(v[0], vec![3.0, 0.0, 0.0]);
    assert_eq!(server.hits(), 2);
}

#[test]
fn persistent_failure_is_an_error_only_when_strict() {
    let server = MockServer::start(Box::new(|_, _, _, _| (503, "{}".to_string())));
    let err = client(&server.url, 3, true).embed_batch(&["x".to_string()]).unwrap_err();
    assert!(matches!(err, EmbedError::Service(_)));
    assert_eq!(server.hits(), 3);
    let v = client(&server.url, 3, false).embed_batch(&["x".to_string()]).unwrap();
    assert_eq!(v[0], HashEmbedder::new(3, 5).embed_one("x"));
}

#[test]
fn cache_avoids_repeat_requests() {
    let server = MockServer::start(Box::new(|_, _, _, body| (200, fake_vectors(body).to_string())));
    let cached = CachedEmbedder::new(client(&server.url, 2, true), EmbedCache::default());
    let texts = vec!["for".to_string(), "long".to_string()];
    let first = cached.embed_batch(&texts).unwrap();
    let second = cached.embed_batch(&texts).unwrap();
    assert_eq!(first, second);
    assert_eq!(server.hits(), 1);
}
