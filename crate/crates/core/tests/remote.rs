use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mcq_eval::backend::{BackendError, LogprobBackend, LogprobQuery, RemoteBackend, RetryPolicy};
use serde_json::{json, Value};

type Handler = Box<dyn Fn(&str, &str, &str) -> (u16, String) + Send>;

/// Minimal HTTP/1.1 server answering each connection with the next handler.
fn serve(handlers: Vec<Handler>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    thread::spawn(move || {
        for handler in handlers {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut parts = request_line.split_whitespace();
            let method = parts.next().unwrap_or("").to_string();
            let path = parts.next().unwrap_or("").to_string();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8(body).unwrap();
            seen.lock().unwrap().push(body.clone());
            let (status, reply) = handler(&method, &path, &body);
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, bodies)
}

fn ok(tokens: Value, logprobs: Value) -> Handler {
    Box::new(move |method, path, _| {
        assert_eq!((method, path), ("POST", "/v1/score"));
        (200, json!({"tokens": tokens, "logprobs": logprobs}).to_string())
    })
}

fn client(url: &str, retries: usize) -> RemoteBackend {
    RemoteBackend::with_options(url, Duration::from_secs(5), RetryPolicy { delays: vec![Duration::ZERO; retries] })
}

#[test]
fn well_formed_response() {
    let (url, bodies) = serve(vec![ok(json!([" the"]), json!([-3.25]))]);
    let r = client(&url, 0).score(&LogprobQuery::new("gpt2-small", "", " the")).unwrap();
    assert_eq!(r.token_texts, [" the"]);
    assert_eq!(r.token_logprobs, [-3.25]);
    let sent: Value = serde_json::from_str(&bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(sent, json!({"model": "gpt2-small", "context": "", "continuation": " the"}));
}

#[test]
fn unknown_model_is_404() {
    let (url, _) = serve(vec![Box::new(|_, _, _| (404, json!({"error": "unknown model"}).to_string()))]);
    let err = client(&url, 2).score(&LogprobQuery::new("nope", "", " x")).unwrap_err();
    assert_eq!(err, BackendError::ModelUnavailable { model: "nope".into(), message: "unknown model".into() });
}

#[test]
fn malformed_request_is_rejected() {
    let (url, _) = serve(vec![Box::new(|_, _, _| (400, json!({"error": "bad body"}).to_string()))]);
    let err = client(&url, 0).score(&LogprobQuery::new("m", "", " x")).unwrap_err();
    assert!(matches!(err, BackendError::Rejected { status: 400, .. }));
}

#[test]
fn invariant_violations() {
    let (url, _) = serve(vec![
        ok(json!([" th", "a"]), json!([-1.0, -1.0])),
        ok(json!([" the"]), json!([0.5])),
        ok(json!([" the"]), json!([-1.0, -2.0])),
        Box::new(|_, _, _| (200, "{\"tokens\": 3}".into())),
    ]);
    let backend = client(&url, 0);
    for _ in 0..4 {
        let err = backend.score(&LogprobQuery::new("m", "", " the")).unwrap_err();
        assert!(matches!(err, BackendError::ProtocolViolation(_)), "{err}");
    }
}

#[test]
fn transient_failures_are_retried() {
    let (url, _) = serve(vec![
        Box::new(|_, _, _| (503, json!({"error": "busy"}).to_string())),
        ok(json!([" a", " b"]), json!([-0.5, 1e-10])),
    ]);
    let r = client(&url, 1).score(&LogprobQuery::new("m", "ctx", " a b")).unwrap();
    assert_eq!(r.token_logprobs, [-0.5, 0.0]);
}

#[test]
fn unreachable_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = client(&format!("http://127.0.0.1:{port}"), 2).score(&LogprobQuery::new("m", "", " x")).unwrap_err();
    assert!(matches!(err, BackendError::BackendUnreachable { attempts: 3, .. }), "{err}");
    assert!(err.is_unreachable());
}

#[test]
fn default_retry_schedule() {
    let policy = RetryPolicy::default();
    assert_eq!(policy.attempts(), 4);
    assert_eq!(policy.delays, [Duration::from_millis(500), Duration::from_secs(2), Duration::from_secs(8)]);
}

#[test]
fn health_endpoint() {
    let (url, _) = serve(vec![Box::new(|method, path, _| {
        assert_eq!((method, path), ("GET", "/v1/health"));
        (200, json!({"status": "ok", "models": ["gpt2-small"]}).to_string())
    })]);
    let health = client(&url, 0).health().unwrap();
    assert!(health.is_ok());
    assert_eq!(health.models, ["gpt2-small"]);
}
