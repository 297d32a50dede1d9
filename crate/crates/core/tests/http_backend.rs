//! Wire-level tests for the HTTP backend against a local canned server.

use cimnas::llm::{HttpBackend, LlmBackend, LlmError, LlmRequest};
use std::io::{Read, Write};
use std::net::TcpListener;
use std::time::Duration;

/// Serves one canned HTTP response per entry, in order, then closes.
fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            // Drain the request (headers + body) well enough for a test.
            let mut buf = [0u8; 65536];
            let mut read = 0;
            loop {
                let n = stream.read(&mut buf[read..]).unwrap_or(0);
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]);
                if n == 0 || request_complete(&text) {
                    break;
                }
            }
            let reason = match status {
                200 => "OK",
                401 => "Unauthorized",
                429 => "Too Many Requests",
                500 => "Internal Server Error",
                _ => "Status",
            };
            let reply = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), handle)
}

fn request_complete(text: &str) -> bool {
    if let Some(header_end) = text.find("\r\n\r\n") {
        let content_length = text
            .lines()
            .find_map(|l| {
                let l = l.to_ascii_lowercase();
                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().ok())
            })
            .flatten()
            .unwrap_or(0);
        text.len() >= header_end + 4 + content_length
    } else {
        false
    }
}

fn ok_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn request() -> LlmRequest {
    LlmRequest::chat("gpt-4", "system", "user")
}

#[test]
fn happy_path_extracts_the_assistant_text() {
    let (endpoint, handle) = serve(vec![(200, ok_body("[[32,3]]"))]);
    let mut backend = HttpBackend::new(endpoint, Some("secret".into()), 0);
    let text = backend.complete(&request()).unwrap();
    assert_eq!(text, "[[32,3]]");
    handle.join().unwrap();
}

#[test]
fn transient_failures_are_retried_with_backoff() {
    let (endpoint, handle) = serve(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (200, ok_body("recovered")),
    ]);
    let mut backend =
        HttpBackend::new(endpoint, None, 2).with_retry_base(Duration::from_millis(1));
    let text = backend.complete(&request()).unwrap();
    assert_eq!(text, "recovered");
    handle.join().unwrap();
}

#[test]
fn retries_exhaust_into_an_error() {
    let (endpoint, handle) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let mut backend =
        HttpBackend::new(endpoint, None, 1).with_retry_base(Duration::from_millis(1));
    match backend.complete(&request()) {
        Err(LlmError::Exhausted { attempts: 2, .. }) => {}
        other => panic!("expected exhaustion, got {other:?}"),
    }
    handle.join().unwrap();
}

#[test]
fn auth_failures_do_not_retry() {
    let (endpoint, handle) = serve(vec![(401, "{}".into())]);
    let mut backend =
        HttpBackend::new(endpoint, Some("bad".into()), 5).with_retry_base(Duration::from_millis(1));
    match backend.complete(&request()) {
        Err(LlmError::Auth { status: 401 }) => {}
        other => panic!("expected auth error, got {other:?}"),
    }
    // Only one canned response was served; a retry would hang the client.
    handle.join().unwrap();
}

#[test]
fn malformed_reply_is_reported() {
    let (endpoint, handle) = serve(vec![(200, "{\"unexpected\": true}".into())]);
    let mut backend = HttpBackend::new(endpoint, None, 0);
    match backend.complete(&request()) {
        Err(LlmError::MalformedReply(msg)) => assert!(msg.contains("choices")),
        other => panic!("expected malformed reply, got {other:?}"),
    }
    handle.join().unwrap();
}
