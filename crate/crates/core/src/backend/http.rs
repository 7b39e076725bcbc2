//! Chat-completions transport.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{CacheKey, MediaKind, MediaPayload, ModelRequest, Transport, TransportError};

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        Self { client }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(180))
    }
}

fn data_url(p: &MediaPayload) -> String {
    format!(
        "data:{};base64,{}",
        p.mime,
        base64::engine::general_purpose::STANDARD.encode(&p.bytes)
    )
}

fn audio_format(mime: &str) -> &str {
    match mime {
        "audio/mpeg" => "mp3",
        "audio/flac" => "flac",
        "audio/ogg" => "ogg",
        "audio/mp4" => "m4a",
        _ => "wav",
    }
}

/// Builds the POST body. Text-only requests send `content` as a plain string;
/// media requests send a part list with base64 data URLs for frames and an
/// `input_audio` part for audio.
pub fn chat_request_body(req: &ModelRequest) -> Value {
    let content = if req.frames.is_empty() && req.audio.is_none() {
        Value::String(req.prompt_text.clone())
    } else {
        let mut parts = vec![json!({"type": "text", "text": req.prompt_text})];
        for f in req.frames.iter().filter(|f| f.kind == MediaKind::Image) {
            parts.push(json!({"type": "image_url", "image_url": {"url": data_url(f)}}));
        }
        if let Some(a) = &req.audio {
            parts.push(json!({
                "type": "input_audio",
                "input_audio": {
                    "data": base64::engine::general_purpose::STANDARD.encode(&a.bytes),
                    "format": audio_format(&a.mime),
                }
            }));
        }
        Value::Array(parts)
    };
    let d = &req.binding.decode;
    let mut body = json!({
        "model": req.binding.model_id,
        "messages": [{"role": "user", "content": content}],
        "temperature": d.temperature,
        "max_tokens": d.max_output_tokens,
    });
    if let Some(seed) = d.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Extracts the first choice's message text.
pub fn parse_chat_response(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| "response has no choices[0].message.content".to_string())?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(format!("unexpected content type: {other}")),
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ModelRequest, _digest: &CacheKey, bearer: Option<&str>) -> Result<String, TransportError> {
        let mut rb = self.client.post(&req.binding.endpoint).json(&chat_request_body(req));
        if let Some(token) = bearer {
            rb = rb.bearer_auth(token);
        }
        let resp = rb.send().map_err(|e| TransportError::Retryable(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| TransportError::Retryable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Retryable(format!("HTTP {status}: {}", truncate(&body))));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("HTTP {status}: {}", truncate(&body))));
        }
        parse_chat_response(&body).map_err(TransportError::Retryable)
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(300) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendBinding, BackendClient, Capability, DecodeParams, FakeClock, ModelRequest};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    fn binding(endpoint: String) -> BackendBinding {
        BackendBinding {
            backend_id: "remote".into(),
            model_id: "gpt-4o-mini".into(),
            capability: Capability::TextFrames,
            endpoint,
            auth_ref: Some("MEROV_KEY".into()),
            decode: DecodeParams {
                temperature: 0.7,
                max_output_tokens: 256,
                seed: Some(7),
            },
        }
    }

    #[test]
    fn body_has_text_and_media_parts() {
        let mut req = ModelRequest::text(binding("http://x".into()), "describe", "t");
        let plain = chat_request_body(&req);
        assert_eq!(plain["messages"][0]["content"], "describe");
        assert_eq!(plain["seed"], 7);
        assert_eq!(plain["max_tokens"], 256);

        req.frames = vec![MediaPayload::image("image/jpeg", vec![0xff, 0xd8])];
        let body = chat_request_body(&req);
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1]["image_url"]["url"], "data:image/jpeg;base64,/9g=");
    }

    #[test]
    fn parses_string_and_part_content() {
        let s = r#"{"choices":[{"message":{"role":"assistant","content":"[happy]"}}]}"#;
        assert_eq!(parse_chat_response(s).unwrap(), "[happy]");
        let p = r#"{"choices":[{"message":{"content":[{"type":"text","text":"[a, "},{"type":"text","text":"b]"}]}}]}"#;
        assert_eq!(parse_chat_response(p).unwrap(), "[a, b]");
        assert!(parse_chat_response("{}").is_err());
        assert!(parse_chat_response("<html>").is_err());
    }

    /// Serves the given (status, body) pairs to successive connections and
    /// reports each request's headers and body.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(format!("{head}\n{}", String::from_utf8_lossy(&buf)));
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
            seen
        });
        (url, handle)
    }

    #[test]
    fn retries_429_then_succeeds_with_bearer_auth() {
        let ok = r#"{"choices":[{"message":{"content":"[calm]"}}]}"#.to_string();
        let (url, server) = serve(vec![(429, "slow down".into()), (200, ok)]);
        let client = BackendClient::builder()
            .clock(Arc::new(FakeClock::new()))
            .env(|k| (k == "MEROV_KEY").then(|| "sk-test".to_string()))
            .build()
            .unwrap();
        let mut b = binding(url);
        b.capability = Capability::Text;
        let resp = client.invoke(&ModelRequest::text(b, "hello", "t")).unwrap();
        assert_eq!(resp.text, "[calm]");
        assert_eq!(resp.attempt_count, 2);
        let seen = server.join().unwrap();
        assert!(seen[1].to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(seen[1].contains("\"model\":\"gpt-4o-mini\""));
    }

    #[test]
    fn client_errors_are_fatal() {
        let (url, server) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let client = BackendClient::builder()
            .clock(Arc::new(FakeClock::new()))
            .env(|_| Some("k".into()))
            .build()
            .unwrap();
        let mut b = binding(url);
        b.capability = Capability::Text;
        let err = client.invoke(&ModelRequest::text(b, "hello", "t")).unwrap_err();
        assert_eq!(err.code(), "REQUEST_REJECTED");
        server.join().unwrap();
    }
}
