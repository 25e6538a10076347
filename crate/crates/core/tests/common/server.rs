//! In-process HTTP provider speaking the wire protocol, backed by the mock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use base64::Engine;
use retrocap::provider::Provider;
use retrocap::{GenerationParams, MockProvider};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// The first `n` requests answer 503.
    Unavailable(usize),
    /// Every request answers 400.
    BadRequest,
    /// Text embeddings are scaled by 2.
    NotUnit,
    /// `echo` carries a modified prompt.
    AlteredEcho,
    /// Generation ignores the stop token.
    IgnoreStop,
}

pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<(String, Value)>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(fault: Fault) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (s, h, b) = (server.clone(), hits.clone(), bodies.clone());
        let handle = std::thread::spawn(move || {
            let mock = MockProvider::new();
            for mut req in s.incoming_requests() {
                let n = h.fetch_add(1, Ordering::SeqCst);
                let mut text = String::new();
                let _ = req.as_reader().read_to_string(&mut text);
                let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
                b.lock().unwrap().push((req.url().to_string(), body.clone()));
                let (status, reply) = match fault {
                    Fault::Unavailable(k) if n < k => (503, json!({"error": "warming up"})),
                    Fault::BadRequest => (400, json!({"error": "bad request"})),
                    _ => handle(&mock, req.url(), &body, fault),
                };
                let resp = tiny_http::Response::from_string(reply.to_string())
                    .with_status_code(status)
                    .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
                let _ = req.respond(resp);
            }
        });
        MockServer {
            url,
            hits,
            bodies,
            server,
            handle: Some(handle),
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle(mock: &MockProvider, url: &str, body: &Value, fault: Fault) -> (u16, Value) {
    match url {
        "/v1/manifest" => {
            let m = mock.manifest().unwrap();
            (200, serde_json::to_value(m).unwrap())
        }
        "/v1/embed_text" => {
            let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap_or_default();
            let mut vs = mock.embed_texts(&texts).unwrap();
            if fault == Fault::NotUnit {
                vs.iter_mut().flatten().for_each(|x| *x *= 2.0);
            }
            (200, json!({ "embeddings": vs }))
        }
        "/v1/embed_image" => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(body["image_b64"].as_str().unwrap_or(""))
                .unwrap_or_default();
            match mock.embed_image(&bytes) {
                Ok(v) => (200, json!({ "embedding": v })),
                Err(e) => (400, json!({ "error": e.to_string() })),
            }
        }
        "/v1/generate" => {
            let prompt = body["prompt"].as_str().unwrap_or("").to_string();
            let params = GenerationParams {
                num_candidates: body["num_candidates"].as_u64().unwrap_or(3) as usize,
                beam_size: body["beam_size"].as_u64().unwrap_or(3) as usize,
                max_new_tokens: body["max_new_tokens"].as_u64().unwrap_or(40) as usize,
                stop_token: body["stop"].as_str().unwrap_or("</s>").to_string(),
            };
            let mut cands = mock.generate(&prompt, &params).unwrap();
            if fault == Fault::IgnoreStop {
                for c in &mut cands {
                    c.text.push_str(&params.stop_token);
                    c.text.push_str(" trailing");
                }
            }
            let echo = if fault == Fault::AlteredEcho {
                format!("{prompt} ")
            } else {
                prompt
            };
            (200, json!({ "candidates": cands, "echo": echo }))
        }
        _ => (404, json!({ "error": "not found" })),
    }
}
