use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::PromptSpec;
use crate::pool::bounded_map;

#[derive(Debug, thiserror::Error)]
pub enum TeacherError {
    #[error("transport failure after {attempts} attempt(s): {last_error}")]
    Transport { attempts: u32, last_error: String },
    #[error("backend returned HTTP {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("no stub fixture for prompt digest {digest}")]
    FixtureMissing { digest: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("unexpected response shape: {0}")]
    InvalidResponse(String),
    #[error("backend returned empty text")]
    EmptyResponse,
    #[error("reading stub fixtures {path}: {message}")]
    Fixtures { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub raw_text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait CompletionBackend: Send + Sync {
    fn backend_id(&self) -> String;
    /// Raw completion text for a prompt.
    fn complete_text(&self, prompt: &PromptSpec) -> Result<String, TeacherError>;
}

/// Send one prompt and time the call.
pub fn complete(prompt: &PromptSpec, backend: &dyn CompletionBackend) -> Result<TeacherResponse, TeacherError> {
    let started = Instant::now();
    let raw_text = backend.complete_text(prompt)?;
    if raw_text.is_empty() {
        return Err(TeacherError::EmptyResponse);
    }
    Ok(TeacherResponse {
        raw_text,
        backend_id: backend.backend_id(),
        latency_ms: started.elapsed().as_millis() as u64,
    })
}

/// Complete many prompts with at most `max_in_flight` concurrent requests.
pub fn complete_many(
    prompts: &[PromptSpec],
    backend: &dyn CompletionBackend,
    max_in_flight: usize,
) -> Vec<Result<TeacherResponse, TeacherError>> {
    bounded_map(prompts, max_in_flight, |p| complete(p, backend))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http(HttpBackendConfig),
    Stub { fixtures: PathBuf },
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn CompletionBackend>, TeacherError> {
    Ok(match config {
        BackendConfig::Http(c) => Box::new(HttpBackend::new(c.clone())?),
        BackendConfig::Stub { fixtures } => Box::new(StubBackend::load(fixtures)?),
    })
}

// ---------------------------------------------------------------------------
// Stub backend
// ---------------------------------------------------------------------------

/// One line of a stub fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubFixture {
    pub digest: String,
    pub text: String,
}

/// Deterministic backend answering from canned texts keyed by prompt digest.
#[derive(Debug, Default, Clone)]
pub struct StubBackend {
    fixtures: HashMap<String, String>,
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &PromptSpec, text: impl Into<String>) {
        self.fixtures.insert(prompt.digest(), text.into());
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Load a JSONL file of [`StubFixture`] lines.
    pub fn load(path: &Path) -> Result<Self, TeacherError> {
        let err = |message: String| TeacherError::Fixtures {
            path: path.display().to_string(),
            message,
        };
        let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut fixtures = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fx: StubFixture = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
            fixtures.insert(fx.digest, fx.text);
        }
        Ok(Self { fixtures })
    }
}

impl CompletionBackend for StubBackend {
    fn backend_id(&self) -> String {
        "stub".into()
    }

    fn complete_text(&self, prompt: &PromptSpec) -> Result<String, TeacherError> {
        let digest = prompt.digest();
        self.fixtures
            .get(&digest)
            .cloned()
            .ok_or(TeacherError::FixtureMissing { digest })
    }
}

// ---------------------------------------------------------------------------
// HTTP chat-completion backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// e.g. `https://host/v1`; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_request_timeout_ms")]
    pub request_timeout_ms: u64,
}

fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_request_timeout_ms() -> u64 {
    300_000
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, TeacherError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| TeacherError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.request_timeout_ms)))
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }

    fn request_body(&self, prompt: &PromptSpec) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        });
        if let Some(max_tokens) = self.config.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self.agent.post(url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => Attempt::Done(extract_content(&text)),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Done(Err(TeacherError::Backend { status, body: text })),
        }
    }
}

enum Attempt {
    Done(Result<String, TeacherError>),
    Retry(String),
}

fn extract_content(body: &str) -> Result<String, TeacherError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TeacherError::InvalidResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TeacherError::InvalidResponse("missing choices[0].message.content".into()))
}

impl CompletionBackend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    /// Retries connection failures, 429 and 5xx with exponential backoff.
    fn complete_text(&self, prompt: &PromptSpec) -> Result<String, TeacherError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = self.request_body(prompt);
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&url, &body) {
                Attempt::Done(result) => return result,
                Attempt::Retry(why) => last_error = why,
            }
            if attempt < attempts {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
        Err(TeacherError::Transport { attempts, last_error })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::PromptIntent;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    fn prompt() -> PromptSpec {
        PromptSpec {
            system_text: "sys".into(),
            user_text: "user".into(),
            intent: PromptIntent::GenerateCase,
        }
    }

    /// Serves the scripted (status, body) pairs to successive connections and
    /// records each request body.
    fn scripted_server(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in script {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let request = loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).to_string();
                    if let Some(split) = text.find("\r\n\r\n") {
                        let len = text[..split]
                            .lines()
                            .find_map(|l| {
                                let lower = l.to_ascii_lowercase();
                                lower.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= split + 4 + len {
                            break text;
                        }
                    }
                    if n == 0 {
                        break text;
                    }
                };
                seen2.lock().unwrap().push(request);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn config(base_url: String, max_retries: u32) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url,
            model: "teacher".into(),
            temperature: 0.0,
            api_key_env: None,
            max_tokens: None,
            max_retries,
            backoff_ms: 1,
            request_timeout_ms: 5_000,
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    #[test]
    fn stub_answers_by_digest() {
        let mut stub = StubBackend::new();
        stub.insert(&prompt(), "canned");
        let r = complete(&prompt(), &stub).unwrap();
        assert_eq!(r.raw_text, "canned");
        assert_eq!(r.backend_id, "stub");
        let mut other = prompt();
        other.user_text.push('!');
        assert!(matches!(complete(&other, &stub), Err(TeacherError::FixtureMissing { .. })));
    }

    #[test]
    fn stub_loads_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        let fx = StubFixture {
            digest: prompt().digest(),
            text: "hello".into(),
        };
        std::fs::write(&path, format!("{}\n\n", serde_json::to_string(&fx).unwrap())).unwrap();
        let stub = StubBackend::load(&path).unwrap();
        assert_eq!(stub.len(), 1);
        assert_eq!(stub.complete_text(&prompt()).unwrap(), "hello");
    }

    #[test]
    fn retries_after_429() {
        let (url, seen) = scripted_server(vec![(429, "{}".into()), (200, ok_body("done"))]);
        let backend = HttpBackend::new(config(url, 3)).unwrap();
        let r = complete(&prompt(), &backend).unwrap();
        assert_eq!(r.raw_text, "done");
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[0].starts_with("POST /v1/chat/completions"));
        assert!(seen[1].contains("\"model\"") && seen[1].contains("\"teacher\""));
    }

    #[test]
    fn exhausted_retries_report_attempts() {
        let (url, _) = scripted_server(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let backend = HttpBackend::new(config(url, 2)).unwrap();
        match complete(&prompt(), &backend) {
            Err(TeacherError::Transport { attempts, last_error }) => {
                assert_eq!(attempts, 3);
                assert!(last_error.contains("503"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn connection_refused_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = HttpBackend::new(config(format!("http://127.0.0.1:{port}"), 1)).unwrap();
        assert!(matches!(
            complete(&prompt(), &backend),
            Err(TeacherError::Transport { attempts: 2, .. })
        ));
    }

    #[test]
    fn client_error_is_not_retried() {
        let (url, seen) = scripted_server(vec![(400, "bad request".into())]);
        let backend = HttpBackend::new(config(url, 3)).unwrap();
        match complete(&prompt(), &backend) {
            Err(TeacherError::Backend { status, body }) => {
                assert_eq!(status, 400);
                assert_eq!(body, "bad request");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_api_key_env() {
        let mut c = config("http://localhost".into(), 0);
        c.api_key_env = Some("CODEREASONER_TEST_SURELY_UNSET_KEY".into());
        assert!(matches!(HttpBackend::new(c), Err(TeacherError::MissingApiKey(_))));
    }

    #[test]
    fn complete_many_keeps_order() {
        let mut stub = StubBackend::new();
        let prompts: Vec<PromptSpec> = (0..8)
            .map(|i| PromptSpec {
                user_text: format!("q{i}"),
                ..prompt()
            })
            .collect();
        for (i, p) in prompts.iter().enumerate() {
            stub.insert(p, format!("a{i}"));
        }
        let out = complete_many(&prompts, &stub, 3);
        for (i, r) in out.into_iter().enumerate() {
            assert_eq!(r.unwrap().raw_text, format!("a{i}"));
        }
    }
}
