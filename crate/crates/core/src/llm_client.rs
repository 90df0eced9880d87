//! Blocking client for OpenAI-compatible `/v1/completions` endpoints.
//!
//! Base models are decoded as plain continuation predictors: a suffix request
//! is the prompt with the kept prefix appended, sent with exactly the decoding
//! parameters that define the prior. [`RemoteGenerator`] wraps the client in
//! the [`Generator`] interface used by the sampler.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::generator::{ChainRng, Generator, TextResponse};
use crate::sampler::DecodeConfig;

/// Upper bound on `max_retries`.
pub const MAX_RETRIES_LIMIT: u32 = 10;

/// Characters per token assumed when the backend reports no usage.
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub auth_token_env: Option<String>,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    /// Base of the exponential backoff, in seconds.
    pub retry_backoff: f64,
    /// Optional JSONL file receiving every request/response pair.
    pub audit_log: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000".into(),
            model_name: String::new(),
            auth_token_env: None,
            timeout: 120.0,
            max_retries: 3,
            retry_backoff: 0.5,
            audit_log: None,
        }
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::input(format!("base_url {:?} is not an http(s) URL", self.base_url)));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::input("timeout must be positive"));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(Error::input(format!("max_retries must be at most {MAX_RETRIES_LIMIT}")));
        }
        if !(self.retry_backoff >= 0.0 && self.retry_backoff.is_finite()) {
            return Err(Error::input("retry_backoff must be non-negative"));
        }
        Ok(())
    }
}

/// A decoded JSON reply together with transport accounting.
#[derive(Debug, Clone)]
pub struct Reply {
    pub body: Value,
    pub wall_ms: f64,
    pub retries: u32,
}

/// Cumulative accounting over every request a client has issued.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UsageTotals {
    pub requests: u64,
    pub retries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    retries: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    wall_us: AtomicU64,
}

/// JSON-over-HTTP transport with retries, bearer auth and audit mirroring.
#[derive(Debug)]
pub struct HttpClient {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    audit: Option<Mutex<File>>,
    counters: Counters,
}

impl HttpClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout)))
            .build();
        let audit = match &cfg.audit_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(path)?,
            )),
            None => None,
        };
        Ok(HttpClient {
            agent: ureq::Agent::new_with_config(config),
            cfg,
            audit,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn totals(&self) -> UsageTotals {
        let c = &self.counters;
        UsageTotals {
            requests: c.requests.load(Ordering::Relaxed),
            retries: c.retries.load(Ordering::Relaxed),
            prompt_tokens: c.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: c.completion_tokens.load(Ordering::Relaxed),
            wall_ms: c.wall_us.load(Ordering::Relaxed) as f64 / 1000.0,
        }
    }

    fn record_tokens(&self, prompt: Option<u64>, completion: Option<u64>) {
        if let Some(p) = prompt {
            self.counters.prompt_tokens.fetch_add(p, Ordering::Relaxed);
        }
        if let Some(c) = completion {
            self.counters.completion_tokens.fetch_add(c, Ordering::Relaxed);
        }
    }

    fn bearer(&self) -> Result<Option<String>> {
        match &self.cfg.auth_token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(|token| Some(format!("Bearer {token}")))
                .map_err(|_| Error::input(format!("environment variable {var} is not set"))),
        }
    }

    fn audit(&self, url: &str, request: &Value, status: Option<u16>, response: &str) {
        if let Some(file) = &self.audit {
            let line = json!({
                "url": url,
                "request": request,
                "status": status,
                "response": response,
            });
            // audit failures never fail the request
            if let Ok(mut f) = file.lock() {
                let _ = writeln!(f, "{line}");
            }
        }
    }

    /// Full-jitter exponential backoff before retry number `attempt + 1`.
    fn backoff(&self, attempt: u32) -> Duration {
        let ceiling = self.cfg.retry_backoff * 2f64.powi(attempt as i32);
        if ceiling <= 0.0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(rand::rng().random_range(0.0..ceiling))
    }

    /// POST `body` to `{base_url}{path}` and decode the JSON reply.
    ///
    /// Transport failures, 429 and 5xx responses are retried up to
    /// `max_retries` times; other 4xx responses fail immediately.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Reply> {
        let url = format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path);
        let auth = self.bearer()?;
        let started = Instant::now();
        let mut attempt = 0;
        let outcome = loop {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let mut request = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(auth) = &auth {
                request = request.header("Authorization", auth);
            }
            let result = request.send(body.to_string());
            let last_failure = match result {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let text = response.body_mut().read_to_string().unwrap_or_default();
                    self.audit(&url, body, Some(status), &text);
                    if (200..300).contains(&status) {
                        break Ok(serde_json::from_str::<Value>(&text).map_err(|e| {
                            Error::Data(format!("response from {url} is not JSON: {e}"))
                        }));
                    }
                    if status == 429 || status >= 500 {
                        format!("HTTP {status}: {}", server_message(&text))
                    } else {
                        break Err(Error::RequestRejected {
                            status,
                            message: server_message(&text),
                        });
                    }
                }
                Err(e) => {
                    self.audit(&url, body, None, &e.to_string());
                    e.to_string()
                }
            };
            if attempt >= self.cfg.max_retries {
                break Err(Error::BackendUnavailable {
                    attempts: attempt + 1,
                    message: last_failure,
                });
            }
            attempt += 1;
        };
        let elapsed = started.elapsed();
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        self.counters.retries.fetch_add(attempt as u64, Ordering::Relaxed);
        self.counters
            .wall_us
            .fetch_add(elapsed.as_micros() as u64, Ordering::Relaxed);
        let body = outcome??;
        Ok(Reply {
            body,
            wall_ms: elapsed.as_secs_f64() * 1000.0,
            retries: attempt,
        })
    }
}

/// Prefer `error.message` from an OpenAI-style error body, else the raw text.
fn server_message(text: &str) -> String {
    serde_json::from_str::<Value>(text)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .or_else(|| v.get("error"))
                .or_else(|| v.get("message"))
                .and_then(Value::as_str)
                .map(str::to_owned)
        })
        .unwrap_or_else(|| text.trim().to_string())
}

/// One completion request, expressed in decoding terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub prefix_text: String,
    pub temperature: f64,
    pub max_tokens: u64,
    pub stop: Vec<String>,
}

impl GenerationRequest {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::input("temperature must be positive"));
        }
        if self.max_tokens < 1 {
            return Err(Error::input("max_tokens must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub wall_ms: f64,
    pub retries: u32,
    /// The completion hit `max_tokens`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// `prefix_text ++ new_text`.
    pub text: String,
    /// Only the text produced by this request.
    pub new_text: String,
    pub usage: Usage,
}

#[derive(Debug)]
pub struct CompletionsClient {
    http: HttpClient,
}

impl CompletionsClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Ok(CompletionsClient {
            http: HttpClient::new(cfg)?,
        })
    }

    pub fn http(&self) -> &HttpClient {
        &self.http
    }

    /// Sample a fresh completion. The request must carry no prefix.
    pub fn remote_sample_full(&self, req: &GenerationRequest) -> Result<Completion> {
        if !req.prefix_text.is_empty() {
            return Err(Error::input("remote_sample_full takes an empty prefix"));
        }
        self.complete(req)
    }

    /// Continue from a kept prefix. The request must carry a prefix.
    pub fn remote_sample_suffix(&self, req: &GenerationRequest) -> Result<Completion> {
        if req.prefix_text.is_empty() {
            return Err(Error::input("remote_sample_suffix needs a non-empty prefix"));
        }
        self.complete(req)
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Completion> {
        req.validate()?;
        let body = json!({
            "model": self.http.config().model_name,
            "prompt": format!("{}{}", req.prompt_text, req.prefix_text),
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "stop": req.stop,
        });
        let reply = self.http.post_json("/v1/completions", &body)?;
        let choice = reply
            .body
            .pointer("/choices/0")
            .ok_or_else(|| Error::Data("completion response has no choices".into()))?;
        let new_text = choice
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Data("completion choice has no text".into()))?
            .to_string();
        let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
        let prompt_tokens = reply.body.pointer("/usage/prompt_tokens").and_then(Value::as_u64);
        let completion_tokens = reply
            .body
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64);
        self.http.record_tokens(prompt_tokens, completion_tokens);
        Ok(Completion {
            text: format!("{}{}", req.prefix_text, new_text),
            new_text,
            usage: Usage {
                prompt_tokens,
                completion_tokens,
                wall_ms: reply.wall_ms,
                retries: reply.retries,
                truncated,
            },
        })
    }
}

/// Estimated token length of a kept prefix.
pub fn estimate_prefix_tokens(prefix: &TextResponse) -> u64 {
    prefix
        .token_count
        .unwrap_or_else(|| prefix.text.chars().count().div_ceil(CHARS_PER_TOKEN) as u64)
}

/// A remote base model bound to one decoding configuration.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: CompletionsClient,
    temperature: f64,
    max_len: u64,
    stop: Vec<String>,
}

impl RemoteGenerator {
    pub fn new(client: CompletionsClient, config: &DecodeConfig) -> Result<Self> {
        config.validate()?;
        Ok(RemoteGenerator {
            client,
            temperature: config.temperature,
            max_len: config.max_len as u64,
            stop: config.stop.clone(),
        })
    }

    pub fn client(&self) -> &CompletionsClient {
        &self.client
    }

    /// The request a suffix regeneration from `prefix` issues.
    pub fn suffix_request(&self, prompt: &str, prefix: &TextResponse) -> GenerationRequest {
        let used = if prefix.text.is_empty() {
            0
        } else {
            estimate_prefix_tokens(prefix)
        };
        GenerationRequest {
            prompt_text: prompt.to_string(),
            prefix_text: prefix.text.clone(),
            temperature: self.temperature,
            max_tokens: self.max_len.saturating_sub(used).max(1),
            stop: self.stop.clone(),
        }
    }
}

impl Generator for RemoteGenerator {
    type Prompt = str;
    type Response = TextResponse;

    fn sample_full(&self, prompt: &str, _rng: &mut ChainRng) -> Result<TextResponse> {
        let req = self.suffix_request(prompt, &TextResponse::new(""));
        let c = self.client.remote_sample_full(&req)?;
        Ok(TextResponse {
            text: c.text,
            token_count: c.usage.completion_tokens,
        })
    }

    fn sample_suffix(
        &self,
        prompt: &str,
        prefix: &TextResponse,
        rng: &mut ChainRng,
    ) -> Result<TextResponse> {
        if prefix.text.is_empty() {
            return self.sample_full(prompt, rng);
        }
        let req = self.suffix_request(prompt, prefix);
        let used = estimate_prefix_tokens(prefix);
        let c = self.client.remote_sample_suffix(&req)?;
        Ok(TextResponse {
            text: c.text,
            token_count: c.usage.completion_tokens.map(|n| n + used),
        })
    }
}
