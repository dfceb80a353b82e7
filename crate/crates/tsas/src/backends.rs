//! Generation backends: the scripted mock used by tests and the HTTP client
//! for an external model server. The built-in trainable model lives in
//! `tsas_core::toymodel` and plugs into the same trait.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tsas_core::types::DecodeMode;
use tsas_core::{DecodeSpec, GenerateError, Generation, Generator};

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// One recorded call to the mock.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub prompt: String,
    pub mode: DecodeMode,
    pub seed: Option<u64>,
}

/// Scripted backend: a prompt → reply table plus a call log, so pipeline
/// tests can assert exactly how many generations ran and in which order.
#[derive(Debug, Default)]
pub struct MockGenerator {
    scripts: HashMap<String, Generation>,
    default_reply: Option<Generation>,
    modes: Option<Vec<DecodeMode>>,
    calls: Mutex<Vec<MockCall>>,
}

impl Clone for MockGenerator {
    fn clone(&self) -> Self {
        MockGenerator {
            scripts: self.scripts.clone(),
            default_reply: self.default_reply.clone(),
            modes: self.modes.clone(),
            calls: Mutex::new(self.calls.lock().unwrap().clone()),
        }
    }
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reply to this exact prompt with plain text (no log-probs).
    pub fn script(mut self, prompt: impl Into<String>, text: impl Into<String>) -> Self {
        self.scripts.insert(prompt.into(), Generation::text_only(text));
        self
    }

    /// Reply with token log-probs, for confidence-filter paths.
    pub fn script_with_logprobs(
        mut self,
        prompt: impl Into<String>,
        text: impl Into<String>,
        logprobs: Vec<f64>,
    ) -> Self {
        self.scripts
            .insert(prompt.into(), Generation { text: text.into(), token_logprobs: Some(logprobs) });
        self
    }

    /// Fallback reply for unscripted prompts.
    pub fn default_reply(mut self, text: impl Into<String>) -> Self {
        self.default_reply = Some(Generation::text_only(text));
        self
    }

    /// Restrict the advertised decode modes (all three by default).
    pub fn with_modes(mut self, modes: &[DecodeMode]) -> Self {
        self.modes = Some(modes.to_vec());
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Generator for MockGenerator {
    fn supports(&self, mode: DecodeMode) -> bool {
        match &self.modes {
            Some(modes) => modes.contains(&mode),
            None => true,
        }
    }

    fn generate(&self, prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError> {
        spec.validate()?;
        if !self.supports(spec.mode) {
            return Err(GenerateError::UnsupportedMode(spec.mode));
        }
        self.calls.lock().unwrap().push(MockCall {
            prompt: prompt.to_string(),
            mode: spec.mode,
            seed: spec.mask_seed.or(spec.sampling_seed),
        });
        if let Some(reply) = self.scripts.get(prompt).or(self.default_reply.as_ref()) {
            return Ok(reply.clone());
        }
        let mut excerpt: String = prompt.chars().take(40).collect();
        if prompt.len() > excerpt.len() {
            excerpt.push('…');
        }
        Err(GenerateError::Unscripted(excerpt))
    }
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

/// Environment variable consulted for the server base URL when no flag or
/// config value is given.
pub const SERVER_URL_ENV: &str = "TSAS_SERVER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOptions {
    pub base_url: String,
    pub timeout_ms: u64,
    /// Additional attempts after the first, for retryable failures.
    pub retries: u32,
    /// Base backoff; doubles per retry.
    pub backoff_ms: u64,
    pub bearer_token: Option<String>,
    /// Concurrent in-flight request bound.
    pub max_in_flight: u32,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            base_url: String::new(),
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 100,
            bearer_token: None,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum HttpBackendError {
    #[error("no server base URL; pass --server, set {SERVER_URL_ENV}, or configure [http].base_url")]
    MissingBaseUrl,
    #[error("capability query failed: {0}")]
    Capabilities(String),
}

/// Wire format of a generation request. Field names are part of the
/// protocol; see the README for the server contract.
#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    mode: DecodeMode,
    top_k: u32,
    temperature: f64,
    dropout_rate: f64,
    seed: Option<u64>,
    max_new_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct WireCapabilities {
    modes: Vec<String>,
}

/// Client for a generation server speaking the JSON protocol:
/// `GET {base}/capabilities` for the advertised decode modes, then
/// `POST {base}/generate` per sample. 4xx responses are never retried;
/// 5xx and transport failures back off exponentially within the retry
/// budget. No request is ever sent with a mode the server did not
/// advertise.
pub struct HttpGenerator {
    agent: ureq::Agent,
    opts: HttpOptions,
    modes: Vec<DecodeMode>,
    gate: InFlightGate,
}

impl Clone for HttpGenerator {
    fn clone(&self) -> Self {
        HttpGenerator {
            agent: self.agent.clone(),
            opts: self.opts.clone(),
            modes: self.modes.clone(),
            gate: InFlightGate::new(self.opts.max_in_flight.max(1) as usize),
        }
    }
}

impl HttpGenerator {
    /// Connects and fetches the server's capabilities once; a server that
    /// is unreachable or returns a malformed capability document fails
    /// here, before any generation is attempted.
    pub fn connect(opts: HttpOptions) -> Result<Self, HttpBackendError> {
        if opts.base_url.is_empty() {
            return Err(HttpBackendError::MissingBaseUrl);
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(opts.timeout_ms))
            .build();

        let url = format!("{}/capabilities", opts.base_url.trim_end_matches('/'));
        let mut request = agent.get(&url);
        if let Some(token) = &opts.bearer_token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let caps: WireCapabilities = request
            .call()
            .map_err(|e| HttpBackendError::Capabilities(e.to_string()))?
            .into_json()
            .map_err(|e| HttpBackendError::Capabilities(e.to_string()))?;

        let modes = caps
            .modes
            .iter()
            .filter_map(|m| match m.as_str() {
                "greedy" => Some(DecodeMode::Greedy),
                "top_k" => Some(DecodeMode::TopK),
                "mc_dropout" => Some(DecodeMode::McDropout),
                _ => None, // unknown modes are ignored for forward compatibility
            })
            .collect();
        let gate = InFlightGate::new(opts.max_in_flight.max(1) as usize);
        Ok(HttpGenerator { agent, opts, modes, gate })
    }

    fn post_once(&self, body: &WireRequest<'_>) -> Result<Generation, Attempt> {
        let url = format!("{}/generate", self.opts.base_url.trim_end_matches('/'));
        let mut request = self.agent.post(&url);
        if let Some(token) = &self.opts.bearer_token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let value = serde_json::to_value(body).expect("request serializes");
        match request.send_json(value) {
            Ok(response) => {
                let parsed: WireResponse = response
                    .into_json()
                    .map_err(|e| Attempt::Fatal(GenerateError::Protocol(e.to_string())))?;
                Ok(Generation { text: parsed.text, token_logprobs: parsed.token_logprobs })
            }
            Err(ureq::Error::Status(status, response)) => {
                let body_excerpt: String = response
                    .into_string()
                    .unwrap_or_default()
                    .chars()
                    .take(200)
                    .collect();
                if (500..600).contains(&status) {
                    Err(Attempt::Retryable(format!("HTTP {status}: {body_excerpt}")))
                } else {
                    Err(Attempt::Fatal(GenerateError::Rejected { status, body_excerpt }))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Attempt::Retryable(t.to_string())),
        }
    }
}

enum Attempt {
    Retryable(String),
    Fatal(GenerateError),
}

impl Generator for HttpGenerator {
    fn supports(&self, mode: DecodeMode) -> bool {
        self.modes.contains(&mode)
    }

    fn generate(&self, prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError> {
        spec.validate()?;
        if !self.supports(spec.mode) {
            return Err(GenerateError::UnsupportedMode(spec.mode));
        }
        let body = WireRequest {
            prompt,
            mode: spec.mode,
            top_k: spec.top_k,
            temperature: spec.temperature,
            dropout_rate: spec.dropout_rate,
            seed: spec.mask_seed.or(spec.sampling_seed),
            max_new_tokens: spec.max_new_tokens,
        };

        let _slot = self.gate.acquire();
        let attempts = self.opts.retries + 1;
        let mut backoff = Duration::from_millis(self.opts.backoff_ms);
        let mut last_message = String::new();
        for attempt in 0..attempts {
            match self.post_once(&body) {
                Ok(generation) => return Ok(generation),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(message)) => {
                    last_message = message;
                    if attempt + 1 < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GenerateError::Transport { attempts, message: last_message })
    }
}

/// Counting gate bounding concurrent requests.
struct InFlightGate {
    state: Mutex<usize>,
    available: Condvar,
    capacity: usize,
}

struct GateSlot<'g>(&'g InFlightGate);

impl InFlightGate {
    fn new(capacity: usize) -> Self {
        InFlightGate { state: Mutex::new(0), available: Condvar::new(), capacity }
    }

    fn acquire(&self) -> GateSlot<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.capacity {
            in_flight = self.available.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GateSlot(self)
    }
}

impl Drop for GateSlot<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.0.state.lock().unwrap();
        *in_flight -= 1;
        self.0.available.notify_one();
    }
}
