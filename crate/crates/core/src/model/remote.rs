//! HTTP backend for OpenAI-compatible `/completions` servers.
//!
//! Scoring sends `prompt = prefix + continuation` with `echo: true`,
//! `max_tokens: 0`, `logprobs: 1` and `temperature: 0`; the continuation's
//! log-likelihood is the sum of `token_logprobs` over tokens whose
//! character span (`text_offset` .. `text_offset + len(token)`) ends past
//! the prefix. Generation sends the prefix with `max_tokens`, `stop` and
//! `temperature: 0` and returns `choices[0].text`.
//!
//! Transport failures, HTTP 429 and 5xx are retried with exponential
//! backoff; other HTTP errors and malformed bodies are protocol errors.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, warn};

use super::{
    truncate_generation, Backend, BackendDescriptor, BackendKind, ContinuationScore,
    GenerateRequest, ModelError, ScoreRequest,
};

pub const ENV_API_BASE: &str = "MGBR_API_BASE";
pub const ENV_API_KEY: &str = "MGBR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 8,
            requests_per_minute: None,
            max_attempts: 5,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Reads the base URL and credential from the environment.
    pub fn from_env(model: impl Into<String>) -> Result<Self, ModelError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| ModelError::Config(format!("{ENV_API_BASE} is not set")))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// Counting semaphore for the in-flight cap.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Spaces request starts at least `60 / rpm` seconds apart.
struct Pacer {
    interval: Option<Duration>,
    next: Mutex<Instant>,
}

impl Pacer {
    fn wait(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let slot = {
            let mut next = self.next.lock().expect("pacer poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    config: RemoteConfig,
    client: Client,
    gate: Gate,
    pacer: Pacer,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

enum Attempt {
    Retry(String),
    Fatal(ModelError),
}

impl RemoteBackend {
    pub fn new(name: impl Into<String>, config: RemoteConfig) -> Result<Self, ModelError> {
        if config.max_attempts == 0 {
            return Err(ModelError::Config("max_attempts must be at least 1".into()));
        }
        if config.base_url.is_empty() {
            return Err(ModelError::Config("empty base URL".into()));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        let parameters = BTreeMap::from([
            ("base_url".to_string(), config.base_url.clone()),
            ("model".to_string(), config.model.clone()),
        ]);
        let interval = config
            .requests_per_minute
            .filter(|r| *r > 0)
            .map(|r| Duration::from_secs_f64(60.0 / f64::from(r)));
        Ok(RemoteBackend {
            descriptor: BackendDescriptor {
                kind: BackendKind::Remote,
                name: name.into(),
                parameters,
            },
            gate: Gate::new(config.max_in_flight),
            pacer: Pacer {
                interval,
                next: Mutex::new(Instant::now()),
            },
            client,
            config,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, body: &serde_json::Value) -> Result<CompletionResponse, ModelError> {
        let _slot = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base * 2u32.saturating_pow(attempt - 1);
                debug!(attempt, ?delay, "retrying completion request");
                std::thread::sleep(delay);
            }
            self.pacer.wait();
            match self.try_post(body) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => {
                    warn!(attempt, %reason, "completion request failed");
                    last = reason;
                }
            }
        }
        Err(ModelError::BackendUnavailable {
            attempts: self.config.max_attempts,
            reason: last,
        })
    }

    fn try_post(&self, body: &serde_json::Value) -> Result<CompletionResponse, Attempt> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(ModelError::Protocol(format!(
                "HTTP {status}: {text}"
            ))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(ModelError::Protocol(format!("bad response body: {e}"))))
    }
}

/// Sums the log-probabilities of tokens that reach into the continuation.
fn continuation_logprob(
    lp: &Logprobs,
    prefix_chars: usize,
) -> Result<ContinuationScore, ModelError> {
    if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
        return Err(ModelError::Protocol(
            "tokens, token_logprobs and text_offset differ in length".into(),
        ));
    }
    let mut sum = 0.0;
    let mut units = 0;
    for ((tok, lp), off) in lp
        .tokens
        .iter()
        .zip(&lp.token_logprobs)
        .zip(&lp.text_offset)
    {
        if off + tok.chars().count() <= prefix_chars {
            continue;
        }
        let v = lp.ok_or_else(|| {
            ModelError::Protocol(format!(
                "missing log-probability for continuation token {tok:?}"
            ))
        })?;
        sum += v;
        units += 1;
    }
    if units == 0 {
        return Err(ModelError::Protocol(
            "response has no tokens covering the continuation".into(),
        ));
    }
    Ok(ContinuationScore {
        logprob: sum,
        units,
    })
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<ContinuationScore, ModelError> {
        if req.continuation.is_empty() {
            return Err(ModelError::EmptyContinuation);
        }
        let body = json!({
            "model": self.config.model,
            "prompt": format!("{}{}", req.prefix, req.continuation),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0.0,
        });
        let resp = self.post(&body)?;
        let choice = resp
            .choices
            .first()
            .ok_or_else(|| ModelError::Protocol("response has no choices".into()))?;
        let lp = choice.logprobs.as_ref().ok_or_else(|| {
            ModelError::Protocol("response lacks per-token log-probabilities".into())
        })?;
        continuation_logprob(lp, req.prefix.chars().count())
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ModelError> {
        let mut body = json!({
            "model": self.config.model,
            "prompt": req.prefix,
            "max_tokens": req.max_units,
            "temperature": 0.0,
        });
        if !req.stop.is_empty() {
            body["stop"] = json!([req.stop]);
        }
        let resp = self.post(&body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ModelError::Protocol("response has no choices".into()))?;
        Ok(truncate_generation(&choice.text, req.stop, usize::MAX))
    }
}
