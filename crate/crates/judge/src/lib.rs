//! Chat-completions client for external LLM judges.
//!
//! Every call renders one of the judge templates, looks the rendered prompt up in a
//! content-addressed disk cache and only goes to the network on a miss. Network calls are
//! bounded by a shared concurrency limit and a token bucket and retried with exponential
//! backoff on transport errors, 429 and 5xx.
//!
//! Cache files live at `<cache_dir>/<sha256 hex>.json`; the digest covers the template id,
//! the rendered prompt and the model name (each length-prefixed).

pub mod cache;
pub mod limit;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use nlhf_core::judge::{JudgeError, LlmBackend};
use nlhf_core::preference::Choice;
use nlhf_core::prompt::{self, Bindings, FormatInvalid, ParseError, RenderError, TemplateId};
use nlhf_core::similarity::SimilarityScores;

pub use cache::{cache_key, CacheEntry, DiskCache};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("judge endpoint not configured (set JUDGE_ENDPOINT)")]
    NotConfigured,
    #[error("network disabled and no cached response for {key}")]
    Offline { key: String },
    #[error("judge transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected response body: {0}")]
    Body(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Format(#[from] FormatInvalid),
}

impl From<ClientError> for JudgeError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Render(e) => JudgeError::Render(e),
            ClientError::Parse(e) => JudgeError::Parse(e),
            ClientError::Format(e) => JudgeError::Format(e),
            other => JudgeError::Transport(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeConfig {
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub cache_dir: Option<PathBuf>,
    /// Refuse network traffic; only cached responses are served.
    pub offline: bool,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub max_concurrency: usize,
    /// Requests per second; 0 disables the token bucket.
    pub requests_per_second: f64,
    pub burst: u32,
    pub timeout: Duration,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint: None,
            model: "judge".to_string(),
            api_key: None,
            temperature: 0.0,
            max_tokens: None,
            cache_dir: None,
            offline: false,
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            max_concurrency: 8,
            requests_per_second: 0.0,
            burst: 1,
            timeout: Duration::from_secs(120),
        }
    }
}

impl JudgeConfig {
    /// Endpoint, model and key from `JUDGE_ENDPOINT`, `JUDGE_MODEL`, `JUDGE_API_KEY`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let mut cfg = JudgeConfig::default();
        cfg.endpoint = var("JUDGE_ENDPOINT");
        if let Some(model) = var("JUDGE_MODEL") {
            cfg.model = model;
        }
        cfg.api_key = var("JUDGE_API_KEY");
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parsed {
    Scores(SimilarityScores),
    Choice(Choice),
    EditedText(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeResponse {
    pub raw: String,
    pub parsed: Parsed,
    pub cached: bool,
}

/// Parse raw judge text according to what the template asks for.
pub fn parse_response(template: TemplateId, raw: &str) -> Result<Parsed, ClientError> {
    Ok(match template {
        TemplateId::Grm => Parsed::Choice(prompt::parse_choice(raw)?),
        TemplateId::SimilarityCore | TemplateId::SimilarityAll => {
            Parsed::Scores(prompt::parse_scores(raw)?)
        }
        TemplateId::MetaJudge => {
            Parsed::Scores(SimilarityScores::uniform(prompt::parse_scores(raw)?.f1))
        }
        TemplateId::Edit => Parsed::EditedText(raw.to_string()),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub requests: u64,
    pub cache_hits: u64,
}

/// Thread-safe judge handle.
pub struct JudgeClient {
    config: JudgeConfig,
    http: reqwest::blocking::Client,
    cache: Option<DiskCache>,
    in_flight: limit::Semaphore,
    bucket: limit::TokenBucket,
    requests: AtomicU64,
    cache_hits: AtomicU64,
}

impl JudgeClient {
    pub fn new(config: JudgeConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ClientError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let cache = config.cache_dir.as_ref().map(DiskCache::open).transpose()?;
        Ok(JudgeClient {
            in_flight: limit::Semaphore::new(config.max_concurrency),
            bucket: limit::TokenBucket::new(config.requests_per_second, config.burst),
            http,
            cache,
            config,
            requests: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            requests: self.requests.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    /// Render, fetch (cache first) and parse. The raw text is cached even when parsing fails.
    pub fn call(&self, template: TemplateId, b: &Bindings) -> Result<JudgeResponse, ClientError> {
        let (raw, cached) = self.raw_call(template, b)?;
        let parsed = parse_response(template, &raw)?;
        Ok(JudgeResponse {
            raw,
            parsed,
            cached,
        })
    }

    /// Raw judge text plus whether it came from the cache.
    pub fn raw_call(
        &self,
        template: TemplateId,
        b: &Bindings,
    ) -> Result<(String, bool), ClientError> {
        let prompt = prompt::render_prompt(template, b)?;
        let key = cache_key(template, &prompt, &self.config.model);
        if let Some(cache) = &self.cache {
            if let Some(raw) = cache.get(&key, template, &prompt, &self.config.model) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok((raw, true));
            }
        }
        if self.config.offline {
            return Err(ClientError::Offline { key });
        }
        let raw = self.request_with_retries(&prompt)?;
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CacheEntry {
                    template_id: template,
                    model: self.config.model.clone(),
                    prompt,
                    raw: raw.clone(),
                },
            )?;
        }
        Ok((raw, false))
    }

    fn request_with_retries(&self, prompt: &str) -> Result<String, ClientError> {
        let endpoint = self
            .config
            .endpoint
            .as_deref()
            .ok_or(ClientError::NotConfigured)?;
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.request_once(endpoint, prompt) {
                Ok(raw) => return Ok(raw),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) if attempt > self.config.max_retries => {
                    return Err(ClientError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Attempt::Retry(message)) => {
                    log::warn!(
                        "judge attempt {attempt} failed: {message}; retrying in {backoff:?}"
                    );
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(self.config.max_backoff);
                }
            }
        }
    }

    fn request_once(&self, endpoint: &str, prompt: &str) -> Result<String, Attempt> {
        self.bucket.take();
        let _permit = self.in_flight.acquire();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        if let Some(n) = self.config.max_tokens {
            body["max_tokens"] = json!(n);
        }
        let mut req = self.http.post(endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(ClientError::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {text}"),
            }));
        }
        let value: serde_json::Value = resp.json().map_err(|e| Attempt::Retry(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(ClientError::Body(value.to_string())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(ClientError),
}

impl LlmBackend for JudgeClient {
    fn complete(&self, template: TemplateId, b: &Bindings) -> Result<String, JudgeError> {
        Ok(self.raw_call(template, b).map(|(raw, _)| raw)?)
    }
}
