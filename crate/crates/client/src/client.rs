//! Blocking backend client with bounded concurrency, retry with exponential
//! backoff, and transparent response caching.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use aidet_core::{ChatTranscript, DecodeParams, ModelResponse};

use crate::cache::{CacheError, ResponseCache};
use crate::wire::{build_request, parse_response, WireError, COMPLETIONS_PATH};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request construction failed: {0}")]
    Wire(#[from] WireError),
    #[error("cache failure: {0}")]
    Cache(#[from] CacheError),
    #[error("backend refused request {digest}: status {status}: {message}")]
    Refusal { digest: String, status: u16, message: String },
    #[error("request {digest} failed after {attempts} attempts: {message}")]
    Exhausted { digest: String, attempts: u32, message: String },
    #[error("backend response for request {digest} is malformed: {message}")]
    Malformed { digest: String, message: String },
}

impl ClientError {
    /// Digest of the request that failed, when one was built.
    pub fn digest(&self) -> Option<&str> {
        match self {
            ClientError::Refusal { digest, .. }
            | ClientError::Exhausted { digest, .. }
            | ClientError::Malformed { digest, .. } => Some(digest),
            ClientError::Wire(_) | ClientError::Cache(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Base URL without the completions path, e.g. `http://127.0.0.1:8080`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Upper bound on simultaneous in-flight requests.
    pub max_in_flight: usize,
    /// Retry attempts after the first try, for transport errors and
    /// retryable statuses (429 and 5xx) only.
    pub retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            api_key: None,
            model: "default".into(),
            max_in_flight: 4,
            retries: 2,
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Counting semaphore; fair enough for a bounded worker pool.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), available: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore lock");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

/// Chat-completions client. Cache hits short-circuit before the concurrency
/// gate, so warm replays issue no network calls at all.
pub struct Client {
    options: ClientOptions,
    http: reqwest::blocking::Client,
    cache: Option<ResponseCache>,
    semaphore: Semaphore,
    network_calls: AtomicU64,
}

impl Client {
    pub fn new(options: ClientOptions, cache: Option<ResponseCache>) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .expect("http client builds");
        let semaphore = Semaphore::new(options.max_in_flight);
        Self { options, http, cache, semaphore, network_calls: AtomicU64::new(0) }
    }

    pub fn options(&self) -> &ClientOptions {
        &self.options
    }

    /// Number of HTTP requests actually sent (each retry counts once).
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Completes a transcript, returning the cached response when one exists
    /// for the exact request bytes.
    pub fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &DecodeParams,
    ) -> Result<ModelResponse, ClientError> {
        let request = build_request(&self.options.model, transcript, params)?;
        let body = request.canonical_json();
        let digest = request.digest();

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&digest)? {
                return Ok(hit);
            }
        }

        let _permit = self.semaphore.acquire();
        let url = format!("{}{}", self.options.base_url.trim_end_matches('/'), COMPLETIONS_PATH);
        let attempts = self.options.retries + 1;
        let mut last_failure = String::new();

        for attempt in 1..=attempts {
            if attempt > 1 {
                let factor = 1u32 << (attempt - 2).min(16);
                std::thread::sleep(self.options.backoff_base * factor);
            }
            self.network_calls.fetch_add(1, Ordering::Relaxed);

            let mut req = self
                .http
                .post(&url)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone());
            if let Some(key) = &self.options.api_key {
                req = req.bearer_auth(key);
            }

            let response = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last_failure = format!("transport error: {e}");
                    continue;
                }
            };
            let status = response.status();
            let text = match response.text() {
                Ok(t) => t,
                Err(e) => {
                    last_failure = format!("failed reading response body: {e}");
                    continue;
                }
            };

            if status.is_success() {
                let parsed = parse_response(&text).map_err(|e| ClientError::Malformed {
                    digest: digest.clone(),
                    message: e.to_string(),
                })?;
                if let Some(cache) = &self.cache {
                    cache.put(&digest, &self.options.model, &parsed)?;
                }
                return Ok(parsed);
            }

            let retryable = status.as_u16() == 429 || status.is_server_error();
            if !retryable {
                return Err(ClientError::Refusal {
                    digest,
                    status: status.as_u16(),
                    message: snippet(&text),
                });
            }
            last_failure = format!("status {}: {}", status.as_u16(), snippet(&text));
        }

        Err(ClientError::Exhausted { digest, attempts, message: last_failure })
    }
}

fn snippet(text: &str) -> String {
    const LIMIT: usize = 200;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let mut end = LIMIT;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}
