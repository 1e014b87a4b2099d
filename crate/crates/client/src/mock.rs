//! Scripted in-process chat-completions backend for offline runs and tests.
//!
//! A script is an ordered list of entries, each with optional matchers over
//! the incoming request and a canned reply. The first entry whose matchers
//! all hold (and whose use budget is not exhausted) answers the request; an
//! entry with no matchers is a catch-all; a request nothing matches gets a
//! 404. Replies are fully deterministic: fixed id, zero timestamp, echoed
//! model name.

use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::wire::COMPLETIONS_PATH;

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("invalid mock script: {0}")]
    BadScript(String),
    #[error("mock server io error: {0}")]
    Io(String),
}

/// Substring conditions against one request. All present fields must match.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_prefill: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

/// One matcher or a conjunction of several.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatcherSet {
    One(Matcher),
    All(Vec<Matcher>),
}

impl MatcherSet {
    fn matchers(&self) -> &[Matcher] {
        match self {
            MatcherSet::One(m) => std::slice::from_ref(m),
            MatcherSet::All(ms) => ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reply {
    pub text: String,
    /// Per-token log probabilities served when the request asks for them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    /// Explicit token texts; must concatenate to `text` and pair 1:1 with
    /// `logprobs`. Without them, `text` is cut into near-equal char chunks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    /// Missing matcher = catch-all.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<MatcherSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<Reply>,
    /// Hold the request open this long before replying; the delay counts
    /// toward in-flight concurrency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
    /// Maximum number of requests this entry may answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<usize>,
    /// HTTP status to reply with; default 200.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

/// Parsed, validated script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, MockError> {
        let script = Self { entries };
        script.validate()?;
        Ok(script)
    }

    /// Parses a JSON array of entries.
    pub fn from_json(text: &str) -> Result<Self, MockError> {
        let script: MockScript =
            serde_json::from_str(text).map_err(|e| MockError::BadScript(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    fn validate(&self) -> Result<(), MockError> {
        for (i, entry) in self.entries.iter().enumerate() {
            let failing_status = entry.status.is_some_and(|s| s >= 400);
            if entry.reply.is_none() && !failing_status {
                return Err(MockError::BadScript(format!(
                    "entry {i}: success entries need a reply"
                )));
            }
            if let Some(reply) = &entry.reply {
                match (&reply.tokens, &reply.logprobs) {
                    (Some(tokens), Some(logprobs)) => {
                        if tokens.len() != logprobs.len() {
                            return Err(MockError::BadScript(format!(
                                "entry {i}: {} tokens but {} logprobs",
                                tokens.len(),
                                logprobs.len()
                            )));
                        }
                        if tokens.concat() != reply.text {
                            return Err(MockError::BadScript(format!(
                                "entry {i}: tokens do not concatenate to the reply text"
                            )));
                        }
                    }
                    (Some(_), None) => {
                        return Err(MockError::BadScript(format!(
                            "entry {i}: tokens given without logprobs"
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

struct MockState {
    entries: Vec<ScriptEntry>,
    /// How many times each entry has answered, index-aligned with `entries`.
    uses: Mutex<Vec<usize>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    total_requests: AtomicUsize,
}

/// Running mock backend. Shuts down on drop.
pub struct MockServer {
    url: String,
    state: Arc<MockState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts on an ephemeral loopback port.
    pub fn start(script: MockScript) -> Result<Self, MockError> {
        Self::start_on(script, "127.0.0.1:0")
    }

    /// Starts on a caller-chosen address, e.g. `127.0.0.1:8080`.
    pub fn start_on(script: MockScript, addr: &str) -> Result<Self, MockError> {
        let listener = TcpListener::bind(addr).map_err(|e| MockError::Io(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| MockError::Io(e.to_string()))?;
        listener.set_nonblocking(true).map_err(|e| MockError::Io(e.to_string()))?;

        let uses = vec![0usize; script.entries.len()];
        let state = Arc::new(MockState {
            entries: script.entries,
            uses: Mutex::new(uses),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            total_requests: AtomicUsize::new(0),
        });

        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app_state = Arc::clone(&state);
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("mock runtime builds");
            runtime.block_on(async move {
                let listener =
                    tokio::net::TcpListener::from_std(listener).expect("listener converts");
                let app = Router::new()
                    .route(COMPLETIONS_PATH, post(handle_completion))
                    .with_state(app_state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async move {
                        let _ = rx.await;
                    })
                    .await
                    .expect("mock server runs");
            });
        });

        Ok(Self {
            url: format!("http://{addr}"),
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Base URL (without the completions path).
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn total_requests(&self) -> usize {
        self.state.total_requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests that were in flight at once, delays
    /// included.
    pub fn peak_in_flight(&self) -> usize {
        self.state.peak_in_flight.load(Ordering::SeqCst)
    }

    /// How many times each script entry answered.
    pub fn entry_uses(&self) -> Vec<usize> {
        self.state.uses.lock().expect("uses lock").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.thread.take() {
            let _ = handle.join();
        }
    }
}

/// Searchable facets of one incoming request.
#[derive(Default)]
struct RequestFacets {
    model: String,
    system: String,
    user_text: String,
    assistant_prefill: String,
    image_data: String,
    want_logprobs: bool,
}

fn extract_facets(body: &Value) -> RequestFacets {
    let mut f = RequestFacets {
        model: body.get("model").and_then(Value::as_str).unwrap_or_default().to_string(),
        want_logprobs: body.get("logprobs").and_then(Value::as_bool).unwrap_or(false),
        ..Default::default()
    };
    for message in body.get("messages").and_then(Value::as_array).into_iter().flatten() {
        let role = message.get("role").and_then(Value::as_str).unwrap_or_default();
        let content = message.get("content");
        match role {
            "system" => {
                if let Some(s) = content.and_then(Value::as_str) {
                    f.system.push_str(s);
                }
            }
            "assistant" => {
                if let Some(s) = content.and_then(Value::as_str) {
                    f.assistant_prefill.push_str(s);
                }
            }
            "user" => match content {
                Some(Value::String(s)) => f.user_text.push_str(s),
                Some(Value::Array(parts)) => {
                    for part in parts {
                        match part.get("type").and_then(Value::as_str) {
                            Some("text") => {
                                if let Some(t) = part.get("text").and_then(Value::as_str) {
                                    f.user_text.push_str(t);
                                }
                            }
                            Some("image_url") => {
                                if let Some(u) = part
                                    .get("image_url")
                                    .and_then(|iu| iu.get("url"))
                                    .and_then(Value::as_str)
                                {
                                    f.image_data.push_str(u);
                                }
                            }
                            _ => {}
                        }
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }
    f
}

fn matcher_holds(matcher: &Matcher, facets: &RequestFacets) -> bool {
    let contains = |field: &Option<String>, haystack: &str| {
        field.as_ref().is_none_or(|needle| haystack.contains(needle.as_str()))
    };
    contains(&matcher.system, &facets.system)
        && contains(&matcher.user_text, &facets.user_text)
        && contains(&matcher.assistant_prefill, &facets.assistant_prefill)
        && contains(&matcher.image_data, &facets.image_data)
        && contains(&matcher.model, &facets.model)
}

/// Picks the first matching entry with budget left, consuming one use.
fn select_entry(state: &MockState, facets: &RequestFacets) -> Option<ScriptEntry> {
    let mut uses = state.uses.lock().expect("uses lock");
    for (i, entry) in state.entries.iter().enumerate() {
        if let Some(limit) = entry.times {
            if uses[i] >= limit {
                continue;
            }
        }
        let matched = entry
            .matcher
            .as_ref()
            .is_none_or(|set| set.matchers().iter().all(|m| matcher_holds(m, facets)));
        if matched {
            uses[i] += 1;
            return Some(entry.clone());
        }
    }
    None
}

/// Cuts text into `n` chunks of near-equal character count whose
/// concatenation is exactly the input.
fn char_chunks(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let base = chars.len() / n;
    let rem = chars.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut cursor = 0;
    for i in 0..n {
        let take = base + usize::from(i < rem);
        out.push(chars[cursor..cursor + take].iter().collect());
        cursor += take;
    }
    out
}

/// Cuts text into word chunks: each chunk is a whitespace run glued to the
/// word before it, so the chunks concatenate back to the input.
fn word_chunks(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut prev_was_ws = false;
    for c in text.chars() {
        if !c.is_whitespace() && prev_was_ws && !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        current.push(c);
        prev_was_ws = c.is_whitespace();
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn token_payload(reply: &Reply) -> Value {
    let pairs: Vec<(String, f64)> = match (&reply.tokens, &reply.logprobs) {
        (Some(tokens), Some(logprobs)) => {
            tokens.iter().cloned().zip(logprobs.iter().copied()).collect()
        }
        (None, Some(logprobs)) => char_chunks(&reply.text, logprobs.len())
            .into_iter()
            .zip(logprobs.iter().copied())
            .collect(),
        _ => word_chunks(&reply.text).into_iter().map(|t| (t, -0.5)).collect(),
    };
    json!({
        "content": pairs
            .into_iter()
            .map(|(token, logprob)| json!({"token": token, "logprob": logprob}))
            .collect::<Vec<_>>()
    })
}

struct InFlightGuard(Arc<MockState>);

impl Drop for InFlightGuard {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn handle_completion(State(state): State<Arc<MockState>>, body: String) -> Response {
    state.total_requests.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    let _guard = InFlightGuard(Arc::clone(&state));

    let parsed: Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({"error": {"message": format!("invalid request JSON: {e}")}})),
            )
                .into_response();
        }
    };
    let facets = extract_facets(&parsed);

    let Some(entry) = select_entry(&state, &facets) else {
        return (
            StatusCode::NOT_FOUND,
            Json(json!({"error": {"message": "no scripted reply matches request"}})),
        )
            .into_response();
    };

    if let Some(ms) = entry.delay_ms {
        tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
    }

    let status = entry.status.unwrap_or(200);
    if status >= 400 {
        let message = entry
            .reply
            .as_ref()
            .map(|r| r.text.clone())
            .unwrap_or_else(|| "scripted error".to_string());
        let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (code, Json(json!({"error": {"message": message}}))).into_response();
    }

    let reply = entry.reply.expect("validated: success entries carry a reply");
    let logprobs = facets.want_logprobs.then(|| token_payload(&reply));
    let response = json!({
        "id": "mock",
        "object": "chat.completion",
        "created": 0,
        "model": facets.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": reply.text},
            "finish_reason": "stop",
            "logprobs": logprobs,
        }]
    });
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::OK);
    (code, Json(response)).into_response()
}
