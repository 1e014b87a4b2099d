//! Chat-completions wire format: request construction with image inlining,
//! canonical serialization for cache keys, and response parsing.
//!
//! Requests are serialized exactly once — the canonical JSON string is what
//! goes on the wire and what the cache digest covers, so a cache key always
//! corresponds byte for byte to a request body.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use aidet_core::{ChatTranscript, DecodeParams, ModelResponse, TokenLogprob, UserPart};

pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("cannot read image {path}: {message}")]
    ImageRead { path: String, message: String },
    #[error("response carries no choices")]
    EmptyChoices,
    #[error("malformed response body: {0}")]
    BadJson(String),
}

/// Request body. Field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: i64,
    /// Per-token log probabilities; omitted from the wire unless requested.
    #[serde(default, skip_serializing_if = "is_false")]
    pub logprobs: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

/// String content for system/assistant messages, structured parts for user
/// messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    ImageUrl { image_url: ImageUrl },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

impl ChatRequest {
    /// Canonical single-line JSON; this exact string is sent as the request
    /// body.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    /// Lowercase hex SHA-256 of the canonical body; the cache key.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Builds the wire request for a transcript, inlining local image files as
/// base64 data URLs. `http(s)` and `data:` references pass through verbatim.
pub fn build_request(
    model: &str,
    transcript: &ChatTranscript,
    params: &DecodeParams,
) -> Result<ChatRequest, WireError> {
    let mut messages = Vec::with_capacity(3);
    if let Some(system) = &transcript.system {
        messages.push(ChatMessage {
            role: "system".into(),
            content: MessageContent::Text(system.clone()),
        });
    }
    let parts = transcript
        .user
        .iter()
        .map(|part| {
            Ok(match part {
                UserPart::Image { image_ref } => ContentPart::ImageUrl {
                    image_url: ImageUrl { url: resolve_image_ref(image_ref)? },
                },
                UserPart::Text { text } => ContentPart::Text { text: text.clone() },
            })
        })
        .collect::<Result<Vec<_>, WireError>>()?;
    messages.push(ChatMessage { role: "user".into(), content: MessageContent::Parts(parts) });
    if let Some(prefill) = &transcript.assistant_prefill {
        messages.push(ChatMessage {
            role: "assistant".into(),
            content: MessageContent::Text(prefill.clone()),
        });
    }
    Ok(ChatRequest {
        model: model.to_string(),
        messages,
        temperature: params.temperature,
        max_tokens: params.max_tokens,
        seed: params.seed,
        logprobs: params.want_logprobs,
    })
}

/// Passes URL-like references through and inlines everything else from disk.
pub fn resolve_image_ref(image_ref: &str) -> Result<String, WireError> {
    if image_ref.starts_with("http://")
        || image_ref.starts_with("https://")
        || image_ref.starts_with("data:")
    {
        return Ok(image_ref.to_string());
    }
    let bytes = std::fs::read(image_ref).map_err(|e| WireError::ImageRead {
        path: image_ref.to_string(),
        message: e.to_string(),
    })?;
    let mime = mime_for_path(Path::new(image_ref));
    Ok(format!("data:{mime};base64,{}", BASE64.encode(bytes)))
}

fn mime_for_path(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/png",
    }
}

/// Response body subset the harness consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub model: String,
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Choice {
    pub message: ChoiceMessage,
    #[serde(default)]
    pub finish_reason: Option<String>,
    #[serde(default)]
    pub logprobs: Option<LogprobsPayload>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiceMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogprobsPayload {
    #[serde(default)]
    pub content: Vec<TokenEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenEntry {
    pub token: String,
    pub logprob: f64,
}

/// Parses a response body into the backend-agnostic [`ModelResponse`].
pub fn parse_response(body: &str) -> Result<ModelResponse, WireError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| WireError::BadJson(e.to_string()))?;
    let choice = resp.choices.into_iter().next().ok_or(WireError::EmptyChoices)?;
    let tokens = choice
        .logprobs
        .map(|lp| {
            lp.content
                .into_iter()
                .map(|t| TokenLogprob { token: t.token, logprob: t.logprob })
                .collect()
        })
        .unwrap_or_default();
    Ok(ModelResponse {
        text: choice.message.content.unwrap_or_default(),
        tokens,
        finish_reason: choice.finish_reason.unwrap_or_default(),
        model_id: resp.model,
    })
}
