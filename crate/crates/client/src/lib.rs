//! Backend plumbing for the detection harness: the chat-completions wire
//! format, a content-addressed response cache, a blocking client with
//! bounded concurrency and retries, a scripted mock backend, and the
//! record-parallel evaluation pipeline.

pub mod cache;
pub mod client;
pub mod mock;
pub mod pipeline;
pub mod wire;

pub use cache::{CacheError, ResponseCache};
pub use client::{Client, ClientError, ClientOptions};
pub use mock::{Matcher, MatcherSet, MockError, MockScript, MockServer, Reply, ScriptEntry};
pub use pipeline::{run_method, run_probe, ProbeOutput, RecordFailure, RunOutput};
pub use wire::{build_request, parse_response, resolve_image_ref, ChatRequest, WireError};
