//! Policy and tool backends and their JSON wire types.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Text,
    Image,
}

/// Text, or an image reference (path or `artifact:` name).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub kind: PartKind,
    pub value: String,
}

impl Part {
    pub fn text(value: impl Into<String>) -> Self {
        Self {
            kind: PartKind::Text,
            value: value.into(),
        }
    }

    pub fn image(reference: impl Into<String>) -> Self {
        Self {
            kind: PartKind::Image,
            value: reference.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn new(role: &str, parts: Vec<Part>) -> Self {
        Self {
            role: role.to_owned(),
            parts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub messages: Vec<Message>,
    pub sampling: Sampling,
    pub want_logprobs: bool,
}

impl PolicyRequest {
    /// SHA-256 of the request's JSON encoding; used to key scripted replies.
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt_parts: Vec<Part>,
    pub completion_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool: String,
    pub args: serde_json::Value,
    pub images: Vec<String>,
}

impl ToolRequest {
    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolResponse {
    #[serde(default)]
    pub texts: Vec<String>,
    #[serde(default)]
    pub images: Vec<String>,
    pub success: bool,
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    // serde_json::Value objects are BTreeMap-backed, so key order is canonical.
    let canonical = serde_json::to_value(value).and_then(|v| serde_json::to_vec(&v)).unwrap_or_default();
    hex::encode(Sha256::digest(&canonical))
}

/// Which call this is, for backends that key replies on position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    pub image_id: String,
    pub rollout_index: usize,
    /// 1 or 2 for policy calls; 0 for tools.
    pub turn: u8,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("bad response: {0}")]
    Protocol(String),
    #[error("no scripted response for {0}")]
    Unscripted(String),
}

impl BackendError {
    /// Worth another attempt.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout)
    }
}

pub trait PolicyBackend: Send + Sync {
    fn generate(&self, request: &PolicyRequest, ctx: &CallContext) -> Result<PolicyResponse, BackendError>;
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError>;
}

/// Remote executor for generative and retrieval tools. Cropping never goes
/// through here.
pub trait ToolBackend: Send + Sync {
    fn execute(&self, request: &ToolRequest, ctx: &CallContext) -> Result<ToolResponse, BackendError>;
}

/// Used when no tool backend is configured: every remote tool fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTools;

impl ToolBackend for NoTools {
    fn execute(&self, request: &ToolRequest, _: &CallContext) -> Result<ToolResponse, BackendError> {
        Err(BackendError::Unscripted(format!("tool `{}` (no tool backend)", request.tool)))
    }
}
