//! Scripted backends for offline runs and tests.
//!
//! A script is a JSON file holding a list of entries. Each entry has
//! optional match keys and either a reply or an `error` of `"timeout"` or
//! `"transport"`. The first entry whose keys all match wins, so put specific
//! entries before catch-alls.
//!
//! ```json
//! {"responses": [
//!   {"turn": 1, "text": "<think>..</think><answer>..</answer>"},
//!   {"turn": 2, "rollout": 1, "error": "timeout"},
//!   {"turn": 2, "text": "..."}
//! ]}
//! ```

use std::path::Path;

use serde::Deserialize;

use super::{
    BackendError, CallContext, PolicyBackend, PolicyRequest, PolicyResponse, ScoreRequest, ScoreResponse, ToolBackend,
    ToolRequest, ToolResponse,
};
use crate::io::{read_json, JsonlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFault {
    Timeout,
    Transport,
}

impl ScriptedFault {
    fn to_error(self) -> BackendError {
        match self {
            ScriptedFault::Timeout => BackendError::Timeout,
            ScriptedFault::Transport => BackendError::Transport(String::from("scripted transport fault")),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Keys {
    image_id: Option<String>,
    rollout: Option<usize>,
    fingerprint: Option<String>,
}

impl Keys {
    fn matches(&self, ctx: &CallContext, fingerprint: &str) -> bool {
        self.image_id.as_deref().is_none_or(|id| id == ctx.image_id)
            && self.rollout.is_none_or(|r| r == ctx.rollout_index)
            && self.fingerprint.as_deref().is_none_or(|f| f == fingerprint)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyEntry {
    turn: Option<u8>,
    image_id: Option<String>,
    rollout: Option<usize>,
    fingerprint: Option<String>,
    text: Option<String>,
    logprobs: Option<Vec<f64>>,
    error: Option<ScriptedFault>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyScript {
    responses: Vec<PolicyEntry>,
    /// Per-token log-probs returned by the scorer, whatever the input.
    #[serde(default)]
    score_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error(transparent)]
    Read(#[from] JsonlError),
    #[error("script entry {0} needs exactly one of a reply or `error`")]
    Ambiguous(usize),
}

#[derive(Debug, Clone)]
pub struct MockPolicy {
    entries: Vec<(Option<u8>, Keys, Result<PolicyResponse, ScriptedFault>)>,
    score_logprobs: Option<Vec<f64>>,
}

impl MockPolicy {
    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let script: PolicyScript = read_json(path)?;
        let mut entries = Vec::with_capacity(script.responses.len());
        for (i, e) in script.responses.into_iter().enumerate() {
            let reply = match (e.text, e.error) {
                (Some(text), None) => Ok(PolicyResponse {
                    text,
                    logprobs: e.logprobs,
                }),
                (None, Some(fault)) => Err(fault),
                _ => return Err(ScriptError::Ambiguous(i)),
            };
            let keys = Keys {
                image_id: e.image_id,
                rollout: e.rollout,
                fingerprint: e.fingerprint,
            };
            entries.push((e.turn, keys, reply));
        }
        Ok(Self {
            entries,
            score_logprobs: script.score_logprobs,
        })
    }

    /// Answers turn 1 and turn 2 with fixed texts.
    pub fn fixed(turn1: &str, turn2: &str) -> Self {
        let reply = |t: &str| {
            Ok(PolicyResponse {
                text: t.to_owned(),
                logprobs: None,
            })
        };
        Self {
            entries: vec![
                (Some(1), Keys::default(), reply(turn1)),
                (Some(2), Keys::default(), reply(turn2)),
            ],
            score_logprobs: None,
        }
    }
}

impl PolicyBackend for MockPolicy {
    fn generate(&self, request: &PolicyRequest, ctx: &CallContext) -> Result<PolicyResponse, BackendError> {
        let fp = request.fingerprint();
        self.entries
            .iter()
            .find(|(turn, keys, _)| turn.is_none_or(|t| t == ctx.turn) && keys.matches(ctx, &fp))
            .ok_or_else(|| {
                BackendError::Unscripted(format!(
                    "policy turn {} of {}#{}",
                    ctx.turn, ctx.image_id, ctx.rollout_index
                ))
            })?
            .2
            .clone()
            .map_err(ScriptedFault::to_error)
    }

    fn score(&self, _: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        self.score_logprobs
            .clone()
            .map(|logprobs| ScoreResponse { logprobs })
            .ok_or_else(|| BackendError::Unscripted(String::from("scorer")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolEntry {
    tool: Option<String>,
    image_id: Option<String>,
    rollout: Option<usize>,
    fingerprint: Option<String>,
    #[serde(default)]
    texts: Vec<String>,
    #[serde(default)]
    images: Vec<String>,
    success: Option<bool>,
    error: Option<ScriptedFault>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolScript {
    responses: Vec<ToolEntry>,
}

#[derive(Debug, Clone)]
pub struct MockTools {
    entries: Vec<(Option<String>, Keys, Result<ToolResponse, ScriptedFault>)>,
}

impl MockTools {
    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let script: ToolScript = read_json(path)?;
        let mut entries = Vec::with_capacity(script.responses.len());
        for (i, e) in script.responses.into_iter().enumerate() {
            let reply = match (e.success, e.error) {
                (Some(success), None) => Ok(ToolResponse {
                    texts: e.texts,
                    images: e.images,
                    success,
                }),
                (None, Some(fault)) => Err(fault),
                _ => return Err(ScriptError::Ambiguous(i)),
            };
            let keys = Keys {
                image_id: e.image_id,
                rollout: e.rollout,
                fingerprint: e.fingerprint,
            };
            entries.push((e.tool, keys, reply));
        }
        Ok(Self { entries })
    }

    /// Every tool times out.
    pub fn always_timeout() -> Self {
        Self {
            entries: vec![(None, Keys::default(), Err(ScriptedFault::Timeout))],
        }
    }

    /// Every tool succeeds with one line of text.
    pub fn echo() -> Self {
        Self {
            entries: vec![(
                None,
                Keys::default(),
                Ok(ToolResponse {
                    texts: vec![String::from("scripted evidence")],
                    images: vec![],
                    success: true,
                }),
            )],
        }
    }
}

impl ToolBackend for MockTools {
    fn execute(&self, request: &ToolRequest, ctx: &CallContext) -> Result<ToolResponse, BackendError> {
        let fp = request.fingerprint();
        self.entries
            .iter()
            .find(|(tool, keys, _)| tool.as_deref().is_none_or(|t| t == request.tool) && keys.matches(ctx, &fp))
            .ok_or_else(|| BackendError::Unscripted(format!("tool `{}` for {}", request.tool, ctx.image_id)))?
            .2
            .clone()
            .map_err(ScriptedFault::to_error)
    }
}
