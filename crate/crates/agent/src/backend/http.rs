//! JSON-over-HTTP backends.
//!
//! Endpoints, relative to the configured base URL:
//! `POST /generate` ([`PolicyRequest`] → [`PolicyResponse`]),
//! `POST /score` ([`ScoreRequest`] → [`ScoreResponse`]),
//! `POST /tool` ([`ToolRequest`] → [`ToolResponse`]).
//! Local image references are inlined as `data:image/png;base64,...` before
//! sending, since the remote side cannot see our filesystem.

use std::time::Duration;

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    BackendError, CallContext, Part, PartKind, PolicyBackend, PolicyRequest, PolicyResponse, ScoreRequest,
    ScoreResponse, ToolBackend, ToolRequest, ToolResponse,
};
use crate::artifacts::ArtifactStore;

#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base, path);
        let response = self.agent.post(&url).send_json(body).map_err(map_error)?;
        response
            .into_body()
            .read_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

fn map_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(code) if code >= 500 => BackendError::Transport(format!("http status {code}")),
        ureq::Error::StatusCode(code) => BackendError::Protocol(format!("http status {code}")),
        other => BackendError::Transport(other.to_string()),
    }
}

fn inline(store: &ArtifactStore, reference: &str) -> Result<String, BackendError> {
    if reference.starts_with("data:") || reference.starts_with("http://") || reference.starts_with("https://") {
        return Ok(reference.to_owned());
    }
    let bytes = store
        .read_bytes(reference)
        .map_err(|e| BackendError::Protocol(format!("cannot read image `{reference}`: {e}")))?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

fn inline_parts(store: &ArtifactStore, parts: &[Part]) -> Result<Vec<Part>, BackendError> {
    parts
        .iter()
        .map(|p| match p.kind {
            PartKind::Text => Ok(p.clone()),
            PartKind::Image => Ok(Part::image(inline(store, &p.value)?)),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HttpPolicy {
    client: HttpClient,
    store: ArtifactStore,
}

impl HttpPolicy {
    pub fn new(client: HttpClient, store: ArtifactStore) -> Self {
        Self { client, store }
    }
}

impl PolicyBackend for HttpPolicy {
    fn generate(&self, request: &PolicyRequest, _: &CallContext) -> Result<PolicyResponse, BackendError> {
        let mut wire = request.clone();
        for m in &mut wire.messages {
            m.parts = inline_parts(&self.store, &m.parts)?;
        }
        self.client.post("/generate", &wire)
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let wire = ScoreRequest {
            prompt_parts: inline_parts(&self.store, &request.prompt_parts)?,
            completion_text: request.completion_text.clone(),
        };
        self.client.post("/score", &wire)
    }
}

/// Remote tools. Images returned by the service are stored locally so
/// trajectories only ever hold `artifact:` references.
#[derive(Debug, Clone)]
pub struct HttpTools {
    client: HttpClient,
    store: ArtifactStore,
}

impl HttpTools {
    pub fn new(client: HttpClient, store: ArtifactStore) -> Self {
        Self { client, store }
    }

    fn localize(&self, reference: &str) -> Result<String, BackendError> {
        let Some(payload) = reference.strip_prefix("data:image/png;base64,") else {
            return Ok(reference.to_owned());
        };
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(payload)
            .map_err(|e| BackendError::Protocol(format!("bad inline image: {e}")))?;
        self.store
            .put_png(&bytes)
            .map_err(|e| BackendError::Protocol(format!("cannot store tool image: {e}")))
    }
}

impl ToolBackend for HttpTools {
    fn execute(&self, request: &ToolRequest, _: &CallContext) -> Result<ToolResponse, BackendError> {
        let wire = ToolRequest {
            tool: request.tool.clone(),
            args: request.args.clone(),
            images: request
                .images
                .iter()
                .map(|r| inline(&self.store, r))
                .collect::<Result<_, _>>()?,
        };
        let mut response: ToolResponse = self.client.post("/tool", &wire)?;
        response.images = response
            .images
            .iter()
            .map(|r| self.localize(r))
            .collect::<Result<_, _>>()?;
        Ok(response)
    }
}
