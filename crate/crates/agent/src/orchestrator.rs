//! Two-turn rollouts: perceive and pick tools, run tools, answer, score.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use hoi_core::datagen::{Candidate, ImageDims, PackagedTrajectory};
use hoi_core::grpo::RolloutGroup;
use hoi_core::protocol::{self, Detection, ToolKind, Turn1Decision};
use hoi_core::reward::{
    predictions_from_turn2, total_reward, RewardBreakdown, RewardConfig, SimilarityProvider, ToolInvocation,
    TrajectoryInputs,
};
use hoi_core::{BBox, Category, HoiTriplet, Vocabulary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::ArtifactStore;
use crate::backend::{
    BackendError, CallContext, Message, PolicyBackend, PolicyRequest, PolicyResponse, Sampling, ToolBackend,
    ToolRequest, ToolResponse,
};
use crate::config::RolloutConfig;
use crate::prompts::{self, Evidence};

/// Machine-readable cause of a failed rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailReason {
    /// Transient policy failures outlasted the retries.
    Transport { turn: u8, message: String },
    /// The policy backend refused or answered nonsense.
    Backend { turn: u8, message: String },
    /// Label similarity could not be computed.
    Similarity { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum WorkflowState {
    Init,
    Turn1Requested,
    Turn1Parsed,
    ToolsExecuting,
    Turn2Requested,
    Turn2Parsed,
    Scored,
    Failed { reason: FailReason },
}

impl WorkflowState {
    fn rank(&self) -> Option<u8> {
        Some(match self {
            WorkflowState::Init => 0,
            WorkflowState::Turn1Requested => 1,
            WorkflowState::Turn1Parsed => 2,
            WorkflowState::ToolsExecuting => 3,
            WorkflowState::Turn2Requested => 4,
            WorkflowState::Turn2Parsed => 5,
            WorkflowState::Scored => 6,
            WorkflowState::Failed { .. } => return None,
        })
    }

    /// Steps go strictly forward one at a time; anything but `Failed` may
    /// fail; `Failed` is absorbing.
    pub fn can_advance_to(&self, next: &WorkflowState) -> bool {
        match (self.rank(), next.rank()) {
            (None, _) => false,
            (Some(6), None) => false,
            (Some(_), None) => true,
            (Some(a), Some(b)) => b == a + 1,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, WorkflowState::Scored | WorkflowState::Failed { .. })
    }
}

/// One tool invocation as recorded in a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub tool: ToolKind,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall time; kept out of files so replays stay byte-identical.
    #[serde(skip)]
    pub latency: Duration,
}

/// Full record of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub image_id: String,
    pub rollout_index: usize,
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub history: Vec<WorkflowState>,
    pub turn1_prompt: String,
    #[serde(default)]
    pub turn1_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn1: Option<Turn1Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn1_error: Option<String>,
    #[serde(default)]
    pub tools: Vec<ToolRecord>,
    #[serde(default)]
    pub turn2_prompt: String,
    #[serde(default)]
    pub turn2_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn2_error: Option<String>,
    #[serde(default)]
    pub predictions: Vec<HoiTriplet>,
    #[serde(default)]
    pub ground_truth: Vec<HoiTriplet>,
    pub reward: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn1_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn2_logprobs: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn state(&self) -> &WorkflowState {
        self.history.last().expect("history starts at Init")
    }

    pub fn is_scored(&self) -> bool {
        matches!(self.state(), WorkflowState::Scored)
    }

    fn advance(&mut self, next: WorkflowState) {
        assert!(
            self.state().can_advance_to(&next),
            "illegal transition {:?} -> {next:?}",
            self.state()
        );
        self.history.push(next);
    }

    fn fail(&mut self, reason: FailReason) {
        self.advance(WorkflowState::Failed { reason });
        self.reward = RewardBreakdown::zero(self.ground_truth.len());
    }

    /// Category of the first prediction that matched ground truth.
    pub fn primary_category(&self) -> Option<Category> {
        let &(p, _) = self.reward.matching.hits.first()?;
        self.predictions.get(p).map(HoiTriplet::category)
    }

    pub fn package(&self) -> PackagedTrajectory {
        let decision = self.turn1.clone().unwrap_or_else(Turn1Decision::empty);
        PackagedTrajectory {
            image_id: self.image_id.clone(),
            detected_objects: decision.detections().to_vec(),
            selected_tools: decision.tools().to_vec(),
            first_turn_output: self.turn1_output.clone(),
            second_turn_output: self.turn2_output.clone(),
            first_turn_prompt: self.turn1_prompt.clone(),
            second_turn_prompt: self.turn2_prompt.clone(),
        }
    }

    pub fn to_candidate(&self) -> Candidate {
        Candidate {
            trajectory: self.package(),
            dims: ImageDims {
                width: self.width,
                height: self.height,
            },
            tp: self.reward.tp,
            category: self.primary_category(),
        }
    }
}

/// One image to roll out on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub image_id: String,
    /// Path (or `artifact:` reference) of the original image.
    pub image: String,
    pub width: f64,
    pub height: f64,
    #[serde(default = "default_query")]
    pub query: String,
    #[serde(default)]
    pub ground_truth: Vec<HoiTriplet>,
}

fn default_query() -> String {
    String::from(prompts::DEFAULT_QUERY)
}

/// Backends and shared state a rollout needs.
pub struct Services<'a> {
    pub policy: &'a dyn PolicyBackend,
    pub tools: &'a dyn ToolBackend,
    pub similarity: &'a (dyn SimilarityProvider + Sync),
    pub store: &'a ArtifactStore,
    pub vocab: &'a Vocabulary,
    pub reward: &'a RewardConfig,
}

fn with_retries<T>(retries: u32, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
    let mut attempt = 0;
    loop {
        match call() {
            Err(e) if e.is_transient() && attempt < retries => {
                log::debug!("retrying after {e}");
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Regions worth zooming into: the hull of each person/object pair, or the
/// detections themselves when there are no pairs. At most `cap`, deduplicated.
pub fn crop_regions(detections: &[Detection], cap: usize) -> Vec<BBox> {
    let is_person = |d: &&Detection| d.label.as_str() == "person";
    let people: Vec<&Detection> = detections.iter().filter(is_person).collect();
    let objects: Vec<&Detection> = detections.iter().filter(|d| !is_person(d)).collect();
    let mut regions = Vec::new();
    for p in &people {
        for o in &objects {
            regions.push(p.bbox.union_hull(&o.bbox));
        }
    }
    if regions.is_empty() {
        regions = detections.iter().map(|d| d.bbox).collect();
    }
    let mut unique: Vec<BBox> = Vec::new();
    for r in regions {
        if !unique.contains(&r) {
            unique.push(r);
        }
        if unique.len() == cap {
            break;
        }
    }
    unique
}

fn run_crop(query: &Query, decision: &Turn1Decision, svc: &Services<'_>, cfg: &RolloutConfig, ev: &mut Evidence) -> ToolRecord {
    let mut images = Vec::new();
    let mut errors = Vec::new();
    for region in crop_regions(decision.detections(), cfg.max_crops) {
        match svc.store.crop(&query.image, region) {
            Ok(r) => {
                ev.crops.push((region, r.clone()));
                images.push(r);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if images.is_empty() && errors.is_empty() {
        errors.push(String::from("no regions to crop"));
    }
    ToolRecord {
        tool: ToolKind::ImageCrop,
        success: !images.is_empty(),
        texts: Vec::new(),
        images,
        error: (!errors.is_empty()).then(|| errors.join("; ")),
        latency: Duration::ZERO,
    }
}

fn run_remote(
    tool: ToolKind,
    query: &Query,
    decision: &Turn1Decision,
    svc: &Services<'_>,
    cfg: &RolloutConfig,
    ctx: &CallContext,
    ev: &mut Evidence,
) -> ToolRecord {
    let request = ToolRequest {
        tool: tool.as_str().to_owned(),
        args: serde_json::json!({
            "query": query.query,
            "detections": decision.detections(),
        }),
        images: vec![query.image.clone()],
    };
    match with_retries(cfg.retries, || svc.tools.execute(&request, ctx)) {
        Ok(ToolResponse { texts, images, success }) => {
            if success {
                if tool.is_generative() {
                    ev.generated.extend(images.iter().map(|i| (tool, i.clone())));
                }
                ev.notes.extend(texts.iter().map(|t| (tool, t.clone())));
            }
            ToolRecord {
                tool,
                success,
                texts,
                images,
                error: None,
                latency: Duration::ZERO,
            }
        }
        Err(e) => ToolRecord {
            tool,
            success: false,
            texts: Vec::new(),
            images: Vec::new(),
            error: Some(e.to_string()),
            latency: Duration::ZERO,
        },
    }
}

fn generate(
    svc: &Services<'_>,
    cfg: &RolloutConfig,
    messages: Vec<Message>,
    seed: u64,
    ctx: &CallContext,
) -> Result<PolicyResponse, FailReason> {
    let request = PolicyRequest {
        messages,
        sampling: Sampling {
            temperature: cfg.temperature,
            max_tokens: cfg.max_generation_tokens,
            seed,
        },
        want_logprobs: cfg.want_logprobs,
    };
    with_retries(cfg.retries, || svc.policy.generate(&request, ctx)).map_err(|e| {
        if e.is_transient() {
            FailReason::Transport {
                turn: ctx.turn,
                message: e.to_string(),
            }
        } else {
            FailReason::Backend {
                turn: ctx.turn,
                message: e.to_string(),
            }
        }
    })
}

/// Runs one rollout to `Scored` or `Failed`. Never panics on backend or
/// model misbehaviour; a failed rollout carries a zero reward.
pub fn run_rollout(query: &Query, svc: &Services<'_>, cfg: &RolloutConfig, rollout_index: usize, seed: u64) -> Trajectory {
    let turn1_msg = prompts::turn1_message(svc.vocab, &query.image, query.width, query.height);
    let mut t = Trajectory {
        image_id: query.image_id.clone(),
        rollout_index,
        seed,
        width: query.width,
        height: query.height,
        history: vec![WorkflowState::Init],
        turn1_prompt: prompts::render_prompt(&turn1_msg),
        turn1_output: String::new(),
        turn1: None,
        turn1_error: None,
        tools: Vec::new(),
        turn2_prompt: String::new(),
        turn2_output: String::new(),
        turn2_error: None,
        predictions: Vec::new(),
        ground_truth: query.ground_truth.clone(),
        reward: RewardBreakdown::zero(query.ground_truth.len()),
        turn1_logprobs: None,
        turn2_logprobs: None,
    };
    let ctx = |turn| CallContext {
        image_id: query.image_id.clone(),
        rollout_index,
        turn,
    };

    t.advance(WorkflowState::Turn1Requested);
    let first = match generate(svc, cfg, vec![turn1_msg.clone()], seed, &ctx(1)) {
        Ok(r) => r,
        Err(reason) => {
            t.fail(reason);
            return t;
        }
    };
    t.turn1_output = first.text.clone();
    t.turn1_logprobs = first.logprobs;

    let parsed = protocol::extract_envelope(&first.text).and_then(|e| protocol::parse_turn1(&e.answer));
    let decision = match parsed {
        Ok(d) => {
            t.turn1 = Some(d.clone());
            d
        }
        Err(e) => {
            t.turn1_error = Some(e.to_string());
            Turn1Decision::empty()
        }
    };
    t.advance(WorkflowState::Turn1Parsed);

    t.advance(WorkflowState::ToolsExecuting);
    let mut evidence = Evidence::default();
    for &tool in decision.tools() {
        let started = Instant::now();
        let mut record = if tool == ToolKind::ImageCrop {
            run_crop(query, &decision, svc, cfg, &mut evidence)
        } else {
            run_remote(tool, query, &decision, svc, cfg, &ctx(0), &mut evidence)
        };
        record.latency = started.elapsed();
        t.tools.push(record);
    }

    let turn2_msg = prompts::turn2_message(svc.vocab, &query.image, &query.query, decision.detections(), &evidence);
    t.turn2_prompt = prompts::render_prompt(&turn2_msg);
    t.advance(WorkflowState::Turn2Requested);
    let assistant = Message::new("assistant", vec![crate::backend::Part::text(first.text)]);
    let second = match generate(svc, cfg, vec![turn1_msg, assistant, turn2_msg], seed, &ctx(2)) {
        Ok(r) => r,
        Err(reason) => {
            t.fail(reason);
            return t;
        }
    };
    t.turn2_output = second.text;
    t.turn2_logprobs = second.logprobs;

    if let Err(e) = protocol::extract_envelope(&t.turn2_output).and_then(|e| protocol::parse_turn2(&e.answer)) {
        if e != protocol::ProtocolError::EmptyAnswer {
            t.turn2_error = Some(e.to_string());
        }
    }
    t.predictions = predictions_from_turn2(&t.turn2_output, svc.reward.parse_mode);
    t.advance(WorkflowState::Turn2Parsed);

    let invocations: Vec<ToolInvocation> = t
        .tools
        .iter()
        .map(|r| ToolInvocation {
            tool: r.tool,
            success: r.success,
        })
        .collect();
    let inputs = TrajectoryInputs {
        turn1_raw: &t.turn1_output,
        turn2_raw: &t.turn2_output,
        ground_truth: &query.ground_truth,
        tools: &invocations,
    };
    match total_reward(&inputs, svc.reward, svc.similarity) {
        Ok(b) => {
            t.reward = b;
            t.advance(WorkflowState::Scored);
        }
        Err(e) => t.fail(FailReason::Similarity { message: e.0 }),
    }
    t
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Sampling seed for one rollout, derived from the master seed, the image
/// and the rollout index.
pub fn rollout_seed(master: u64, image_id: &str, rollout_index: usize) -> u64 {
    let digest = Sha256::digest(image_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let base = splitmix64(master ^ u64::from_le_bytes(head));
    splitmix64(base.wrapping_add(rollout_index as u64))
}

/// `cfg.group_size` independent rollouts, at most `cfg.parallelism` at a
/// time. Output order is by rollout index regardless of scheduling.
pub fn run_group(query: &Query, svc: &Services<'_>, cfg: &RolloutConfig, master_seed: u64) -> (RolloutGroup, Vec<Trajectory>) {
    let g = cfg.group_size;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Trajectory>>> = (0..g).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..cfg.parallelism.clamp(1, g.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= g {
                    break;
                }
                let t = run_rollout(query, svc, cfg, i, rollout_seed(master_seed, &query.image_id, i));
                *slots[i].lock().expect("slot poisoned") = Some(t);
            });
        }
    });
    let trajectories: Vec<Trajectory> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot poisoned").expect("every rollout ran"))
        .collect();
    let group = RolloutGroup {
        query_id: query.image_id.clone(),
        rewards: trajectories.iter().map(|t| t.reward.total).collect(),
        traces: None,
    };
    (group, trajectories)
}
