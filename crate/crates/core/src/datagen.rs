//! Trajectory filtering for building SFT and RL corpora.
//!
//! Exploration rollouts are kept per image only if some rollout found a true
//! positive; surviving rollouts must also pass four hard rules (closed-set
//! objects, per-object verbs, in-frame boxes, parseable answers). A judge
//! then gates the SFT corpus, and both corpora are balanced across
//! interaction categories by round-robin.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::label::EntityLabel;
use crate::protocol::{self, Detection, ToolKind};
use crate::triplet::Category;
use crate::vocab::Vocabulary;

/// One stored reasoning chain. Field names are part of the corpus format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackagedTrajectory {
    pub image_id: String,
    pub detected_objects: Vec<Detection>,
    pub selected_tools: Vec<ToolKind>,
    pub first_turn_output: String,
    pub second_turn_output: String,
    pub first_turn_prompt: String,
    pub second_turn_prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: f64,
    pub height: f64,
}

/// Where in a trajectory a box or label was found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "turn")]
pub enum Location {
    /// Turn-1 detection at this position (0-based).
    Detection { position: usize },
    /// Turn-2 record with this index.
    Record { index: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxRole {
    Object,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    /// Object label outside the closed vocabulary.
    ClosedSetObject { object: EntityLabel, at: Location },
    /// Verb not permitted for the object.
    VerbConstraint {
        verb: EntityLabel,
        object: EntityLabel,
        index: u32,
    },
    /// Box extends past the original image frame.
    BoundingBox { bbox: BBox, role: BoxRole, at: Location },
    /// Answer block missing or unparseable in turn 1 or 2.
    Format { turn: u8, reason: String },
}

impl Violation {
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::ClosedSetObject { .. } => "closed_set_object",
            Violation::VerbConstraint { .. } => "verb_constraint",
            Violation::BoundingBox { .. } => "bounding_box",
            Violation::Format { .. } => "format",
        }
    }
}

/// Every hard-rule violation in `t`; empty means the trajectory passes.
///
/// An unknown object is reported once as [`Violation::ClosedSetObject`]; its
/// verb is not additionally checked.
pub fn validate_constraints(t: &PackagedTrajectory, vocab: &Vocabulary, dims: ImageDims) -> Vec<Violation> {
    let mut out = Vec::new();
    let check_box = |out: &mut Vec<Violation>, bbox: BBox, role: BoxRole, at: Location| {
        if !bbox.fits_within(dims.width, dims.height) {
            out.push(Violation::BoundingBox { bbox, role, at });
        }
    };

    let first = protocol::extract_envelope(&t.first_turn_output).and_then(|e| protocol::parse_turn1(&e.answer));
    match first {
        Ok(decision) => {
            for (position, d) in decision.detections().iter().enumerate() {
                if !vocab.contains_object(&d.label) {
                    out.push(Violation::ClosedSetObject {
                        object: d.label.clone(),
                        at: Location::Detection { position },
                    });
                }
                check_box(&mut out, d.bbox, BoxRole::Object, Location::Detection { position });
            }
        }
        Err(e) => out.push(Violation::Format {
            turn: 1,
            reason: e.to_string(),
        }),
    }

    let second = protocol::extract_envelope(&t.second_turn_output).and_then(|e| protocol::parse_turn2(&e.answer));
    match second {
        Ok(answer) => {
            for r in answer.records() {
                let at = Location::Record { index: r.index };
                if !vocab.contains_object(&r.object) {
                    out.push(Violation::ClosedSetObject {
                        object: r.object.clone(),
                        at: at.clone(),
                    });
                } else if !vocab.is_valid_pair(&r.verb, &r.object) {
                    out.push(Violation::VerbConstraint {
                        verb: r.verb.clone(),
                        object: r.object.clone(),
                        index: r.index,
                    });
                }
                check_box(&mut out, r.human_box, BoxRole::Human, at.clone());
                check_box(&mut out, r.object_box, BoxRole::Object, at);
            }
        }
        Err(protocol::ProtocolError::EmptyAnswer) => {}
        Err(e) => out.push(Violation::Format {
            turn: 2,
            reason: e.to_string(),
        }),
    }
    out
}

/// A scored exploration rollout ready for filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub trajectory: PackagedTrajectory,
    pub dims: ImageDims,
    /// True positives from the reward matching.
    pub tp: usize,
    /// Category used for balancing, typically that of the first matched
    /// prediction.
    pub category: Option<Category>,
}

/// Images kept as solvable, each with its retained rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvableImage {
    pub image_id: String,
    pub kept: Vec<Candidate>,
}

/// Keeps an image iff some rollout has `tp >= 1`, retaining only rollouts
/// with `tp >= 1` and no hard-rule violations. Images left with nothing are
/// dropped.
pub fn select_solvable(groups: Vec<Vec<Candidate>>, vocab: &Vocabulary) -> Vec<SolvableImage> {
    let mut out = Vec::new();
    for group in groups {
        let Some(image_id) = group.first().map(|c| c.trajectory.image_id.clone()) else {
            continue;
        };
        if !group.iter().any(|c| c.tp >= 1) {
            continue;
        }
        let kept: Vec<Candidate> = group
            .into_iter()
            .filter(|c| c.tp >= 1 && validate_constraints(&c.trajectory, vocab, c.dims).is_empty())
            .collect();
        if !kept.is_empty() {
            out.push(SolvableImage { image_id, kept });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub accept: bool,
    pub score: f64,
    #[serde(default)]
    pub reasons: Vec<String>,
}

/// Expert validator. Must be deterministic for a fixed configuration.
pub trait JudgeBackend {
    fn judge(&self, candidate: &Candidate) -> JudgeVerdict;
}

/// Rule-based stand-in: accepts iff `tp >= 1`, no hard-rule violations, and
/// the Turn-2 think block mentions every predicted object label.
#[derive(Debug, Clone)]
pub struct RuleJudge<'a> {
    vocab: &'a Vocabulary,
}

impl<'a> RuleJudge<'a> {
    pub fn new(vocab: &'a Vocabulary) -> Self {
        Self { vocab }
    }
}

impl JudgeBackend for RuleJudge<'_> {
    fn judge(&self, c: &Candidate) -> JudgeVerdict {
        let mut reasons = Vec::new();
        if c.tp == 0 {
            reasons.push(String::from("no true positive"));
        }
        let violations = validate_constraints(&c.trajectory, self.vocab, c.dims);
        for v in &violations {
            reasons.push(format!("violates {}", v.rule()));
        }
        if let Ok(env) = protocol::extract_envelope(&c.trajectory.second_turn_output) {
            let think = env.think.to_lowercase().replace('_', " ");
            if let Ok(answer) = protocol::parse_turn2(&env.answer) {
                for r in answer.records() {
                    if !think.contains(r.object.as_str()) {
                        reasons.push(format!("reasoning never mentions `{}`", r.object));
                    }
                }
            }
        }
        reasons.dedup();
        let checks_failed = [c.tp == 0, !violations.is_empty(), reasons.iter().any(|r| r.starts_with("reasoning"))]
            .iter()
            .filter(|&&b| b)
            .count();
        JudgeVerdict {
            accept: reasons.is_empty(),
            score: (3 - checks_failed) as f64 / 3.0,
            reasons,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTargets {
    pub sft_size: usize,
    pub rl_size: usize,
}

impl Default for SplitTargets {
    fn default() -> Self {
        Self {
            sft_size: 6000,
            rl_size: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub sft: Vec<Candidate>,
    pub rl: Vec<Candidate>,
    pub rejected_by_judge: usize,
    pub warnings: Vec<String>,
}

type Buckets = BTreeMap<Option<Category>, VecDeque<Candidate>>;

fn bucketize(items: impl IntoIterator<Item = Candidate>) -> Buckets {
    let mut buckets = Buckets::new();
    for c in items {
        buckets.entry(c.category.clone()).or_default().push_back(c);
    }
    buckets
}

/// Takes one item per bucket per round, in key order, until `n` are taken
/// or the buckets run dry.
fn round_robin(buckets: &mut Buckets, n: usize) -> Vec<Candidate> {
    let mut taken = Vec::with_capacity(n);
    while taken.len() < n {
        let mut progressed = false;
        for queue in buckets.values_mut() {
            if taken.len() == n {
                break;
            }
            if let Some(c) = queue.pop_front() {
                taken.push(c);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    taken
}

/// Splits successful trajectories into disjoint SFT and RL corpora.
///
/// SFT draws only from judge-accepted candidates. RL draws from everything
/// not placed in SFT (accepted leftovers and judge-rejected successes, which
/// still passed the hard rules). Shortfalls are reported as warnings.
pub fn split_corpora<J: JudgeBackend + ?Sized>(kept: Vec<Candidate>, judge: &J, targets: SplitTargets) -> CorpusSplit {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for c in kept {
        if judge.judge(&c).accept {
            accepted.push(c);
        } else {
            rejected.push(c);
        }
    }
    let rejected_by_judge = rejected.len();
    let mut warnings = Vec::new();
    if accepted.is_empty() && rejected_by_judge > 0 {
        warnings.push(String::from("judge rejected every trajectory; SFT corpus is empty"));
    }

    let mut sft_buckets = bucketize(accepted);
    let sft = round_robin(&mut sft_buckets, targets.sft_size);
    if sft.len() < targets.sft_size {
        warnings.push(format!(
            "SFT corpus has {} of {} requested trajectories",
            sft.len(),
            targets.sft_size
        ));
    }

    let leftovers = sft_buckets.into_values().flatten().chain(rejected);
    let mut rl_buckets = bucketize(leftovers);
    let rl = round_robin(&mut rl_buckets, targets.rl_size);
    if rl.len() < targets.rl_size {
        warnings.push(format!(
            "RL corpus has {} of {} requested trajectories",
            rl.len(),
            targets.rl_size
        ));
    }

    CorpusSplit {
        sft,
        rl,
        rejected_by_judge,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub sft: usize,
    pub rl: usize,
}

/// Per-category and per-split counts written next to the corpora.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub totals: SplitCounts,
    /// Keyed by `verb|object`; `-` for uncategorized.
    pub per_category: BTreeMap<String, SplitCounts>,
    pub rejected_by_judge: usize,
    pub warnings: Vec<String>,
}

impl CorpusManifest {
    pub fn from_split(split: &CorpusSplit) -> Self {
        let mut per_category: BTreeMap<String, SplitCounts> = BTreeMap::new();
        let key = |c: &Candidate| c.category.as_ref().map_or_else(|| String::from("-"), Category::key);
        for c in &split.sft {
            per_category.entry(key(c)).or_default().sft += 1;
        }
        for c in &split.rl {
            per_category.entry(key(c)).or_default().rl += 1;
        }
        Self {
            totals: SplitCounts {
                sft: split.sft.len(),
                rl: split.rl.len(),
            },
            per_category,
            rejected_by_judge: split.rejected_by_judge,
            warnings: split.warnings.clone(),
        }
    }
}
