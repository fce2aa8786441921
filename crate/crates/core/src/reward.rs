//! Composite trajectory reward.
//!
//! A predicted triplet matches a ground-truth triplet when both label
//! similarities exceed `delta` and both box IoUs exceed `eta` (strict
//! inequalities). The binary affinity matrix is solved as a linear assignment
//! with cost `1 - s`, the matched positives give an F1 score, and the total
//! adds a format term and a tool term that only counts when F1 is positive.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::geometry::iou;
use crate::label::EntityLabel;
use crate::protocol::{self, ToolKind};
use crate::triplet::HoiTriplet;

/// How Turn-2 text becomes predictions for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Any malformed record discards the whole answer.
    #[default]
    Strict,
    /// Well-formed records are kept, malformed ones skipped.
    Salvage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Label similarity threshold.
    pub delta: f64,
    /// IoU threshold applied to both boxes.
    pub eta: f64,
    /// F1 denominator stabilizer.
    pub epsilon: f64,
    pub format_value: f64,
    pub tool_value: f64,
    pub parse_mode: ParseMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            delta: 0.8,
            eta: 0.5,
            epsilon: 1e-6,
            format_value: 0.5,
            tool_value: 0.2,
            parse_mode: ParseMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("delta must lie in (0, 1], got {0}")]
    Delta(f64),
    #[error("eta must lie in (0, 1], got {0}")]
    Eta(f64),
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("format_value must be non-negative, got {0}")]
    FormatValue(f64),
    #[error("tool_value must be non-negative, got {0}")]
    ToolValue(f64),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.delta) {
            return Err(ConfigError::Delta(self.delta));
        }
        if !unit(self.eta) {
            return Err(ConfigError::Eta(self.eta));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ConfigError::Epsilon(self.epsilon));
        }
        if !(self.format_value >= 0.0 && self.format_value.is_finite()) {
            return Err(ConfigError::FormatValue(self.format_value));
        }
        if !(self.tool_value >= 0.0 && self.tool_value.is_finite()) {
            return Err(ConfigError::ToolValue(self.tool_value));
        }
        Ok(())
    }
}

/// Failure to obtain a similarity score. Never mapped to a zero score.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("similarity provider failed: {0}")]
pub struct SimilarityError(pub String);

/// Scores label pairs in `[-1, 1]`; `sim(a, a) = 1` and symmetric.
pub trait SimilarityProvider {
    fn similarity(&self, a: &EntityLabel, b: &EntityLabel) -> Result<f64, SimilarityError>;
}

impl<T: SimilarityProvider + ?Sized> SimilarityProvider for &T {
    fn similarity(&self, a: &EntityLabel, b: &EntityLabel) -> Result<f64, SimilarityError> {
        (**self).similarity(a, b)
    }
}

/// 1.0 on equal normalized labels, otherwise 0.0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl SimilarityProvider for ExactMatch {
    fn similarity(&self, a: &EntityLabel, b: &EntityLabel) -> Result<f64, SimilarityError> {
        Ok(if a == b { 1.0 } else { 0.0 })
    }
}

pub fn exact_match_provider() -> ExactMatch {
    ExactMatch
}

/// Binary `N_p x N_g` matrix; row `i` is prediction `i`, column `j` is
/// ground truth `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<bool>,
}

impl AffinityMatrix {
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged affinity rows");
        Self {
            rows: rows.len(),
            cols,
            entries: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, pred: usize, gt: usize) -> bool {
        self.entries[pred * self.cols + gt]
    }
}

pub fn affinity<S: SimilarityProvider + ?Sized>(
    pred: &[HoiTriplet],
    gt: &[HoiTriplet],
    cfg: &RewardConfig,
    sim: &S,
) -> Result<AffinityMatrix, SimilarityError> {
    let mut entries = Vec::with_capacity(pred.len() * gt.len());
    for p in pred {
        for g in gt {
            let semantic = sim.similarity(&p.verb, &g.verb)? > cfg.delta
                && sim.similarity(&p.object, &g.object)? > cfg.delta;
            let spatial =
                iou(&p.human_box, &g.human_box) > cfg.eta && iou(&p.object_box, &g.object_box) > cfg.eta;
            entries.push(semantic && spatial);
        }
    }
    Ok(AffinityMatrix {
        rows: pred.len(),
        cols: gt.len(),
        entries,
    })
}

/// An optimal one-to-one matching and its true-positive count.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Matching {
    /// `(prediction, ground truth)` pairs, sorted by prediction.
    pub pairs: Vec<(usize, usize)>,
    /// The subset of `pairs` with `s_ij = 1`.
    pub hits: Vec<(usize, usize)>,
    pub tp: usize,
}

/// Minimizes `sum(1 - s_ij)` over matchings of size `min(N_p, N_g)`.
pub fn optimal_assignment(s: &AffinityMatrix) -> Matching {
    let costs = CostMatrix::from_fn(s.rows, s.cols, |i, j| if s.get(i, j) { 0 } else { 1 });
    let pairs = hungarian(&costs);
    let hits: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(i, j)| s.get(i, j)).collect();
    Matching {
        tp: hits.len(),
        pairs,
        hits,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiScore {
    pub r_hoi: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub matching: Matching,
}

/// F1 from counts. An empty side makes its rate 0 and the score 0.
pub fn f1_from_counts(tp: usize, n_pred: usize, n_gt: usize, epsilon: f64) -> (f64, f64, f64) {
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
    if n_pred == 0 || n_gt == 0 {
        return (0.0, precision, recall);
    }
    let f1 = 2.0 * precision * recall / (precision + recall + epsilon);
    (f1, precision, recall)
}

pub fn hoi_reward<S: SimilarityProvider + ?Sized>(
    pred: &[HoiTriplet],
    gt: &[HoiTriplet],
    cfg: &RewardConfig,
    sim: &S,
) -> Result<HoiScore, SimilarityError> {
    let s = affinity(pred, gt, cfg, sim)?;
    let matching = optimal_assignment(&s);
    let (r_hoi, precision, recall) = f1_from_counts(matching.tp, pred.len(), gt.len(), cfg.epsilon);
    Ok(HoiScore {
        r_hoi,
        precision,
        recall,
        n_pred: pred.len(),
        n_gt: gt.len(),
        matching,
    })
}

/// One tool call as seen by the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: ToolKind,
    pub success: bool,
}

/// Flat per-trajectory tool term, open only when `r_hoi > 0` and at least
/// one invocation succeeded.
pub fn tool_reward(invocations: &[ToolInvocation], r_hoi: f64, cfg: &RewardConfig) -> f64 {
    if r_hoi > 0.0 && invocations.iter().any(|t| t.success) {
        cfg.tool_value
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_hoi: f64,
    pub r_format: f64,
    /// The gated tool term actually added to `total`.
    pub r_tool: f64,
    pub total: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub n_pred: usize,
    pub n_gt: usize,
    pub matching: Matching,
}

impl RewardBreakdown {
    pub fn zero(n_gt: usize) -> Self {
        Self {
            r_hoi: 0.0,
            r_format: 0.0,
            r_tool: 0.0,
            total: 0.0,
            precision: 0.0,
            recall: 0.0,
            tp: 0,
            n_pred: 0,
            n_gt,
            matching: Matching::default(),
        }
    }
}

/// Everything needed to score one two-turn rollout.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryInputs<'a> {
    pub turn1_raw: &'a str,
    pub turn2_raw: &'a str,
    pub ground_truth: &'a [HoiTriplet],
    pub tools: &'a [ToolInvocation],
}

/// Predictions carried by the Turn-2 answer block under `mode`. Anything
/// unparseable yields no predictions.
pub fn predictions_from_turn2(turn2_raw: &str, mode: ParseMode) -> Vec<HoiTriplet> {
    let Ok(answer) = protocol::extract_answer(turn2_raw) else {
        return Vec::new();
    };
    match mode {
        ParseMode::Strict => protocol::parse_turn2(&answer)
            .map(|a| a.triplets())
            .unwrap_or_default(),
        ParseMode::Salvage => protocol::parse_turn2_salvage(&answer).answer.triplets(),
    }
}

pub fn total_reward<S: SimilarityProvider + ?Sized>(
    inputs: &TrajectoryInputs<'_>,
    cfg: &RewardConfig,
    sim: &S,
) -> Result<RewardBreakdown, SimilarityError> {
    let preds = predictions_from_turn2(inputs.turn2_raw, cfg.parse_mode);
    let hoi = hoi_reward(&preds, inputs.ground_truth, cfg, sim)?;
    let r_format = if protocol::check_format(inputs.turn1_raw, inputs.turn2_raw) {
        cfg.format_value
    } else {
        0.0
    };
    let r_tool = tool_reward(inputs.tools, hoi.r_hoi, cfg);
    Ok(assemble(hoi, r_format, r_tool))
}

/// Sums the components; `r_tool` must already be gated.
pub fn assemble(hoi: HoiScore, r_format: f64, r_tool: f64) -> RewardBreakdown {
    RewardBreakdown {
        total: hoi.r_hoi + r_format + r_tool,
        r_hoi: hoi.r_hoi,
        r_format,
        r_tool,
        precision: hoi.precision,
        recall: hoi.recall,
        tp: hoi.matching.tp,
        n_pred: hoi.n_pred,
        n_gt: hoi.n_gt,
        matching: hoi.matching,
    }
}
