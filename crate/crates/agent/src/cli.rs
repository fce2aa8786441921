//! The `hoi` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 backend failure. Results go to stdout (or `--out`) as JSON lines;
//! diagnostics go to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use hoi_core::datagen::{select_solvable, split_corpora, Candidate, CorpusManifest, RuleJudge, SplitTargets};
use hoi_core::eval::{evaluate, EvalDataset, EvalReport};
use hoi_core::grpo::{self, GrpoConfig, LogprobTrace, RolloutGroup};
use hoi_core::reward::{
    assemble, hoi_reward, total_reward, ExactMatch, RewardBreakdown, RewardConfig, SimilarityProvider,
    ToolInvocation, TrajectoryInputs,
};
use hoi_core::{load_vocabulary, HoiTriplet, ImageRecord, SplitTag, Vocabulary, VocabularyDocument};
use serde::{Deserialize, Serialize};

use crate::artifacts::ArtifactStore;
use crate::backend::http::{HttpClient, HttpPolicy, HttpTools};
use crate::backend::mock::{MockPolicy, MockTools};
use crate::backend::{NoTools, PolicyBackend, ToolBackend};
use crate::config::AppConfig;
use crate::embedding::{embedding_provider, HttpEmbedding};
use crate::io::{read_json, read_jsonl, write_jsonl, write_jsonl_file, JsonlError};
use crate::orchestrator::{run_group, FailReason, Query, Services, Trajectory, WorkflowState};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        // Diagnostics are single-line by contract.
        let message = message.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        Self { code, message }
    }

    pub fn usage(message: impl std::fmt::Display) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn data(message: impl std::fmt::Display) -> Self {
        Self::new(EXIT_DATA, message)
    }

    pub fn backend(message: impl std::fmt::Display) -> Self {
        Self::new(EXIT_BACKEND, message)
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::data(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hoi", version, about = "Tool-augmented human-object interaction agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score predictions or trajectories against ground truth.
    Score(ScoreArgs),
    /// Compute mAP over a dataset.
    Eval(EvalArgs),
    /// Run rollout groups against policy and tool backends.
    Rollout(RolloutArgs),
    /// Build SFT and RL corpora from scored trajectories.
    Filter(FilterArgs),
    /// Group-relative advantages and the policy objective.
    Advantages(AdvantagesArgs),
}

#[derive(Debug, clap::Args)]
struct ScoreArgs {
    /// Ground truth, one image record per line.
    #[arg(long)]
    gt: PathBuf,
    /// Image records or trajectories, one per line.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedding service base URL; exact label match when absent.
    #[arg(long, env = "HOI_EMBEDDING_ENDPOINT")]
    embedding: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    /// Ground-truth image records, one per line.
    #[arg(long)]
    dataset: PathBuf,
    /// Prediction image records, one per line, matched by image_id.
    #[arg(long)]
    pred: PathBuf,
    /// Vocabulary document with category splits.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Print a text table instead of JSON.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct RolloutArgs {
    /// Image manifest, one entry per line.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Policy base URL, or a mock script file.
    #[arg(long, env = "HOI_POLICY_ENDPOINT")]
    policy: String,
    /// Tool service base URL, or a mock script file.
    #[arg(long, env = "HOI_TOOLS_ENDPOINT")]
    tools: Option<String>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concurrent rollouts per group.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where crops and returned tool images are stored.
    #[arg(long, default_value = "artifacts")]
    artifacts: PathBuf,
    #[arg(long, env = "HOI_EMBEDDING_ENDPOINT")]
    embedding: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct FilterArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = SplitTargets::default().sft_size)]
    sft_size: usize,
    #[arg(long, default_value_t = SplitTargets::default().rl_size)]
    rl_size: usize,
    /// Directory for sft.jsonl, rl.jsonl and manifest.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
struct AdvantagesArgs {
    /// Lines of {query_id, rollout_index, reward[, logp_theta, logp_old, logp_ref]}.
    #[arg(long)]
    rewards: PathBuf,
    #[arg(long, default_value_t = grpo::DEFAULT_BETA, allow_negative_numbers = true)]
    beta: f64,
    /// Ratio clipping; off unless given.
    #[arg(long)]
    clip_epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(stdout, "{e}").map_err(CliError::data)?;
                return Ok(());
            }
            let first = e.to_string().lines().find(|l| !l.trim().is_empty()).unwrap_or("").to_owned();
            return Err(CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    match cli.command {
        Command::Score(a) => cmd_score(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Rollout(a) => cmd_rollout(a, stdout),
        Command::Filter(a) => cmd_filter(a),
        Command::Advantages(a) => cmd_advantages(a, stdout),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, stdout: &mut dyn Write, items: &[T]) -> Result<(), CliError> {
    match out {
        Some(path) => write_jsonl_file(path, items).map_err(CliError::data),
        None => write_jsonl(stdout, items).map_err(|e| CliError::data(format!("stdout: {e}"))),
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        Some(p) => AppConfig::load(p).map_err(CliError::usage),
        None => Ok(AppConfig::default()),
    }
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let doc: VocabularyDocument = read_json(path)?;
    load_vocabulary(&doc).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn similarity(endpoint: Option<&str>) -> Box<dyn SimilarityProvider + Sync> {
    match endpoint {
        Some(url) => Box::new(embedding_provider(HttpEmbedding::new(HttpClient::new(
            url,
            Duration::from_secs(60),
        )))),
        None => Box::new(ExactMatch),
    }
}

// ---- score ----

/// A prediction line: a full trajectory, or a bare image record.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PredLine {
    Trajectory(Box<Trajectory>),
    Image(ImageRecord),
}

impl PredLine {
    fn image_id(&self) -> &str {
        match self {
            PredLine::Trajectory(t) => &t.image_id,
            PredLine::Image(r) => &r.image_id,
        }
    }
}

#[derive(Debug, Serialize)]
struct ScoreLine<'a> {
    image_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollout_index: Option<usize>,
    reward: RewardBreakdown,
}

#[derive(Debug, Default, Serialize)]
struct ScoreAggregate {
    records: usize,
    total_tp: usize,
    mean_total: f64,
    mean_r_hoi: f64,
    mean_r_format: f64,
    mean_r_tool: f64,
    mean_precision: f64,
    mean_recall: f64,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum ScoreOutput<'a> {
    Line(ScoreLine<'a>),
    Aggregate { aggregate: ScoreAggregate },
}

fn score_one(
    pred: &PredLine,
    gt: &[HoiTriplet],
    cfg: &RewardConfig,
    sim: &(dyn SimilarityProvider + Sync),
) -> Result<RewardBreakdown, CliError> {
    let backend = |e: hoi_core::reward::SimilarityError| CliError::backend(e);
    match pred {
        PredLine::Image(r) => {
            let hoi = hoi_reward(&r.predictions, gt, cfg, sim).map_err(backend)?;
            Ok(assemble(hoi, 0.0, 0.0))
        }
        PredLine::Trajectory(t) => {
            let tools: Vec<ToolInvocation> = t
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
                ground_truth: gt,
                tools: &tools,
            };
            total_reward(&inputs, cfg, sim).map_err(backend)
        }
    }
}

fn cmd_score(a: ScoreArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?.reward;
    let gt: Vec<ImageRecord> = read_jsonl(&a.gt)?;
    let preds: Vec<PredLine> = read_jsonl(&a.pred)?;
    let mut by_image: BTreeMap<&str, Vec<&PredLine>> = BTreeMap::new();
    for p in &preds {
        by_image.entry(p.image_id()).or_default().push(p);
    }
    if let Some(unknown) = by_image.keys().find(|id| !gt.iter().any(|g| g.image_id == **id)) {
        return Err(CliError::data(format!(
            "{}: image `{unknown}` has no ground truth",
            a.pred.display()
        )));
    }
    let sim = similarity(a.embedding.as_deref());

    let mut lines = Vec::new();
    for g in &gt {
        match by_image.get(g.image_id.as_str()) {
            None => lines.push(ScoreLine {
                image_id: &g.image_id,
                rollout_index: None,
                reward: RewardBreakdown::zero(g.ground_truth.len()),
            }),
            Some(ps) => {
                for p in ps {
                    lines.push(ScoreLine {
                        image_id: &g.image_id,
                        rollout_index: match p {
                            PredLine::Trajectory(t) => Some(t.rollout_index),
                            PredLine::Image(_) => None,
                        },
                        reward: score_one(p, &g.ground_truth, &cfg, &*sim)?,
                    });
                }
            }
        }
    }

    let n = lines.len().max(1) as f64;
    let mean = |f: fn(&RewardBreakdown) -> f64| lines.iter().map(|l| f(&l.reward)).sum::<f64>() / n;
    let aggregate = ScoreAggregate {
        records: lines.len(),
        total_tp: lines.iter().map(|l| l.reward.tp).sum(),
        mean_total: mean(|r| r.total),
        mean_r_hoi: mean(|r| r.r_hoi),
        mean_r_format: mean(|r| r.r_format),
        mean_r_tool: mean(|r| r.r_tool),
        mean_precision: mean(|r| r.precision),
        mean_recall: mean(|r| r.recall),
    };
    let mut out: Vec<ScoreOutput> = lines.into_iter().map(ScoreOutput::Line).collect();
    out.push(ScoreOutput::Aggregate { aggregate });
    emit(a.out.as_deref(), stdout, &out)
}

// ---- eval ----

fn format_table(report: &EvalReport) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| String::from("-"), |x| format!("{:.2}", 100.0 * x));
    let mut s = String::from("Full\tRare\tNon-Rare\tSeen\tUnseen\n");
    s.push_str(&format!(
        "{}\t{}\t{}\t{}\t{}\n",
        cell(report.splits.full),
        cell(report.splits.get(SplitTag::Rare)),
        cell(report.splits.get(SplitTag::NonRare)),
        cell(report.splits.get(SplitTag::Seen)),
        cell(report.splits.get(SplitTag::Unseen)),
    ));
    s
}

fn cmd_eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(a.eta > 0.0 && a.eta <= 1.0) {
        return Err(CliError::usage(format!("--eta must lie in (0, 1], got {}", a.eta)));
    }
    let vocab = load_vocab(&a.vocab)?;
    let mut images: Vec<ImageRecord> = read_jsonl(&a.dataset)?;
    let preds: Vec<ImageRecord> = read_jsonl(&a.pred)?;
    for img in &mut images {
        img.predictions.clear();
    }
    for p in preds {
        let Some(img) = images.iter_mut().find(|i| i.image_id == p.image_id) else {
            return Err(CliError::data(format!(
                "{}: image `{}` is not in the dataset",
                a.pred.display(),
                p.image_id
            )));
        };
        img.predictions.extend(p.predictions);
    }
    let dataset = EvalDataset::new(images, vocab).map_err(CliError::data)?;
    let report = evaluate(&dataset, a.eta);
    if a.table {
        let text = format_table(&report);
        return match a.out {
            Some(p) => std::fs::write(&p, text).map_err(|e| CliError::data(format!("{}: {e}", p.display()))),
            None => stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::data(format!("stdout: {e}"))),
        };
    }
    emit(a.out.as_deref(), stdout, &[report])
}

// ---- rollout ----

/// One line of the rollout image manifest. Relative paths resolve against
/// the manifest's directory; missing dimensions are read from the image.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageEntry {
    image_id: String,
    image: String,
    #[serde(default)]
    width: Option<f64>,
    #[serde(default)]
    height: Option<f64>,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    ground_truth: Vec<HoiTriplet>,
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

fn policy_backend(source: &str, store: &ArtifactStore, timeout: Duration) -> Result<Box<dyn PolicyBackend>, CliError> {
    if is_url(source) {
        return Ok(Box::new(HttpPolicy::new(HttpClient::new(source, timeout), store.clone())));
    }
    let path = Path::new(source);
    if !path.is_file() {
        return Err(CliError::usage(format!("policy mock script `{source}` not found")));
    }
    Ok(Box::new(MockPolicy::from_file(path).map_err(|e| CliError::usage(format!("{source}: {e}")))?))
}

fn tool_backend(source: Option<&str>, store: &ArtifactStore, timeout: Duration) -> Result<Box<dyn ToolBackend>, CliError> {
    let Some(source) = source else {
        return Ok(Box::new(NoTools));
    };
    if is_url(source) {
        return Ok(Box::new(HttpTools::new(HttpClient::new(source, timeout), store.clone())));
    }
    let path = Path::new(source);
    if !path.is_file() {
        return Err(CliError::usage(format!("tool mock script `{source}` not found")));
    }
    Ok(Box::new(MockTools::from_file(path).map_err(|e| CliError::usage(format!("{source}: {e}")))?))
}

fn to_query(entry: ImageEntry, base: &Path, store: &ArtifactStore) -> Result<Query, CliError> {
    let image = if Path::new(&entry.image).is_relative() && !entry.image.starts_with(crate::artifacts::ARTIFACT_SCHEME) {
        base.join(&entry.image).to_string_lossy().into_owned()
    } else {
        entry.image.clone()
    };
    let (width, height) = match (entry.width, entry.height) {
        (Some(w), Some(h)) => (w, h),
        _ => {
            let (w, h) = store.dimensions(&image).map_err(CliError::data)?;
            (w as f64, h as f64)
        }
    };
    let record = ImageRecord {
        image_id: entry.image_id.clone(),
        width,
        height,
        ground_truth: entry.ground_truth.clone(),
        predictions: Vec::new(),
    };
    record.validate().map_err(CliError::data)?;
    Ok(Query {
        image_id: entry.image_id,
        image,
        width,
        height,
        query: entry.query.unwrap_or_else(|| String::from(crate::prompts::DEFAULT_QUERY)),
        ground_truth: entry.ground_truth,
    })
}

fn cmd_rollout(a: RolloutArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(g) = a.group_size {
        cfg.rollout.group_size = g;
    }
    if let Some(w) = a.workers {
        cfg.rollout.parallelism = w;
    }
    cfg.validate().map_err(CliError::usage)?;

    let store = ArtifactStore::new(&a.artifacts);
    let policy = policy_backend(&a.policy, &store, Duration::from_millis(cfg.rollout.policy_timeout_ms))?;
    let tools = tool_backend(a.tools.as_deref(), &store, Duration::from_millis(cfg.rollout.tool_timeout_ms))?;
    let vocab = load_vocab(&a.vocab)?;
    let entries: Vec<ImageEntry> = read_jsonl(&a.images)?;
    let base = a.images.parent().unwrap_or(Path::new("."));
    let queries = entries
        .into_iter()
        .map(|e| to_query(e, base, &store))
        .collect::<Result<Vec<_>, _>>()?;
    let sim = similarity(a.embedding.as_deref());
    let svc = Services {
        policy: &*policy,
        tools: &*tools,
        similarity: &*sim,
        store: &store,
        vocab: &vocab,
        reward: &cfg.reward,
    };

    let mut all = Vec::new();
    for q in &queries {
        let (_, trajectories) = run_group(q, &svc, &cfg.rollout, a.seed);
        all.extend(trajectories);
    }
    emit(a.out.as_deref(), stdout, &all)?;

    let failures: Vec<&FailReason> = all
        .iter()
        .filter_map(|t| match t.state() {
            WorkflowState::Failed { reason } => Some(reason),
            _ => None,
        })
        .collect();
    if let Some(first) = failures.first() {
        let detail = match first {
            FailReason::Transport { turn, message } | FailReason::Backend { turn, message } => {
                format!("turn {turn}: {message}")
            }
            FailReason::Similarity { message } => message.clone(),
        };
        return Err(CliError::backend(format!(
            "{} of {} rollouts failed (first: {detail})",
            failures.len(),
            all.len()
        )));
    }
    Ok(())
}

// ---- filter ----

#[derive(Debug, Serialize)]
struct FilterManifest {
    input_trajectories: usize,
    input_images: usize,
    solvable_images: usize,
    kept_trajectories: usize,
    #[serde(flatten)]
    corpus: CorpusManifest,
}

fn cmd_filter(a: FilterArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let trajectories: Vec<Trajectory> = read_jsonl(&a.trajectories)?;
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<Candidate>> = BTreeMap::new();
    for t in &trajectories {
        if !groups.contains_key(t.image_id.as_str()) {
            order.push(&t.image_id);
        }
        groups.entry(&t.image_id).or_default().push(t.to_candidate());
    }
    let input_images = order.len();
    let grouped: Vec<Vec<Candidate>> = order.iter().map(|id| groups.remove(id).unwrap_or_default()).collect();
    let solvable = select_solvable(grouped, &vocab);
    let solvable_images = solvable.len();
    let kept: Vec<Candidate> = solvable.into_iter().flat_map(|s| s.kept).collect();
    let kept_trajectories = kept.len();

    let split = split_corpora(
        kept,
        &RuleJudge::new(&vocab),
        SplitTargets {
            sft_size: a.sft_size,
            rl_size: a.rl_size,
        },
    );
    for w in &split.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::data(format!("{}: {e}", a.out_dir.display())))?;
    let packaged = |cs: &[Candidate]| cs.iter().map(|c| c.trajectory.clone()).collect::<Vec<_>>();
    write_jsonl_file(&a.out_dir.join("sft.jsonl"), &packaged(&split.sft))?;
    write_jsonl_file(&a.out_dir.join("rl.jsonl"), &packaged(&split.rl))?;
    let manifest = FilterManifest {
        input_trajectories: trajectories.len(),
        input_images,
        solvable_images,
        kept_trajectories,
        corpus: CorpusManifest::from_split(&split),
    };
    let path = a.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::data)?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

// ---- advantages ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardRow {
    query_id: String,
    rollout_index: usize,
    reward: f64,
    #[serde(default)]
    logp_theta: Option<Vec<f64>>,
    #[serde(default)]
    logp_old: Option<Vec<f64>>,
    #[serde(default)]
    logp_ref: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct AdvantageLine {
    query_id: String,
    rollout_indices: Vec<usize>,
    rewards: Vec<f64>,
    advantages: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kl_per_rollout: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    beta: f64,
}

fn cmd_advantages(a: AdvantagesArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = GrpoConfig {
        beta: a.beta,
        clip_epsilon: a.clip_epsilon,
    };
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(CliError::usage(format!("--beta must be non-negative, got {}", cfg.beta)));
    }
    if let Some(eps) = cfg.clip_epsilon {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(CliError::usage(format!("--clip-epsilon must lie in (0, 1), got {eps}")));
        }
    }
    let rows: Vec<RewardRow> = read_jsonl(&a.rewards)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<RewardRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.query_id) {
            order.push(r.query_id.clone());
        }
        groups.entry(r.query_id.clone()).or_default().push(r);
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).unwrap_or_default();
        rows.sort_by_key(|r| r.rollout_index);
        if rows.windows(2).any(|w| w[0].rollout_index == w[1].rollout_index) {
            return Err(CliError::data(format!("query `{id}`: duplicate rollout_index")));
        }
        let with_traces = rows
            .iter()
            .filter(|r| r.logp_theta.is_some() && r.logp_old.is_some() && r.logp_ref.is_some())
            .count();
        let any_trace = rows
            .iter()
            .any(|r| r.logp_theta.is_some() || r.logp_old.is_some() || r.logp_ref.is_some());
        if any_trace && with_traces != rows.len() {
            return Err(CliError::data(format!(
                "query `{id}`: log-probabilities must be given for every rollout or none"
            )));
        }
        let rollout_indices: Vec<usize> = rows.iter().map(|r| r.rollout_index).collect();
        let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
        let grpo_err = |e: grpo::GrpoError| CliError::data(format!("query `{id}`: {e}"));
        let line = if any_trace {
            let traces = rows
                .into_iter()
                .map(|r| LogprobTrace {
                    theta: r.logp_theta.unwrap_or_default(),
                    old: r.logp_old.unwrap_or_default(),
                    reference: r.logp_ref.unwrap_or_default(),
                })
                .collect();
            let group = RolloutGroup {
                query_id: id.clone(),
                rewards: rewards.clone(),
                traces: Some(traces),
            };
            let g = grpo::grpo_objective(&group, &cfg).map_err(grpo_err)?;
            AdvantageLine {
                query_id: id.clone(),
                rollout_indices,
                rewards,
                advantages: g.advantages,
                ratios: Some(g.ratios),
                kl_per_rollout: Some(g.kl_per_rollout),
                objective: Some(g.objective_value),
                beta: g.beta,
            }
        } else {
            AdvantageLine {
                query_id: id.clone(),
                rollout_indices,
                advantages: grpo::advantages(&rewards).map_err(grpo_err)?,
                rewards,
                ratios: None,
                kl_per_rollout: None,
                objective: None,
                beta: cfg.beta,
            }
        };
        out.push(line);
    }
    emit(a.out.as_deref(), stdout, &out)
}
