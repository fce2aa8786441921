use std::path::Path;

use hoi_agent::artifacts::ArtifactStore;
use hoi_agent::backend::mock::{MockPolicy, MockTools};
use hoi_agent::backend::NoTools;
use hoi_agent::config::RolloutConfig;
use hoi_agent::hoi_core::grpo::advantages;
use hoi_agent::hoi_core::protocol::ToolKind;
use hoi_agent::hoi_core::reward::{ExactMatch, RewardConfig};
use hoi_agent::hoi_core::{load_vocabulary, BBox, EntityLabel, HoiTriplet, Vocabulary, VocabularyDocument};
use hoi_agent::orchestrator::{run_group, run_rollout, FailReason, Query, Services, WorkflowState};

const TURN1: &str = "<think>one rider</think><answer>person, [2,2,20,40], bicycle, [10,20,40,46] ; image_crop, outpaint</answer>";
const PERFECT: &str = "<think>person rides bicycle</think><answer>1: ride, bicycle, [2,2,20,40], [10,20,40,46]</answer>";
const GARBAGE: &str = "I think it is a bicycle.";

fn vocab() -> Vocabulary {
    let doc: VocabularyDocument = serde_json::from_str(
        r#"{"objects":["person","bicycle"],"verbs":["ride","hold"],"object_to_verbs":{"bicycle":["ride","hold"]}}"#,
    )
    .unwrap();
    load_vocabulary(&doc).unwrap()
}

fn query(dir: &Path) -> Query {
    let path = dir.join("scene.png");
    image::RgbImage::from_fn(64, 48, |x, y| image::Rgb([x as u8, y as u8, 7])).save(&path).unwrap();
    let b = |v: [f64; 4]| BBox::new(v[0], v[1], v[2], v[3]).unwrap();
    Query {
        image_id: "scene".into(),
        image: path.to_string_lossy().into_owned(),
        width: 64.0,
        height: 48.0,
        query: "What is the person doing?".into(),
        ground_truth: vec![HoiTriplet::new(
            EntityLabel::new("ride").unwrap(),
            EntityLabel::new("bicycle").unwrap(),
            b([2.0, 2.0, 20.0, 40.0]),
            b([10.0, 20.0, 40.0, 46.0]),
        )],
    }
}

struct Env {
    _dir: tempfile::TempDir,
    store: ArtifactStore,
    vocab: Vocabulary,
    reward: RewardConfig,
    query: Query,
}

fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    Env {
        store: ArtifactStore::new(dir.path().join("store")),
        vocab: vocab(),
        reward: RewardConfig::default(),
        query: query(dir.path()),
        _dir: dir,
    }
}

fn services<'a>(env: &'a Env, policy: &'a MockPolicy, tools: &'a dyn hoi_agent::backend::ToolBackend) -> Services<'a> {
    Services {
        policy,
        tools,
        similarity: &ExactMatch,
        store: &env.store,
        vocab: &env.vocab,
        reward: &env.reward,
    }
}

#[test]
fn perfect_rollout_with_tools_scores_full_total() {
    let env = env();
    let policy = MockPolicy::fixed(TURN1, PERFECT);
    let tools = MockTools::echo();
    let t = run_rollout(&env.query, &services(&env, &policy, &tools), &RolloutConfig::default(), 0, 11);
    assert_eq!(*t.state(), WorkflowState::Scored);
    assert_eq!(
        t.history,
        [
            WorkflowState::Init,
            WorkflowState::Turn1Requested,
            WorkflowState::Turn1Parsed,
            WorkflowState::ToolsExecuting,
            WorkflowState::Turn2Requested,
            WorkflowState::Turn2Parsed,
            WorkflowState::Scored,
        ]
    );
    assert_eq!(t.tools.len(), 2);
    assert!(t.tools.iter().all(|r| r.success));
    // Crops land in the store and are referenced from the Turn-2 prompt.
    let crop = &t.tools[0];
    assert_eq!(crop.tool, ToolKind::ImageCrop);
    assert!(!crop.images.is_empty());
    assert!(env.store.read_bytes(&crop.images[0]).is_ok());
    assert!(t.turn2_prompt.contains("Crop of region"));
    assert!(t.turn2_prompt.contains("scripted evidence"));
    let want = 2.0 / (2.0 + 1e-6) + 0.5 + 0.2;
    assert!((t.reward.total - want).abs() < 1e-9, "{:?}", t.reward);
}

#[test]
fn malformed_turn1_skips_tools_and_loses_format() {
    let env = env();
    let policy = MockPolicy::fixed("person, [2,2,20,40] ; outpaint", PERFECT);
    let tools = MockTools::echo();
    let t = run_rollout(&env.query, &services(&env, &policy, &tools), &RolloutConfig::default(), 0, 1);
    assert_eq!(*t.state(), WorkflowState::Scored);
    assert!(t.turn1.is_none());
    assert!(t.turn1_error.is_some());
    assert!(t.tools.is_empty());
    assert_eq!(t.reward.r_format, 0.0);
    assert_eq!(t.reward.r_tool, 0.0);
    assert!(t.reward.r_hoi > 0.99);
}

#[test]
fn tool_timeout_degrades_to_failed_call() {
    let env = env();
    let policy = MockPolicy::fixed(
        "<think>t</think><answer>person, [2,2,20,40] ; outpaint</answer>",
        PERFECT,
    );
    let tools = MockTools::always_timeout();
    let t = run_rollout(&env.query, &services(&env, &policy, &tools), &RolloutConfig::default(), 0, 1);
    assert_eq!(*t.state(), WorkflowState::Scored);
    assert_eq!(t.tools.len(), 1);
    assert!(!t.tools[0].success);
    assert!(t.tools[0].error.is_some());
    assert_eq!(t.reward.r_tool, 0.0);
    assert_eq!(t.reward.r_format, 0.5);
}

#[test]
fn policy_timeout_fails_the_rollout() {
    let env = env();
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("policy.json");
    std::fs::write(&script, r#"{"responses":[{"turn":1,"error":"timeout"}]}"#).unwrap();
    let policy = MockPolicy::from_file(&script).unwrap();
    let t = run_rollout(&env.query, &services(&env, &policy, &NoTools), &RolloutConfig::default(), 0, 1);
    match t.state() {
        WorkflowState::Failed { reason: FailReason::Transport { turn: 1, .. } } => {}
        other => panic!("unexpected state {other:?}"),
    }
    assert_eq!(t.reward.total, 0.0);
}

#[test]
fn perfect_and_garbage_rollouts_get_opposite_advantages() {
    let env = env();
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("policy.json");
    let doc = serde_json::json!({"responses": [
        {"turn": 1, "text": TURN1},
        {"turn": 2, "rollout": 0, "text": PERFECT},
        {"turn": 2, "rollout": 1, "text": GARBAGE},
    ]});
    std::fs::write(&script, doc.to_string()).unwrap();
    let policy = MockPolicy::from_file(&script).unwrap();
    let tools = MockTools::echo();
    let cfg = RolloutConfig {
        group_size: 2,
        ..RolloutConfig::default()
    };
    let (group, trajectories) = run_group(&env.query, &services(&env, &policy, &tools), &cfg, 3);
    assert!(trajectories.iter().all(|t| t.is_scored()));
    assert!(group.rewards[0] > 1.6);
    assert_eq!(group.rewards[1], 0.0);
    let adv = advantages(&group.rewards).unwrap();
    assert!((adv[0] - 1.0).abs() < 1e-9 && (adv[1] + 1.0).abs() < 1e-9, "{adv:?}");
}

#[test]
fn group_is_deterministic_across_parallelism() {
    let env = env();
    let policy = MockPolicy::fixed(TURN1, PERFECT);
    let tools = MockTools::echo();
    let run = |parallelism| {
        let cfg = RolloutConfig {
            group_size: 6,
            parallelism,
            ..RolloutConfig::default()
        };
        let (_, ts) = run_group(&env.query, &services(&env, &policy, &tools), &cfg, 42);
        ts.iter().map(|t| serde_json::to_string(t).unwrap()).collect::<Vec<_>>()
    };
    let serial = run(1);
    assert_eq!(serial, run(4));
    let seeds: std::collections::BTreeSet<&str> = serial.iter().map(|s| &s[..s.find("history").unwrap()]).collect();
    assert_eq!(seeds.len(), 6, "each rollout has its own seed");
}
