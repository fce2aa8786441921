use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn hoi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoi"))
        .current_dir(dir)
        .args(args)
        .env_remove("HOI_POLICY_ENDPOINT")
        .env_remove("HOI_TOOLS_ENDPOINT")
        .env_remove("HOI_EMBEDDING_ENDPOINT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_diagnostic(o: &Output, code: i32, needle: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let line = err.lines().find(|l| l.starts_with("hoi: ")).unwrap_or_else(|| panic!("no diagnostic in {err:?}"));
    assert!(line.contains(needle), "{line:?} lacks {needle:?}");
}

fn json_lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const GT: &str = r#"{"image_id":"a","width":100,"height":100,"ground_truth":[{"verb":"ride","object":"bicycle","human_box":[0,0,10,10],"object_box":[5,5,20,20]}]}"#;

#[test]
fn no_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hoi(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(hoi(dir.path(), &["score", "--bogus"]).status.code(), Some(1));
    assert_eq!(hoi(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_mock_script_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let v = fixtures().join("rollout/vocab.json");
    std::fs::write(dir.path().join("images.jsonl"), "").unwrap();
    let o = hoi(
        dir.path(),
        &["rollout", "--images", "images.jsonl", "--vocab", v.to_str().unwrap(), "--policy", "nope.json"],
    );
    assert_diagnostic(&o, 1, "nope.json");
}

#[test]
fn malformed_jsonl_reports_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = vec![GT.replace("\"a\"", "\"x\""); 6];
    lines.push(String::from("{\"image_id\": oops"));
    std::fs::write(dir.path().join("gt.jsonl"), lines.join("\n")).unwrap();
    std::fs::write(dir.path().join("pred.jsonl"), "").unwrap();
    let o = hoi(dir.path(), &["score", "--gt", "gt.jsonl", "--pred", "pred.jsonl"]);
    assert_diagnostic(&o, 2, "gt.jsonl:7:");
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn empty_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gt.jsonl"), format!("{GT}\n")).unwrap();
    std::fs::write(dir.path().join("pred.jsonl"), "").unwrap();
    let o = hoi(dir.path(), &["score", "--gt", "gt.jsonl", "--pred", "pred.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&o.stdout);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["image_id"], "a");
    assert_eq!(lines[0]["reward"]["total"], 0.0);
    assert_eq!(lines[1]["aggregate"]["mean_total"], 0.0);
}

#[test]
fn score_trajectory_file_and_unknown_image() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gt.jsonl"), format!("{GT}\n")).unwrap();
    let pred = r#"{"image_id":"a","width":100,"height":100,"ground_truth":[],"predictions":[{"verb":"ride","object":"bicycle","human_box":[0,0,10,10],"object_box":[5,5,20,20]}]}"#;
    std::fs::write(dir.path().join("pred.jsonl"), format!("{pred}\n")).unwrap();
    let o = hoi(dir.path(), &["score", "--gt", "gt.jsonl", "--pred", "pred.jsonl", "--out", "s.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&std::fs::read(dir.path().join("s.jsonl")).unwrap());
    let r_hoi = lines[0]["reward"]["r_hoi"].as_f64().unwrap();
    assert!((r_hoi - 2.0 / (2.0 + 1e-6)).abs() < 1e-12);

    std::fs::write(dir.path().join("pred.jsonl"), pred.replace("\"a\"", "\"zzz\"")).unwrap();
    let o = hoi(dir.path(), &["score", "--gt", "gt.jsonl", "--pred", "pred.jsonl"]);
    assert_diagnostic(&o, 2, "zzz");
}

fn rewards_file(dir: &Path, rows: &[(&str, usize, f64)]) {
    let text: Vec<String> = rows
        .iter()
        .map(|(q, i, r)| format!(r#"{{"query_id":"{q}","rollout_index":{i},"reward":{r}}}"#))
        .collect();
    std::fs::write(dir.join("rewards.jsonl"), text.join("\n")).unwrap();
}

#[test]
fn advantages_of_binary_group() {
    let dir = tempfile::tempdir().unwrap();
    rewards_file(dir.path(), &[("q", 0, 1.0), ("q", 1, 0.0), ("q", 2, 0.0), ("q", 3, 1.0)]);
    let o = hoi(dir.path(), &["advantages", "--rewards", "rewards.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&o.stdout);
    assert_eq!(lines.len(), 1);
    let adv: Vec<f64> = lines[0]["advantages"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (a, w) in adv.iter().zip([1.0, -1.0, -1.0, 1.0]) {
        assert!((a - w).abs() < 1e-9, "{adv:?}");
    }
    assert_eq!(lines[0]["beta"], 0.04);
    assert!(lines[0].get("objective").is_none());
}

#[test]
fn advantages_with_traces_reports_kl() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [
        r#"{"query_id":"q","rollout_index":1,"reward":0.0,"logp_theta":[-1.0,-2.0],"logp_old":[-1.0,-2.0],"logp_ref":[-1.5,-2.0]}"#,
        r#"{"query_id":"q","rollout_index":0,"reward":1.0,"logp_theta":[-1.0],"logp_old":[-1.0],"logp_ref":[-1.0]}"#,
    ];
    std::fs::write(dir.path().join("rewards.jsonl"), rows.join("\n")).unwrap();
    let o = hoi(dir.path(), &["advantages", "--rewards", "rewards.jsonl", "--beta", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = &json_lines(&o.stdout)[0];
    assert_eq!(line["rollout_indices"], serde_json::json!([0, 1]));
    assert_eq!(line["kl_per_rollout"][0], 0.0);
    assert!(line["kl_per_rollout"][1].as_f64().unwrap() > 0.0);
    assert_eq!(line["ratios"], serde_json::json!([1.0, 1.0]));
    assert!(line["objective"].is_number());
}

#[test]
fn advantages_rejects_singletons_and_bad_beta() {
    let dir = tempfile::tempdir().unwrap();
    rewards_file(dir.path(), &[("q", 0, 1.0), ("q", 1, 0.0), ("solo", 0, 1.0)]);
    let o = hoi(dir.path(), &["advantages", "--rewards", "rewards.jsonl"]);
    assert_diagnostic(&o, 2, "solo");
    let o = hoi(dir.path(), &["advantages", "--rewards", "rewards.jsonl", "--beta", "-1"]);
    assert_diagnostic(&o, 1, "beta");
}

#[test]
fn eval_fixture_table_and_eta_bounds() {
    let map = fixtures().join("map");
    let arg = |f: &str| map.join(f).to_string_lossy().into_owned();
    let dir = tempfile::tempdir().unwrap();
    let (ds, pred, vocab) = (arg("dataset.jsonl"), arg("pred.jsonl"), arg("vocab.json"));
    let o = hoi(dir.path(), &["eval", "--dataset", &ds, "--pred", &pred, "--vocab", &vocab]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((report["splits"]["full"].as_f64().unwrap() - 23.0 / 36.0).abs() < 1e-9);

    let o = hoi(dir.path(), &["eval", "--dataset", &ds, "--pred", &pred, "--vocab", &vocab, "--table"]);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.starts_with("Full\tRare\tNon-Rare\tSeen\tUnseen\n63.89\t25.00\t66.67\t-\t100.00"), "{table}");

    let o = hoi(dir.path(), &["eval", "--dataset", &ds, "--pred", &pred, "--vocab", &vocab, "--eta", "1.5"]);
    assert_diagnostic(&o, 1, "eta");
}

#[test]
fn eval_strict_eta_rejects_near_misses() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = fixtures().join("map/vocab.json");
    std::fs::write(dir.path().join("ds.jsonl"), format!("{GT}\n")).unwrap();
    // IoU of each box with its ground truth is about 0.8.
    let pred = r#"{"image_id":"a","width":100,"height":100,"ground_truth":[],"predictions":[{"verb":"ride","object":"bicycle","human_box":[0,0,10,12.5],"object_box":[5,5,20,23.75]}]}"#;
    std::fs::write(dir.path().join("pred.jsonl"), format!("{pred}\n")).unwrap();
    let run = |eta: &str| {
        let o = hoi(
            dir.path(),
            &["eval", "--dataset", "ds.jsonl", "--pred", "pred.jsonl", "--vocab", vocab.to_str().unwrap(), "--eta", eta],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()["splits"]["full"].as_f64().unwrap()
    };
    assert_eq!(run("0.5"), 1.0);
    assert_eq!(run("0.9"), 0.0);
}

fn rollout_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("rollout");
    for f in ["images.jsonl", "policy.json", "tools.json", "vocab.json"] {
        std::fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    image::RgbImage::from_pixel(64, 48, image::Rgb([90, 120, 30]))
        .save(dir.path().join("street-01.png"))
        .unwrap();
    dir
}

#[test]
fn rollout_backend_failure_exits_3_after_writing() {
    let dir = rollout_workspace();
    std::fs::write(dir.path().join("down.json"), r#"{"responses":[{"error":"transport"}]}"#).unwrap();
    let o = hoi(
        dir.path(),
        &["rollout", "--images", "images.jsonl", "--vocab", "vocab.json", "--policy", "down.json", "--group-size", "2", "--out", "t.jsonl"],
    );
    assert_diagnostic(&o, 3, "");
    let lines = json_lines(&std::fs::read(dir.path().join("t.jsonl")).unwrap());
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["history"].as_array().unwrap().last().unwrap()["stage"], "failed");
}

#[test]
fn rollout_then_filter() {
    let dir = rollout_workspace();
    let o = hoi(
        dir.path(),
        &[
            "rollout", "--images", "images.jsonl", "--vocab", "vocab.json", "--policy", "policy.json", "--tools",
            "tools.json", "--group-size", "3", "--out", "t.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = hoi(
        dir.path(),
        &["filter", "--trajectories", "t.jsonl", "--vocab", "vocab.json", "--sft-size", "1", "--rl-size", "1", "--out-dir", "corpora"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("corpora/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["input_trajectories"], 3);
    assert_eq!(manifest["solvable_images"], 1);
    let sft = std::fs::read_to_string(dir.path().join("corpora/sft.jsonl")).unwrap();
    let rl = std::fs::read_to_string(dir.path().join("corpora/rl.jsonl")).unwrap();
    assert_eq!(sft.lines().count() + rl.lines().count(), 2);
}

#[test]
fn filter_with_no_solvable_images_writes_empty_corpora() {
    let dir = rollout_workspace();
    // A policy whose second turn never matches anything.
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"responses":[{"turn":1,"text":"<think>t</think><answer>person, [2,2,20,40] ; </answer>"},{"turn":2,"text":"no idea"}]}"#,
    )
    .unwrap();
    let o = hoi(
        dir.path(),
        &["rollout", "--images", "images.jsonl", "--vocab", "vocab.json", "--policy", "bad.json", "--out", "t.jsonl"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = hoi(dir.path(), &["filter", "--trajectories", "t.jsonl", "--vocab", "vocab.json", "--out-dir", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(dir.path().join("out/sft.jsonl")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(dir.path().join("out/rl.jsonl")).unwrap(), "");
    assert!(stderr(&o).contains("WARN"), "shortfall should be logged: {}", stderr(&o));
}
