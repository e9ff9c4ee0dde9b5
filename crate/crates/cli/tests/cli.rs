use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn estp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estp")).args(args).output().expect("spawn estp")
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Set `UPDATE_SNAPSHOTS=1` to rewrite the stored help texts.
fn check_snapshot(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(name);
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "snapshot {name} changed");
}

#[test]
fn help_snapshots() {
    let top = estp(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    check_snapshot("help.txt", &stdout(&top));
    for sub in ["score", "simulate", "supervise", "gen", "report"] {
        let o = estp(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub} --help");
        check_snapshot(&format!("{sub}.help.txt"), &stdout(&o));
    }
}

#[test]
fn version_exits_zero() {
    let o = estp(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(estp(&[]).status.code(), Some(1));
    assert_eq!(estp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(estp(&["score", "--episodes", "/no/such/file", "--predictions", "x"]).status.code(), Some(1));
    assert_eq!(estp(&["report", "--table", "--pr"]).status.code(), Some(1));
}

#[test]
fn invalid_episode_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let eps = dir.path().join("bad.jsonl");
    std::fs::write(
        &eps,
        concat!(
            r#"{"kind":"episode","id":"x","fps_num":1,"fps_den":1,"num_frames":10,"frame_tokens":1,"high_res_tokens":2}"#,
            "\n",
            r#"{"kind":"query","id":"q","content":"?","issue_frame":0}"#,
            "\n",
            r#"{"kind":"gt","id":"g","query_id":"q","content":"a","intervals":[[5,50]],"task_type":"OR","proactive_type":"Explicit"}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = estp(&["score", "--episodes", s(&eps), "--predictions", s(&data("worked/predictions.jsonl"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unreachable_judge_exits_three_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    std::fs::write(&out, "previous").unwrap();
    let o = estp(&[
        "score",
        "--episodes",
        s(&data("worked/episodes.jsonl")),
        "--predictions",
        s(&data("worked/predictions.jsonl")),
        "--answer",
        "judge:http://127.0.0.1:9",
        "--judge-timeout-ms",
        "500",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "previous");
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 1, "temporary file left behind");
}

#[test]
fn worked_example_matches_golden() {
    let o = estp(&[
        "score",
        "--episodes",
        s(&data("worked/episodes.jsonl")),
        "--predictions",
        s(&data("worked/predictions.jsonl")),
        "--time",
        "linear:0",
        "--no-meta",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let golden = std::fs::read_to_string(data("worked/report.golden.json")).unwrap();
    assert_eq!(stdout(&o), golden);
}

#[test]
fn empty_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = estp(&["score", "--episodes", s(&data("worked/episodes.jsonl")), "--predictions", s(&empty), "--no-meta"]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["estp_f1"], 0.0);
    assert_eq!(r["fn_count"], 2);
    assert_eq!(r["fp_count"], 0);
}

#[test]
fn meta_is_attached_unless_disabled() {
    let (eps, preds) = (data("worked/episodes.jsonl"), data("worked/predictions.jsonl"));
    let mut args = vec!["score", "--episodes", s(&eps), "--predictions", s(&preds)];
    let with: Value = serde_json::from_str(&stdout(&estp(&args))).unwrap();
    assert_eq!(with["meta"]["tool"], "estp-cli");
    args.push("--no-meta");
    let without: Value = serde_json::from_str(&stdout(&estp(&args))).unwrap();
    assert!(without.get("meta").is_none());
}

#[test]
fn pooled_table_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(format!("{name}.json"));
        let o = estp(&[
            "score",
            "--episodes",
            s(&data(&format!("pooled/{name}.episodes.jsonl"))),
            "--predictions",
            s(&data(&format!("pooled/{name}.predictions.jsonl"))),
            "--label",
            name,
            "--out",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        reports.push(out);
    }
    let o = estp(&["report", "--table", "--in", s(&reports[0]), s(&reports[1])]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), std::fs::read_to_string(data("pooled/table.golden.csv")).unwrap());

    let pr = estp(&["report", "--pr", "--in", s(&reports[0]), s(&reports[1])]);
    assert_eq!(stdout(&pr), "label,recall,precision\na,1,1\nb,0,0\n");
}

#[test]
fn empty_report_set_prints_header_only() {
    let o = estp(&["report", "--table"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "group,task,sum_s,fp,fn,precision,recall,estp_f1\n");
}

#[test]
fn simulate_writes_three_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let o = estp(&[
        "simulate",
        "--episodes",
        s(&data("worked/episodes.jsonl")),
        "--policy",
        "oracle",
        "--out-prefix",
        s(&prefix),
        "--no-meta",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for ext in ["predictions.jsonl", "trace.jsonl", "summary.json"] {
        assert!(prefix.with_extension(ext).exists(), "missing {ext}");
    }
    let trace = std::fs::read_to_string(prefix.with_extension("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 100);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"]["responses"], 2);
}

#[test]
fn supervise_loss_requires_signals() {
    let o = estp(&["supervise", "--episodes", s(&data("worked/episodes.jsonl")), "--stage", "0", "--loss-out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn supervise_stage_one_weights() {
    let o = estp(&["supervise", "--episodes", s(&data("worked/episodes.jsonl")), "--stage", "1", "--w-min", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 100);
    let w = |f: u64| lines.iter().find(|l| l["frame"] == f).unwrap()["weight"].as_f64().unwrap();
    assert_eq!(w(10), 0.1);
    assert!((w(15) - 0.55).abs() < 1e-12);
    assert_eq!(w(20), 1.0);
}
