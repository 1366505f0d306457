use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tradeslot"));
    cmd.env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn canonical() -> String {
    std::fs::read_to_string(data("canonical.jsonl")).unwrap()
}

#[test]
fn eval_canonical_matches_golden() {
    let dataset = data("canonical.jsonl");
    let provider = data("rule.toml");
    let out = run(
        &[
            "eval",
            "run",
            "--dataset",
            dataset.to_str().unwrap(),
            "--provider-config",
            provider.to_str().unwrap(),
        ],
        "",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let golden = include_str!("golden/eval_canonical_rule.md");
    assert_eq!(stdout(&out), golden);
}

#[test]
fn eval_writes_detail_and_csv_summary() {
    let dir = tempfile::tempdir().unwrap();
    let detail = dir.path().join("detail.csv");
    let out = run(
        &[
            "eval",
            "run",
            "--dataset",
            data("canonical.jsonl").to_str().unwrap(),
            "--provider-config",
            data("rule.toml").to_str().unwrap(),
            "--format",
            "csv",
            "--parallelism",
            "3",
            "--detail-csv",
            detail.to_str().unwrap(),
        ],
        "",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = stdout(&out);
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("provider,generation_rate,"));
    assert_eq!(
        lines.next().unwrap(),
        "rule-based,100.00,0.00,0.00,100.00,100.00,0.00,0.00"
    );
    let detail = std::fs::read_to_string(&detail).unwrap();
    assert_eq!(detail.lines().count(), 41);
    assert!(detail.starts_with("id,category,generated,"));
}

#[test]
fn eval_reports_unavailable_provider_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let remote = dir.path().join("remote.toml");
    std::fs::write(
        &remote,
        "kind = \"remote_chat\"\nname = \"offline\"\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\n\
         model = \"m\"\ncredential_env = \"TRADESLOT_TEST_UNSET_KEY\"\nmax_retries = 0\n",
    )
    .unwrap();
    let out = bin()
        .env_remove("TRADESLOT_TEST_UNSET_KEY")
        .args(["eval", "run", "--dataset"])
        .arg(data("canonical.jsonl"))
        .arg("--provider-config")
        .arg(data("rule.toml"))
        .arg("--provider-config")
        .arg(&remote)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let table = stdout(&out);
    assert!(table.contains("| rule-based | 100.00 |"), "{table}");
    assert!(
        table.contains("| offline | 0.00 | n/a | n/a | 0.00 | 0.00 | 100.00 | 0.00 |"),
        "{table}"
    );
    assert!(stderr(&out).contains("40 record(s)"));
}

#[test]
fn config_with_literal_key_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let remote = dir.path().join("remote.toml");
    std::fs::write(
        &remote,
        "kind = \"remote_chat\"\nendpoint = \"http://x\"\nmodel = \"m\"\napi_key = \"sk-1\"\n",
    )
    .unwrap();
    let out = bin()
        .args(["eval", "run", "--dataset"])
        .arg(data("canonical.jsonl"))
        .arg("--provider-config")
        .arg(&remote)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("api_key"), "{}", stderr(&out));

    let service = dir.path().join("service.toml");
    std::fs::write(&service, "api_key = \"sk-1\"\n").unwrap();
    let out = bin().args(["serve", "--config"]).arg(&service).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("api_key"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["eval", "run"], "").status.code(), Some(2));
    assert_eq!(run(&["bogus"], "").status.code(), Some(2));
    assert_eq!(run(&["forge", "noise"], "").status.code(), Some(2));
}

#[test]
fn dataset_validate_reports_line_numbers() {
    let ok = run(
        &[
            "dataset",
            "validate",
            data("canonical.jsonl").to_str().unwrap(),
            "--manifest",
            data("canonical.manifest.toml").to_str().unwrap(),
        ],
        "",
    );
    assert!(ok.status.success(), "{}", stderr(&ok));

    let mut lines: Vec<String> = canonical().lines().take(3).map(str::to_string).collect();
    lines.push(lines[0].clone());
    let mut broken: Value = serde_json::from_str(&lines[1]).unwrap();
    broken["gold_followups"] = serde_json::json!([]);
    lines[1] = broken.to_string();
    lines.push("{not json".into());
    let out = run(&["dataset", "validate", "-"], &lines.join("\n"));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("line 4: duplicate id c01"), "{err}");
    assert!(err.contains("line 5"), "{err}");
    assert!(!err.contains("line 1:"), "{err}");
}

#[test]
fn forge_noise_is_seeded_and_keeps_labels() {
    let input = canonical();
    let a = run(&["forge", "noise", "--seed", "11"], &input);
    let b = run(&["forge", "noise", "--seed", "11"], &input);
    let c = run(&["forge", "noise", "--seed", "12"], &input);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    for (src, out) in input.lines().zip(stdout(&a).lines()) {
        let src: Value = serde_json::from_str(src).unwrap();
        let out: Value = serde_json::from_str(out).unwrap();
        assert_eq!(out["id"], format!("{}-n11", src["id"].as_str().unwrap()));
        assert_eq!(out["source_id"], src["id"]);
        assert_eq!(out["gold"], src["gold"]);
        assert_eq!(out["category"], src["category"]);
    }
    let silent = run(
        &[
            "forge",
            "noise",
            "--seed",
            "1",
            "--filler-p",
            "0",
            "--punctuation-p",
            "0",
            "--code-mix-p",
            "0",
        ],
        &input,
    );
    for (src, out) in input.lines().zip(stdout(&silent).lines()) {
        let src: Value = serde_json::from_str(src).unwrap();
        let out: Value = serde_json::from_str(out).unwrap();
        assert_eq!(out["input_text"], src["input_text"]);
    }
    let bad = run(&["forge", "noise", "--seed", "1", "--filler-p", "1.5"], &input);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn forge_slice_spans_rebuild_each_input() {
    let input = canonical();
    let out = run(&["forge", "slice", "--target", "5"], &input);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rebuilt: std::collections::BTreeMap<String, String> = Default::default();
    for line in stdout(&out).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        rebuilt
            .entry(v["source_id"].as_str().unwrap().to_string())
            .or_default()
            .push_str(v["source_span"].as_str().unwrap());
        assert!(v.get("gold").is_none());
    }
    for line in input.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(rebuilt[v["id"].as_str().unwrap()], v["input_text"].as_str().unwrap());
    }
}

#[test]
fn repl_walks_through_a_clarification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("service.toml");
    std::fs::write(
        &cfg,
        format!(
            "provider_config = {:?}\nfeed = {:?}\n",
            data("rule.toml").to_str().unwrap(),
            data("feed.csv").to_str().unwrap()
        ),
    )
    .unwrap();
    let out = run(
        &["repl", "--config", cfg.to_str().unwrap()],
        "I want to buy 100 shares of BYD\nmarket order\nconfirm\nquit\n",
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("Would you like to place a market order or a limit order?"),
        "{text}"
    );
    assert!(text.contains("Filled: buy 100 002594"), "{text}");
    assert!(text.contains("[executed]"), "{text}");
}
