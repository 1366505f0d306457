use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use tradeslot_core::bench::{
    compute_metrics, emit_report, evaluate_record, load_dataset, run_eval, DatasetManifest, Evaluator, MetricsCounts,
    ReportFormat,
};
use tradeslot_core::extract::state_kinds;
use tradeslot_core::forge::{inject_noise, slice, NoiseSpec, ProtectedTokens};
use tradeslot_core::gateway::{rule_extract, GatewayError, RuleBasedProvider, ScriptedProvider};
use tradeslot_core::order::StateKind;
use tradeslot_core::wire::to_wire_json_pretty;
use tradeslot_core::{
    compare_drafts, parse_draft, ExtractionPolicy, FieldName, FieldState, OrderDraft, Strategy, SymbolDirectory,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn directory() -> SymbolDirectory {
    SymbolDirectory::load(&data("symbols.txt")).unwrap()
}

#[test]
fn reference_rows_round_trip() {
    let inputs = read(&fixture("reference_rows/inputs.txt"));
    let inputs: Vec<&str> = inputs.lines().collect();
    assert_eq!(inputs.len(), 3);
    for (i, input) in inputs.iter().enumerate() {
        let gold_text = read(&fixture(&format!("reference_rows/row{}.json", i + 1)));
        let gold = parse_draft(&gold_text, ExtractionPolicy::Strict, None).unwrap().draft;
        assert_eq!(to_wire_json_pretty(&gold), gold_text.trim_end(), "row {}", i + 1);
        assert!(compare_drafts(&gold, &gold).is_empty());
        assert_eq!(
            rule_extract(input, &SymbolDirectory::builtin()).order,
            gold,
            "row {}",
            i + 1
        );
    }
}

/// Decode rules restated independently of the parser.
fn decode_oracle(field: &str, spelling: &str, context: &str, policy: &str) -> &'static str {
    let strict = policy == "strict";
    match spelling {
        "null" => "unknown",
        "\"None\"" if field == "price" && context != "limit" => "not_applicable",
        "\"None\"" | "\"null\"" | "\"NULL\"" | "\"none\"" => {
            if strict {
                "error"
            } else {
                "unknown"
            }
        }
        "value" if field == "price" && context == "market" => {
            if strict {
                "error"
            } else {
                "not_applicable+warning"
            }
        }
        "value" => "present",
        other => panic!("unexpected spelling {other}"),
    }
}

fn valid_value(field: &str) -> &'static str {
    match field {
        "strategy" => "\"limit order\"",
        "symbol" => "\"600519\"",
        "order_type" => "\"sell\"",
        "quantity" => "300",
        "price" => "12.5",
        _ => unreachable!(),
    }
}

fn observed(field: &str, spelling: &str, context: &str, policy: ExtractionPolicy) -> String {
    let raw = if spelling == "value" {
        valid_value(field)
    } else {
        spelling
    };
    let strategy = match (field, context) {
        ("strategy", _) => raw,
        (_, "market") => "\"market order\"",
        (_, "limit") => "\"limit order\"",
        _ => "null",
    };
    let json = format!(r#"{{"strategy": {strategy}, "{field}": {raw}}}"#);
    let json = if field == "strategy" {
        format!(r#"{{"strategy": {raw}}}"#)
    } else {
        json
    };
    let name = FieldName::from_wire_key(field).unwrap();
    match parse_draft(&json, policy, None) {
        Err(_) => "error".into(),
        Ok(parsed) => {
            let kind = match parsed.draft.state_kind(name) {
                StateKind::Present => "present",
                StateKind::Unknown => "unknown",
                StateKind::NotApplicable => "not_applicable",
            };
            if parsed.warnings.is_empty() {
                kind.to_string()
            } else {
                format!("{kind}+warning")
            }
        }
    }
}

#[test]
fn tristate_decode_table() {
    let table = read(&fixture("tristate_table.tsv"));
    let mut seen = BTreeSet::new();
    for line in table.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [field, spelling, context, policy, outcome] = cols[..] else {
            panic!("bad row {line}")
        };
        assert_eq!(
            decode_oracle(field, spelling, context, policy),
            outcome,
            "table vs oracle: {line}"
        );
        let policy_value: ExtractionPolicy = policy.parse().unwrap();
        assert_eq!(
            observed(field, spelling, context, policy_value),
            outcome,
            "parser vs table: {line}"
        );
        assert!(seen.insert((field, spelling, context, policy)), "duplicate row {line}");
    }
    let spellings = ["null", "\"null\"", "\"NULL\"", "\"None\"", "\"none\"", "value"];
    let mut expected = BTreeSet::new();
    for field in ["strategy", "symbol", "order_type", "quantity", "price"] {
        let contexts: &[&str] = if field == "price" {
            &["market", "limit", "null"]
        } else {
            &["-"]
        };
        for s in spellings {
            for c in contexts {
                for p in ["strict", "lenient"] {
                    expected.insert((field, s, *c, p));
                }
            }
        }
    }
    assert_eq!(seen, expected);
}

#[test]
fn compare_drafts_state_grid() {
    let states: [FieldState<Strategy>; 4] = [
        FieldState::Present(Strategy::LimitOrder),
        FieldState::Present(Strategy::MarketOrder),
        FieldState::Unknown,
        FieldState::NotApplicable,
    ];
    // (gold, predicted) -> "ok" | "missing" | "wrong"
    let expect = |g: usize, p: usize| match (g, p) {
        (0, 0) | (1, 1) => "ok",
        (0 | 1, 2) => "missing",
        (0 | 1, _) => "wrong",
        (_, 0 | 1) => "wrong",
        _ => "ok",
    };
    for (gi, g) in states.iter().enumerate() {
        for (pi, p) in states.iter().enumerate() {
            let mut gold = OrderDraft::empty();
            gold.strategy = g.clone();
            let mut pred = OrderDraft::empty();
            pred.strategy = p.clone();
            let diff = compare_drafts(&gold, &pred);
            let got = if diff.missing.contains(&FieldName::Strategy) {
                "missing"
            } else if diff.wrong.contains(&FieldName::Strategy) {
                "wrong"
            } else {
                "ok"
            };
            assert_eq!(got, expect(gi, pi), "gold {g:?} predicted {p:?}");
        }
    }
}

fn metrics_provider() -> ScriptedProvider {
    let records = load_dataset(&fixture("metrics_records.jsonl")).unwrap();
    let text: BTreeMap<String, String> = records.iter().map(|r| (r.id.clone(), r.input_text.clone())).collect();
    let mut provider = ScriptedProvider::new();
    for line in read(&fixture("metrics_replies.jsonl")).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let utterance = &text[v["id"].as_str().unwrap()];
        provider = match v.get("reply").and_then(|r| r.as_str()) {
            Some(reply) => provider.reply(utterance, reply),
            None => provider.fail(utterance, GatewayError::Timeout),
        };
    }
    provider
}

#[test]
fn metrics_fixture_matches_hand_count() {
    let records = load_dataset(&fixture("metrics_records.jsonl")).unwrap();
    let expected: toml::Table = read(&fixture("metrics_expected.toml")).parse().unwrap();
    let ev = Evaluator::new(Box::new(metrics_provider()), SymbolDirectory::builtin());
    let run = run_eval(&records, &ev, 3).unwrap();

    let counts = &expected["counts"];
    let c: MetricsCounts = run.report.counts;
    let got = [
        ("total_inputs", c.total_inputs),
        ("json_outputs", c.json_outputs),
        ("missing_json_outputs", c.missing_json_outputs),
        ("error_json_outputs", c.error_json_outputs),
        ("correct_json_outputs", c.correct_json_outputs),
        ("total_required_followups", c.total_required_followups),
        ("followups", c.followups),
        ("missing_followups", c.missing_followups),
        ("extra_followups", c.extra_followups),
    ];
    for (name, value) in got {
        assert_eq!(counts[name].as_integer().unwrap() as u64, value, "{name}");
    }
    let rates = &expected["rates"];
    let r = &run.report;
    for (name, rate) in [
        ("generation_rate", r.generation_rate()),
        ("missing_rate", r.missing_rate()),
        ("error_rate", r.error_rate()),
        ("accuracy", r.accuracy()),
        ("followup_rate", r.followup_rate()),
        ("missed_followup_rate", r.missed_followup_rate()),
        ("extra_followup_rate", r.extra_followup_rate()),
    ] {
        assert_eq!(rates[name].as_str().unwrap(), rate.to_string(), "{name}");
    }

    let mut reversed = run.outcomes.clone();
    reversed.reverse();
    assert_eq!(compute_metrics(ev.name(), &reversed, &records).unwrap(), run.report);
}

#[test]
fn canonical_corpus_loads_and_matches_manifest() {
    let records = load_dataset(&data("canonical.jsonl")).unwrap();
    assert_eq!(records.len(), 40);
    DatasetManifest::load(&data("canonical.manifest.toml"))
        .unwrap()
        .check(&records)
        .unwrap();
    let dir = directory();
    for r in &records {
        assert_eq!(rule_extract(&r.input_text, &dir).order, r.expected_draft(), "{}", r.id);
    }
}

#[test]
fn gold_against_itself_is_perfect() {
    let records = load_dataset(&data("canonical.jsonl")).unwrap();
    let mut outcomes = Vec::new();
    let ev = Evaluator::new(Box::new(RuleBasedProvider::new(directory())), directory());
    for r in &records {
        let mut o = evaluate_record(r, &ev);
        o.predicted = Some(r.expected_draft());
        o.diff = Some(compare_drafts(&r.expected_draft(), &r.expected_draft()));
        outcomes.push(o);
    }
    let report = compute_metrics("gold", &outcomes, &records).unwrap();
    assert_eq!(report.accuracy().to_string(), "100.00");
    assert_eq!(report.missing_rate().to_string(), "0.00");
    assert_eq!(report.error_rate().to_string(), "0.00");
}

#[test]
fn rule_eval_is_order_independent() {
    let records = load_dataset(&data("canonical.jsonl")).unwrap();
    let ev = Evaluator::new(Box::new(RuleBasedProvider::new(directory())), directory());
    let one = run_eval(&records, &ev, 1).unwrap();
    let eight = run_eval(&records, &ev, 8).unwrap();
    let md = |run: &tradeslot_core::bench::EvalRun| {
        emit_report(std::slice::from_ref(&run.report), ReportFormat::Markdown).unwrap()
    };
    assert_eq!(md(&one), md(&eight));
    assert_eq!(one.outcomes, eight.outcomes);
    let r = &one.report;
    assert_eq!(r.generation_rate().to_string(), "100.00");
    assert_eq!(r.accuracy().to_string(), "100.00");
    assert_eq!(r.missed_followup_rate().to_string(), "0.00");
    assert_eq!(r.extra_followup_rate().to_string(), "0.00");
}

const SKYWORTH: &str = "The Skyworth figure in my hand has risen a lot, I decided to take advantage of the good market price, sell all 300 shares in my hand.";

#[test]
fn noise_golden() {
    let protected = ProtectedTokens::from_directory(&directory());
    let out = inject_noise(SKYWORTH, &NoiseSpec::new(6), &protected).unwrap();
    assert_eq!(out, read(&fixture("../golden/noise_skyworth_seed6.txt")).trim_end());
    assert!(out.contains("300 shares"));
}

#[test]
fn slice_golden() {
    let segs = slice(SKYWORTH, 10);
    assert_eq!(segs[0].text, "The Skyworth figure in my hand has risen a lot.");
}

#[test]
fn state_kinds_of_reference_rows() {
    let row3 = parse_draft(
        &read(&fixture("reference_rows/row3.json")),
        ExtractionPolicy::Strict,
        None,
    )
    .unwrap()
    .draft;
    assert_eq!(
        state_kinds(&row3),
        [
            StateKind::Present,
            StateKind::Present,
            StateKind::Present,
            StateKind::NotApplicable,
            StateKind::Present
        ]
    );
}
