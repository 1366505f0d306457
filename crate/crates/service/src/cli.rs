//! Stream-level commands behind the `tradeslot` binary.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde_json::{Map, Value};
use tradeslot_core::bench::{
    emit_detail_csv, emit_report, load_dataset, run_eval, DatasetManifest, DatasetRecord, Evaluator, ReportFormat,
};
use tradeslot_core::dialogue::{Event, OutboundMessage, Session, SessionConfig, SessionState};
use tradeslot_core::exchange::{PriceFeed, Venue};
use tradeslot_core::extract::FollowupLexicon;
use tradeslot_core::forge::{inject_noise, slice, NoiseSpec, ProtectedTokens};
use tradeslot_core::gateway::{extraction_transcript, ChatProvider, ProviderConfig};
use tradeslot_core::wire::to_wire_json;
use tradeslot_core::{ExtractionPolicy, SymbolDirectory};

pub struct EvalArgs<'a> {
    pub dataset: &'a Path,
    pub provider_configs: &'a [std::path::PathBuf],
    pub parallelism: usize,
    pub format: ReportFormat,
    pub policy: ExtractionPolicy,
    pub lexicon: Option<FollowupLexicon>,
}

pub struct EvalOutput {
    pub report: String,
    pub detail_csv: Vec<(String, String)>,
    pub errored: usize,
}

/// Runs every provider over the dataset. Providers are scored one after another.
pub fn eval(args: &EvalArgs<'_>) -> anyhow::Result<EvalOutput> {
    let records = load_dataset(args.dataset)?;
    let mut reports = Vec::new();
    let mut detail_csv = Vec::new();
    let mut errored = 0;
    for path in args.provider_configs {
        let cfg = ProviderConfig::load(path).with_context(|| format!("provider config {}", path.display()))?;
        let mut evaluator = Evaluator::from_config(&cfg).with_policy(args.policy);
        if let Some(lexicon) = &args.lexicon {
            evaluator = evaluator.with_lexicon(lexicon.clone());
        }
        if let Some(e) = evaluator.setup_error() {
            tracing::warn!(provider = evaluator.name(), error = %e, "provider unavailable");
        }
        let run = run_eval(&records, &evaluator, args.parallelism)?;
        errored += run.errored().count();
        detail_csv.push((evaluator.name().to_string(), emit_detail_csv(&run.outcomes, &records)?));
        reports.push(run.report);
    }
    Ok(EvalOutput {
        report: emit_report(&reports, args.format)?,
        detail_csv,
        errored,
    })
}

/// Checks record invariants and, if given, the manifest counts.
/// Returns one diagnostic per problem; empty means valid.
pub fn validate_dataset(text: &str, manifest: Option<&DatasetManifest>) -> Vec<String> {
    let mut problems = Vec::new();
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match DatasetRecord::from_json_line(line, line_no) {
            Ok(record) => {
                if let Err(e) = record.check() {
                    problems.push(format!("line {line_no}: {e}"));
                }
                if let Some(first) = seen.insert(record.id.clone(), line_no) {
                    problems.push(format!(
                        "line {line_no}: duplicate id {} (first on line {first})",
                        record.id
                    ));
                }
                records.push(record);
            }
            Err(e) => problems.push(e.to_string()),
        }
    }
    if problems.is_empty() {
        if let Some(m) = manifest {
            if let Err(e) = m.check(&records) {
                problems.push(e.to_string());
            }
        }
    }
    problems
}

fn read_objects(input: impl BufRead) -> impl Iterator<Item = anyhow::Result<(usize, Map<String, Value>)>> {
    input.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some(Err(e.into())),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(match serde_json::from_str::<Value>(&l) {
                Ok(Value::Object(map)) => Ok((line_no, map)),
                Ok(_) => Err(anyhow::anyhow!("line {line_no}: expected a JSON object")),
                Err(e) => Err(anyhow::anyhow!("line {line_no}: {e}")),
            }),
        }
    })
}

fn text_field(map: &Map<String, Value>, line_no: usize) -> anyhow::Result<String> {
    match map.get("input_text") {
        Some(Value::String(s)) => Ok(s.clone()),
        _ => bail!("line {line_no}: missing string field input_text"),
    }
}

fn id_field(map: &Map<String, Value>, line_no: usize) -> String {
    match map.get("id") {
        Some(Value::String(s)) => s.clone(),
        _ => format!("line{line_no}"),
    }
}

/// Rewrites `input_text` of each JSONL object with noise; other fields pass through.
/// The id gains a `-n<seed>` suffix and a `source_id` field records the original.
pub fn forge_noise(
    input: impl BufRead,
    mut output: impl Write,
    spec: &NoiseSpec,
    protected: &ProtectedTokens,
) -> anyhow::Result<usize> {
    spec.validate()?;
    let mut n = 0;
    for item in read_objects(input) {
        let (line_no, mut map) = item?;
        let text = text_field(&map, line_no)?;
        let id = id_field(&map, line_no);
        let mut line_spec = spec.clone();
        line_spec.seed = spec.seed.wrapping_add(line_no as u64 - 1);
        map.insert(
            "input_text".into(),
            Value::String(inject_noise(&text, &line_spec, protected)?),
        );
        map.insert("id".into(), Value::String(format!("{id}-n{}", spec.seed)));
        map.insert("source_id".into(), Value::String(id));
        writeln!(output, "{}", Value::Object(map))?;
        n += 1;
    }
    Ok(n)
}

/// Splits each record's `input_text` into short segments, one output object per segment.
/// Labels are not carried over: a fragment needs fresh annotation.
pub fn forge_slice(input: impl BufRead, mut output: impl Write, target: usize) -> anyhow::Result<usize> {
    let mut n = 0;
    for item in read_objects(input) {
        let (line_no, map) = item?;
        let text = text_field(&map, line_no)?;
        let id = id_field(&map, line_no);
        for (k, seg) in slice(&text, target).into_iter().enumerate() {
            let obj = serde_json::json!({
                "id": format!("{id}-s{}", k + 1),
                "input_text": seg.text,
                "source_id": id,
                "segment": k + 1,
                "source_span": seg.source,
            });
            writeln!(output, "{obj}")?;
            n += 1;
        }
    }
    Ok(n)
}

/// Line-oriented chat. `confirm`/`yes` executes a ready order, `new` starts over, `quit` exits.
pub fn repl(
    input: impl BufRead,
    mut output: impl Write,
    provider: &dyn ChatProvider,
    directory: &SymbolDirectory,
    feed: PriceFeed,
    config: SessionConfig,
) -> anyhow::Result<()> {
    let mut venue = Venue::new(feed);
    let mut session = Session::new(config.clone(), directory.clone());
    writeln!(output, "Describe your trade.")?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let event = match text.to_ascii_lowercase().as_str() {
            "quit" | "exit" => break,
            "new" => {
                session = Session::new(config.clone(), directory.clone());
                writeln!(output, "Describe your trade.")?;
                continue;
            }
            "confirm" | "yes" | "y" if matches!(session.state(), SessionState::ReadyToExecute { .. }) => {
                Event::ConfirmExecute
            }
            _ => Event::UserMessage(text.to_string()),
        };
        let mut pending = vec![event];
        while let Some(event) = pending.pop() {
            let messages = match session.handle(event, &mut venue) {
                Ok(m) => m,
                Err(e) => {
                    writeln!(output, "error: {e}")?;
                    break;
                }
            };
            for m in messages {
                match m {
                    OutboundMessage::RequestCompletion { utterance } => {
                        match provider.complete(&extraction_transcript(&utterance, directory)) {
                            Ok(reply) => pending.push(Event::ProviderReply(reply)),
                            Err(e) => {
                                writeln!(output, "provider error: {e}")?;
                                session = Session::new(config.clone(), directory.clone());
                            }
                        }
                    }
                    OutboundMessage::Question { text, .. } | OutboundMessage::Notice(text) => {
                        writeln!(output, "{text}")?
                    }
                    OutboundMessage::DraftUpdated(draft) => writeln!(output, "draft: {}", to_wire_json(&draft))?,
                    OutboundMessage::Report(report) => writeln!(output, "{report}")?,
                }
            }
        }
        if session.state().is_terminal() {
            writeln!(output, "[{}] type 'new' for another order.", session.state().name())?;
        }
    }
    Ok(())
}
