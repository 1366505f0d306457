//! Evaluation corpus, single-shot scoring runner and the seven structured-output rates.
//!
//! | Rate | Numerator | Denominator |
//! |---|---|---|
//! | generation | JSON outputs | total inputs |
//! | missing | JSON outputs with a missing field | JSON outputs |
//! | error | JSON outputs with a wrong field | JSON outputs |
//! | accuracy | correct JSON outputs | total inputs |
//! | follow-up | required records that asked anything | required records |
//! | missed follow-up | required records whose asks do not cover the gold set | required records |
//! | extra follow-up | required records that asked about a field outside the gold set | required records |
//!
//! A record is *required* when its gold draft has missing fields. Generation,
//! accuracy and follow-up are higher-is-better; the other four are lower-is-better.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::extract::{compare_drafts, parse_draft_object, parse_reply, ExtractionPolicy, FieldDiff, FollowupLexicon};
use crate::gateway::{build_provider, extraction_transcript, ChatProvider, GatewayError, ProviderConfig};
use crate::lexicon::Intent;
use crate::order::{missing_fields, FieldName, OrderDraft, SymbolDirectory};
use crate::wire::WireDraft;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("record {id}: {detail}")]
    InvariantViolation { id: String, detail: String },
    #[error("outcomes do not line up with records: {0}")]
    MisalignedOutcomes(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub id: String,
    pub input_text: String,
    pub category: Intent,
    /// Present exactly for trade instructions.
    pub gold: Option<OrderDraft>,
    pub gold_followups: BTreeSet<FieldName>,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: String,
    input_text: String,
    category: Intent,
    gold: Option<Map<String, Value>>,
    #[serde(default)]
    gold_followups: Vec<String>,
    #[serde(default)]
    provenance: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    input_text: &'a str,
    category: Intent,
    gold: Option<WireDraft>,
    gold_followups: Vec<&'static str>,
    provenance: &'a str,
}

impl DatasetRecord {
    pub fn new(id: &str, input_text: &str, category: Intent, gold: Option<OrderDraft>) -> Self {
        let gold_followups = gold.as_ref().map(missing_fields).unwrap_or_default();
        DatasetRecord {
            id: id.to_string(),
            input_text: input_text.to_string(),
            category,
            gold,
            gold_followups,
            provenance: String::new(),
        }
    }

    /// Draft the record is scored against; records without gold expect an empty draft.
    pub fn expected_draft(&self) -> OrderDraft {
        self.gold.clone().unwrap_or_else(OrderDraft::empty)
    }

    pub fn requires_followup(&self) -> bool {
        !self.gold_followups.is_empty()
    }

    pub fn check(&self) -> Result<(), BenchError> {
        let violation = |detail: String| BenchError::InvariantViolation {
            id: self.id.clone(),
            detail,
        };
        if self.id.trim().is_empty() {
            return Err(violation("empty id".into()));
        }
        match (&self.gold, self.category) {
            (None, Intent::TradeInstruction) => return Err(violation("trade instruction without gold".into())),
            (Some(_), Intent::TradeRelated | Intent::Other) => {
                return Err(violation("gold draft on a non-instruction record".into()))
            }
            _ => {}
        }
        let expected = self.gold.as_ref().map(missing_fields).unwrap_or_default();
        if expected != self.gold_followups {
            return Err(violation(format!(
                "gold_followups {:?} differ from the missing fields {:?}",
                names(&self.gold_followups),
                names(&expected)
            )));
        }
        Ok(())
    }

    pub fn from_json_line(line: &str, line_no: usize) -> Result<Self, BenchError> {
        let parse_err = |detail: String| BenchError::Parse { line: line_no, detail };
        let wire: RecordWire = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let gold = match &wire.gold {
            None => None,
            Some(map) => Some(
                parse_draft_object(map, ExtractionPolicy::Strict, None)
                    .map_err(|e| parse_err(format!("gold: {e}")))?
                    .draft,
            ),
        };
        let mut gold_followups = BTreeSet::new();
        for key in &wire.gold_followups {
            let field = FieldName::from_wire_key(key).ok_or_else(|| parse_err(format!("unknown field {key:?}")))?;
            gold_followups.insert(field);
        }
        Ok(DatasetRecord {
            id: wire.id,
            input_text: wire.input_text,
            category: wire.category,
            gold,
            gold_followups,
            provenance: wire.provenance,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RecordOut {
            id: &self.id,
            input_text: &self.input_text,
            category: self.category,
            gold: self.gold.as_ref().map(WireDraft::from),
            gold_followups: self.gold_followups.iter().map(|f| f.wire_key()).collect(),
            provenance: &self.provenance,
        })
        .expect("record serializes")
    }
}

fn names(fields: &BTreeSet<FieldName>) -> Vec<&'static str> {
    fields.iter().map(|f| f.wire_key()).collect()
}

/// Parses and validates JSONL. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, BenchError> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = DatasetRecord::from_json_line(line, idx + 1)?;
        record.check()?;
        if !seen.insert(record.id.clone()) {
            return Err(BenchError::InvariantViolation {
                id: record.id,
                detail: "duplicate id".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(&text)
}

/// Expected record counts per category.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub trade_instruction: usize,
    pub trade_related: usize,
    pub other: usize,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn check(&self, records: &[DatasetRecord]) -> Result<(), BenchError> {
        let count = |c: Intent| records.iter().filter(|r| r.category == c).count();
        let actual = (
            count(Intent::TradeInstruction),
            count(Intent::TradeRelated),
            count(Intent::Other),
        );
        let expected = (self.trade_instruction, self.trade_related, self.other);
        if actual != expected {
            return Err(BenchError::Manifest(format!(
                "category counts (instruction, related, other) are {actual:?}, manifest says {expected:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOutcome {
    pub id: String,
    pub generated: bool,
    pub predicted: Option<OrderDraft>,
    /// Present iff `generated`.
    pub diff: Option<FieldDiff>,
    pub asked: BTreeSet<FieldName>,
    pub raw_reply: Option<String>,
    pub error: Option<String>,
}

impl EvalOutcome {
    pub fn not_generated(id: &str, raw_reply: Option<String>, error: String) -> Self {
        EvalOutcome {
            id: id.to_string(),
            generated: false,
            predicted: None,
            diff: None,
            asked: BTreeSet::new(),
            raw_reply,
            error: Some(error),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.generated && self.diff.as_ref().is_some_and(FieldDiff::is_empty)
    }
}

/// Provider plus everything needed to score one reply.
pub struct Evaluator {
    name: String,
    provider: Result<Box<dyn ChatProvider>, GatewayError>,
    directory: SymbolDirectory,
    policy: ExtractionPolicy,
    lexicon: FollowupLexicon,
}

impl Evaluator {
    pub fn new(provider: Box<dyn ChatProvider>, directory: SymbolDirectory) -> Self {
        Evaluator {
            name: provider.name().to_string(),
            provider: Ok(provider),
            directory,
            policy: ExtractionPolicy::Strict,
            lexicon: FollowupLexicon::default(),
        }
    }

    /// A provider that cannot be built still yields an evaluator; every record
    /// then scores as not generated.
    pub fn from_config(cfg: &ProviderConfig) -> Self {
        let directory = cfg.load_directory().unwrap_or_else(|_| SymbolDirectory::builtin());
        let provider = cfg.load_directory().and_then(|_| build_provider(cfg));
        Evaluator {
            name: cfg.display_name(),
            provider,
            directory,
            policy: ExtractionPolicy::Strict,
            lexicon: FollowupLexicon::default(),
        }
    }

    pub fn with_policy(mut self, policy: ExtractionPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Replaces the keyword table used to classify free-text follow-up questions.
    pub fn with_lexicon(mut self, lexicon: FollowupLexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn setup_error(&self) -> Option<&GatewayError> {
        self.provider.as_ref().err()
    }
}

/// One single-shot provider call, decoded and compared to gold.
pub fn evaluate_record(record: &DatasetRecord, evaluator: &Evaluator) -> EvalOutcome {
    let provider = match &evaluator.provider {
        Ok(p) => p,
        Err(e) => return EvalOutcome::not_generated(&record.id, None, format!("provider unavailable: {e}")),
    };
    let transcript = extraction_transcript(&record.input_text, &evaluator.directory);
    let reply = match provider.complete(&transcript) {
        Ok(r) => r,
        Err(e) => return EvalOutcome::not_generated(&record.id, None, e.to_string()),
    };
    let parsed = match parse_reply(&reply, evaluator.policy, &evaluator.lexicon) {
        Ok(p) => p,
        Err(e) => return EvalOutcome::not_generated(&record.id, Some(reply), e.to_string()),
    };
    let diff = compare_drafts(&record.expected_draft(), &parsed.draft);
    EvalOutcome {
        id: record.id.clone(),
        generated: true,
        predicted: Some(parsed.draft),
        diff: Some(diff),
        asked: parsed.asked,
        raw_reply: Some(reply),
        error: None,
    }
}

/// A percentage kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        debug_assert!(numerator <= denominator);
        Rate { numerator, denominator }
    }

    pub fn is_defined(&self) -> bool {
        self.denominator > 0
    }

    pub fn percent(&self) -> Option<f64> {
        self.is_defined()
            .then(|| 100.0 * self.numerator as f64 / self.denominator as f64)
    }

    /// Percentage in hundredths, rounded half up with integer arithmetic.
    pub fn basis_points(&self) -> Option<u64> {
        self.is_defined()
            .then(|| (self.numerator * 20_000 + self.denominator) / (2 * self.denominator))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.basis_points() {
            Some(bp) => write!(f, "{}.{:02}", bp / 100, bp % 100),
            None => f.write_str("n/a"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MetricsCounts {
    pub total_inputs: u64,
    pub json_outputs: u64,
    pub missing_json_outputs: u64,
    pub error_json_outputs: u64,
    pub correct_json_outputs: u64,
    pub total_required_followups: u64,
    pub followups: u64,
    pub missing_followups: u64,
    pub extra_followups: u64,
}

impl MetricsCounts {
    pub fn add(&mut self, record: &DatasetRecord, outcome: &EvalOutcome) {
        self.total_inputs += 1;
        if outcome.generated {
            self.json_outputs += 1;
            let diff = outcome.diff.clone().unwrap_or_default();
            self.missing_json_outputs += u64::from(!diff.missing.is_empty());
            self.error_json_outputs += u64::from(!diff.wrong.is_empty());
            self.correct_json_outputs += u64::from(diff.is_empty());
        }
        if record.requires_followup() {
            self.total_required_followups += 1;
            self.followups += u64::from(!outcome.asked.is_empty());
            self.missing_followups += u64::from(!outcome.asked.is_superset(&record.gold_followups));
            self.extra_followups += u64::from(!outcome.asked.is_subset(&record.gold_followups));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub provider: String,
    pub counts: MetricsCounts,
}

/// Column labels in report order.
pub const RATE_COLUMNS: [&str; 7] = [
    "Generation Rate",
    "Missing Rate",
    "Error Rate",
    "Accuracy",
    "Follow-up Rate",
    "Missed Follow-up Rate",
    "Extra Follow-up Rate",
];

impl MetricsReport {
    pub fn generation_rate(&self) -> Rate {
        Rate::new(self.counts.json_outputs, self.counts.total_inputs)
    }
    pub fn missing_rate(&self) -> Rate {
        Rate::new(self.counts.missing_json_outputs, self.counts.json_outputs)
    }
    pub fn error_rate(&self) -> Rate {
        Rate::new(self.counts.error_json_outputs, self.counts.json_outputs)
    }
    pub fn accuracy(&self) -> Rate {
        Rate::new(self.counts.correct_json_outputs, self.counts.total_inputs)
    }
    pub fn followup_rate(&self) -> Rate {
        Rate::new(self.counts.followups, self.counts.total_required_followups)
    }
    pub fn missed_followup_rate(&self) -> Rate {
        Rate::new(self.counts.missing_followups, self.counts.total_required_followups)
    }
    pub fn extra_followup_rate(&self) -> Rate {
        Rate::new(self.counts.extra_followups, self.counts.total_required_followups)
    }

    /// The seven rates in [`RATE_COLUMNS`] order.
    pub fn rates(&self) -> [Rate; 7] {
        [
            self.generation_rate(),
            self.missing_rate(),
            self.error_rate(),
            self.accuracy(),
            self.followup_rate(),
            self.missed_followup_rate(),
            self.extra_followup_rate(),
        ]
    }
}

/// Folds outcomes over records in id order. Outcome order does not matter.
pub fn compute_metrics(
    provider: &str,
    outcomes: &[EvalOutcome],
    records: &[DatasetRecord],
) -> Result<MetricsReport, BenchError> {
    if outcomes.len() != records.len() {
        return Err(BenchError::MisalignedOutcomes(format!(
            "{} outcomes for {} records",
            outcomes.len(),
            records.len()
        )));
    }
    let by_id: BTreeMap<&str, &EvalOutcome> = outcomes.iter().map(|o| (o.id.as_str(), o)).collect();
    if by_id.len() != outcomes.len() {
        return Err(BenchError::MisalignedOutcomes("duplicate outcome id".into()));
    }
    let mut sorted: Vec<&DatasetRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut counts = MetricsCounts::default();
    for record in sorted {
        let outcome = by_id
            .get(record.id.as_str())
            .ok_or_else(|| BenchError::MisalignedOutcomes(format!("no outcome for {}", record.id)))?;
        counts.add(record, outcome);
    }
    Ok(MetricsReport {
        provider: provider.to_string(),
        counts,
    })
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub outcomes: Vec<EvalOutcome>,
    pub report: MetricsReport,
}

impl EvalRun {
    pub fn errored(&self) -> impl Iterator<Item = &EvalOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some())
    }
}

/// Evaluates every record with at most `parallelism` calls in flight.
pub fn run_eval(records: &[DatasetRecord], evaluator: &Evaluator, parallelism: usize) -> Result<EvalRun, BenchError> {
    if parallelism == 0 {
        return Err(BenchError::ZeroParallelism);
    }
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(records.len()));
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(records.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = records.get(i) else { break };
                let outcome = evaluate_record(record, evaluator);
                if let Some(err) = &outcome.error {
                    tracing::warn!(id = %record.id, %err, "record not generated");
                }
                results.lock().expect("results lock").push(outcome);
            });
        }
    });
    let mut outcomes = results.into_inner().expect("results lock");
    outcomes.sort_by(|a, b| a.id.cmp(&b.id));
    let report = compute_metrics(evaluator.name(), &outcomes, records)?;
    Ok(EvalRun { outcomes, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (expected markdown or csv)")),
        }
    }
}

/// One row per provider, in the order given. `n/a` marks a zero denominator.
pub fn emit_report(reports: &[MetricsReport], format: ReportFormat) -> Result<String, BenchError> {
    match format {
        ReportFormat::Markdown => Ok(markdown(reports)),
        ReportFormat::Csv => summary_csv(reports),
    }
}

fn markdown(reports: &[MetricsReport]) -> String {
    let mut out = String::from("| Provider |");
    for col in RATE_COLUMNS {
        out.push_str(&format!(" {col} (%) |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(RATE_COLUMNS.len()));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} |", r.provider));
        for rate in r.rates() {
            out.push_str(&format!(" {rate} |"));
        }
        out.push('\n');
    }
    out.push_str("\nHigher is better: Generation Rate, Accuracy, Follow-up Rate. Lower is better: the rest.\n");
    out
}

pub const CSV_HEADER: [&str; 8] = [
    "provider",
    "generation_rate",
    "missing_rate",
    "error_rate",
    "accuracy",
    "followup_rate",
    "missed_followup_rate",
    "extra_followup_rate",
];

fn summary_csv(reports: &[MetricsReport]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let mut row = vec![r.provider.clone()];
        row.extend(r.rates().iter().map(Rate::to_string));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is utf-8"))
}

/// Per-record detail, one row per outcome in id order.
pub fn emit_detail_csv(outcomes: &[EvalOutcome], records: &[DatasetRecord]) -> Result<String, BenchError> {
    let by_id: BTreeMap<&str, &DatasetRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let join = |set: &BTreeSet<FieldName>| names(set).join(";");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id",
        "category",
        "generated",
        "missing_fields",
        "wrong_fields",
        "asked",
        "gold_followups",
        "error",
    ])?;
    for o in outcomes {
        let record = by_id
            .get(o.id.as_str())
            .ok_or_else(|| BenchError::MisalignedOutcomes(format!("no record for {}", o.id)))?;
        let diff = o.diff.clone().unwrap_or_default();
        let category = serde_json::to_value(record.category).expect("intent serializes");
        w.write_record([
            o.id.as_str(),
            category.as_str().unwrap_or_default(),
            if o.generated { "true" } else { "false" },
            &join(&diff.missing),
            &join(&diff.wrong),
            &join(&o.asked),
            &join(&record.gold_followups),
            o.error.as_deref().unwrap_or(""),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is utf-8"))
}
