//! Model reply text → [`OrderDraft`], and scoring of predicted drafts against gold.

use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::gateway::ReplyEnvelope;
use crate::order::{FieldName, FieldState, Money, OrderDraft, ShareCount, Side, StateKind, Strategy, TickerSymbol};
use crate::wire::NOT_APPLICABLE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no JSON object found in reply")]
    NoJsonFound,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("question does not map to any order field")]
    Unclassifiable,
    #[error("lexicon line {line}: {detail}")]
    Lexicon { line: usize, detail: String },
}

/// How forgiving the decoder is about tri-state spellings.
///
/// | raw value                              | Strict                | Lenient               |
/// |----------------------------------------|-----------------------|-----------------------|
/// | JSON `null`                            | Unknown               | Unknown               |
/// | `"None"`, price, strategy market/unset | NotApplicable         | NotApplicable         |
/// | `"None"` anywhere else                 | error                 | Unknown               |
/// | `"null"`, `"NULL"`, `"none"`, …        | error                 | Unknown               |
/// | valid value, price of a market order   | error                 | NotApplicable + warn  |
/// | valid value otherwise                  | Present               | Present               |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtractionPolicy {
    #[default]
    Strict,
    Lenient,
}

impl std::str::FromStr for ExtractionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(ExtractionPolicy::Strict),
            "lenient" => Ok(ExtractionPolicy::Lenient),
            other => Err(format!("unknown extraction policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDraft {
    pub draft: OrderDraft,
    pub warnings: Vec<String>,
}

/// Returns the first balanced `{…}` span that parses as a JSON object.
///
/// Braces inside string literals are ignored, so markdown fences and
/// surrounding prose fall away naturally.
pub fn extract_json_block(reply_text: &str) -> Result<&str, ExtractError> {
    let bytes = reply_text.as_bytes();
    let mut search_from = 0;
    while let Some(offset) = reply_text[search_from..].find('{') {
        let start = search_from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            let candidate = &reply_text[start..end];
            if matches!(serde_json::from_str::<Value>(candidate), Ok(Value::Object(_))) {
                return Ok(candidate);
            }
        }
        search_from = start + 1;
    }
    Err(ExtractError::NoJsonFound)
}

fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_draft(
    json_text: &str,
    policy: ExtractionPolicy,
    strategy_hint: Option<Strategy>,
) -> Result<ParsedDraft, ExtractError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| ExtractError::SchemaViolation(format!("invalid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(ExtractError::SchemaViolation("expected a JSON object".into()));
    };
    parse_draft_object(&map, policy, strategy_hint)
}

enum Decoded<T> {
    State(FieldState<T>),
    /// Parsed fine, but a present value not allowed here.
    Demoted(T),
}

pub fn parse_draft_object(
    map: &Map<String, Value>,
    policy: ExtractionPolicy,
    strategy_hint: Option<Strategy>,
) -> Result<ParsedDraft, ExtractError> {
    if policy == ExtractionPolicy::Strict {
        if let Some(key) = map.keys().find(|k| FieldName::from_wire_key(k).is_none()) {
            return Err(ExtractError::SchemaViolation(format!("unexpected key `{key}`")));
        }
    }
    let mut warnings = Vec::new();
    let raw = |f: FieldName| map.get(f.wire_key()).unwrap_or(&Value::Null);

    let strategy = decode_plain(FieldName::Strategy, raw(FieldName::Strategy), policy, parse_strategy)?;
    let context = match &strategy {
        FieldState::Present(s) => Some(*s),
        _ => strategy_hint,
    };
    let symbol = decode_plain(FieldName::Symbol, raw(FieldName::Symbol), policy, parse_symbol)?;
    let side = decode_plain(FieldName::OrderType, raw(FieldName::OrderType), policy, parse_side)?;
    let quantity = decode_plain(FieldName::Quantity, raw(FieldName::Quantity), policy, parse_quantity)?;
    let price = match decode_price(raw(FieldName::Price), policy, context)? {
        Decoded::State(s) => s,
        Decoded::Demoted(p) => {
            warnings.push(format!("market order carried price {p}; treated as not applicable"));
            FieldState::NotApplicable
        }
    };

    Ok(ParsedDraft {
        draft: OrderDraft {
            strategy,
            symbol,
            side,
            price,
            quantity,
        },
        warnings,
    })
}

fn is_null_spelling(s: &str) -> bool {
    s.eq_ignore_ascii_case("null") || s.eq_ignore_ascii_case("none")
}

fn decode_plain<T>(
    field: FieldName,
    raw: &Value,
    policy: ExtractionPolicy,
    parse: fn(&Value, ExtractionPolicy) -> Result<T, String>,
) -> Result<FieldState<T>, ExtractError> {
    match raw {
        Value::Null => Ok(FieldState::Unknown),
        Value::String(s) if is_null_spelling(s) => match policy {
            ExtractionPolicy::Strict => Err(ExtractError::SchemaViolation(format!(
                "`{field}` uses non-canonical empty value \"{s}\""
            ))),
            ExtractionPolicy::Lenient => Ok(FieldState::Unknown),
        },
        other => parse(other, policy)
            .map(FieldState::Present)
            .map_err(|e| ExtractError::SchemaViolation(format!("`{field}`: {e}"))),
    }
}

fn decode_price(
    raw: &Value,
    policy: ExtractionPolicy,
    context: Option<Strategy>,
) -> Result<Decoded<Money>, ExtractError> {
    let limit = context == Some(Strategy::LimitOrder);
    let market = context == Some(Strategy::MarketOrder);
    match raw {
        Value::String(s) if s == NOT_APPLICABLE && !limit => Ok(Decoded::State(FieldState::NotApplicable)),
        Value::String(s) if s == NOT_APPLICABLE => match policy {
            ExtractionPolicy::Strict => Err(ExtractError::SchemaViolation(
                "`price` is \"None\" on a limit order".into(),
            )),
            ExtractionPolicy::Lenient => Ok(Decoded::State(FieldState::Unknown)),
        },
        other => match decode_plain(FieldName::Price, other, policy, parse_price)? {
            FieldState::Present(p) if market => match policy {
                ExtractionPolicy::Strict => Err(ExtractError::SchemaViolation(format!(
                    "market order carries a price ({p})"
                ))),
                ExtractionPolicy::Lenient => Ok(Decoded::Demoted(p)),
            },
            state => Ok(Decoded::State(state)),
        },
    }
}

fn expect_str<'a>(raw: &'a Value, what: &str) -> Result<&'a str, String> {
    raw.as_str().ok_or_else(|| format!("expected {what}, got {raw}"))
}

fn parse_strategy(raw: &Value, policy: ExtractionPolicy) -> Result<Strategy, String> {
    let s = expect_str(raw, "a strategy string")?;
    let normalized = match policy {
        ExtractionPolicy::Strict => s.to_string(),
        ExtractionPolicy::Lenient => s.trim().to_ascii_lowercase().replace(['_', '-'], " "),
    };
    match normalized.as_str() {
        "market order" => Ok(Strategy::MarketOrder),
        "limit order" => Ok(Strategy::LimitOrder),
        "market" if policy == ExtractionPolicy::Lenient => Ok(Strategy::MarketOrder),
        "limit" if policy == ExtractionPolicy::Lenient => Ok(Strategy::LimitOrder),
        _ => Err(format!("unknown strategy \"{s}\"")),
    }
}

fn parse_side(raw: &Value, policy: ExtractionPolicy) -> Result<Side, String> {
    let s = expect_str(raw, "\"buy\" or \"sell\"")?;
    let normalized = match policy {
        ExtractionPolicy::Strict => s.to_string(),
        ExtractionPolicy::Lenient => s.trim().to_ascii_lowercase(),
    };
    match normalized.as_str() {
        "buy" => Ok(Side::Buy),
        "sell" => Ok(Side::Sell),
        _ => Err(format!("unknown order type \"{s}\"")),
    }
}

fn parse_symbol(raw: &Value, policy: ExtractionPolicy) -> Result<TickerSymbol, String> {
    let s = expect_str(raw, "a ticker string")?;
    let s = match policy {
        ExtractionPolicy::Strict => s,
        ExtractionPolicy::Lenient => s.trim(),
    };
    TickerSymbol::parse(s).map_err(|e| e.to_string())
}

fn number_text(raw: &Value) -> Result<String, String> {
    match raw {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.trim().to_string()),
        other => Err(format!("expected a number, got {other}")),
    }
}

fn parse_price(raw: &Value, _policy: ExtractionPolicy) -> Result<Money, String> {
    number_text(raw)?.parse::<Money>().map_err(|e| e.to_string())
}

fn parse_quantity(raw: &Value, _policy: ExtractionPolicy) -> Result<ShareCount, String> {
    let text = number_text(raw)?;
    // integral floats such as 200.0 are accepted
    let digits = match text.split_once('.') {
        Some((whole, frac)) if frac.bytes().all(|b| b == b'0') => whole,
        Some(_) => return Err(format!("quantity {text} is not an integer")),
        None => text.as_str(),
    };
    if digits.starts_with('-') {
        return Err(format!("quantity {text} is negative"));
    }
    let n: u64 = digits.parse().map_err(|_| format!("quantity {text} is not a number"))?;
    ShareCount::new(n).map_err(|e| e.to_string())
}

/// Per-record comparison of a predicted draft against gold.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldDiff {
    pub missing: BTreeSet<FieldName>,
    pub wrong: BTreeSet<FieldName>,
}

impl FieldDiff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.wrong.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Ok,
    Missing,
    Wrong,
}

fn classify<T: PartialEq>(gold: &FieldState<T>, predicted: &FieldState<T>) -> Verdict {
    use FieldState::*;
    match (gold, predicted) {
        (Present(g), Present(p)) if g == p => Verdict::Ok,
        (Present(_), Present(_)) => Verdict::Wrong,
        (Present(_), Unknown) => Verdict::Missing,
        (Present(_), NotApplicable) => Verdict::Wrong,
        (Unknown | NotApplicable, Present(_)) => Verdict::Wrong,
        (Unknown | NotApplicable, Unknown | NotApplicable) => Verdict::Ok,
    }
}

pub fn compare_drafts(gold: &OrderDraft, predicted: &OrderDraft) -> FieldDiff {
    let verdicts = [
        (FieldName::Strategy, classify(&gold.strategy, &predicted.strategy)),
        (FieldName::Symbol, classify(&gold.symbol, &predicted.symbol)),
        (FieldName::OrderType, classify(&gold.side, &predicted.side)),
        (FieldName::Price, classify(&gold.price, &predicted.price)),
        (FieldName::Quantity, classify(&gold.quantity, &predicted.quantity)),
    ];
    let mut diff = FieldDiff::default();
    for (field, verdict) in verdicts {
        match verdict {
            Verdict::Ok => {}
            Verdict::Missing => {
                diff.missing.insert(field);
            }
            Verdict::Wrong => {
                diff.wrong.insert(field);
            }
        }
    }
    diff
}

/// Keyword table mapping clarification questions to the field they ask about.
#[derive(Debug, Clone)]
pub struct FollowupLexicon {
    entries: Vec<(FieldName, String)>,
}

const DEFAULT_FOLLOWUP_LEXICON: &str = include_str!("../assets/followup_lexicon.tsv");

impl Default for FollowupLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_FOLLOWUP_LEXICON).expect("bundled lexicon parses")
    }
}

impl FollowupLexicon {
    /// `field<TAB>keyword` per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, ExtractError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (field, keyword) = line.split_once('\t').ok_or_else(|| ExtractError::Lexicon {
                line: idx + 1,
                detail: "expected `field<TAB>keyword`".into(),
            })?;
            let field = field
                .parse::<FieldName>()
                .map_err(|detail| ExtractError::Lexicon { line: idx + 1, detail })?;
            let keyword = keyword.trim().to_lowercase();
            if keyword.is_empty() {
                return Err(ExtractError::Lexicon {
                    line: idx + 1,
                    detail: "empty keyword".into(),
                });
            }
            entries.push((field, keyword));
        }
        Ok(FollowupLexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ExtractError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExtractError::Lexicon {
            line: 0,
            detail: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Field with the most keyword hits; ties go to the earlier field in
    /// clarification order.
    pub fn classify(&self, question_text: &str) -> Result<FieldName, ExtractError> {
        let lowered = question_text.to_lowercase();
        let mut scores = [0usize; 5];
        for (field, keyword) in &self.entries {
            if lowered.contains(keyword.as_str()) {
                scores[field_index(*field)] += 1;
            }
        }
        FieldName::ALL
            .into_iter()
            .zip(scores)
            .filter(|(_, score)| *score > 0)
            .max_by(|(fa, sa), (fb, sb)| sa.cmp(sb).then(fb.cmp(fa)))
            .map(|(field, _)| field)
            .ok_or(ExtractError::Unclassifiable)
    }
}

fn field_index(field: FieldName) -> usize {
    FieldName::ALL.iter().position(|f| *f == field).expect("field in ALL")
}

pub fn classify_followup_question(question_text: &str) -> Result<FieldName, ExtractError> {
    FollowupLexicon::default().classify(question_text)
}

/// A model reply decoded either from the structured envelope or from a bare
/// draft object plus free-text questions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReply {
    pub draft: OrderDraft,
    pub warnings: Vec<String>,
    /// Fields the model asked about.
    pub asked: BTreeSet<FieldName>,
    /// Free-text questions that matched no field.
    pub unclassified_questions: usize,
    pub non_trade: bool,
    pub structured: bool,
}

pub fn parse_reply(
    reply_text: &str,
    policy: ExtractionPolicy,
    lexicon: &FollowupLexicon,
) -> Result<ParsedReply, ExtractError> {
    let block = extract_json_block(reply_text)?;
    let value: Value = serde_json::from_str(block).expect("extract_json_block returns valid JSON");
    let Value::Object(map) = value else {
        unreachable!("extract_json_block returns objects");
    };

    if map.get("order").is_some_and(Value::is_object) {
        let envelope = ReplyEnvelope::from_json_object(&map, policy)?;
        let mut asked: BTreeSet<FieldName> = envelope.follow_up.iter().copied().collect();
        let mut unclassified = 0;
        if envelope.follow_up.is_empty() {
            for q in &envelope.question_texts {
                match lexicon.classify(q) {
                    Ok(f) => {
                        asked.insert(f);
                    }
                    Err(_) => unclassified += 1,
                }
            }
        }
        return Ok(ParsedReply {
            draft: envelope.order,
            warnings: envelope.warnings,
            asked,
            unclassified_questions: unclassified,
            non_trade: envelope.non_trade,
            structured: true,
        });
    }

    let parsed = parse_draft_object(&map, policy, None)?;
    let prose = reply_text.replacen(block, " ", 1);
    let mut asked = BTreeSet::new();
    let mut unclassified = 0;
    for q in free_text_questions(&prose) {
        match lexicon.classify(&q) {
            Ok(f) => {
                asked.insert(f);
            }
            Err(_) => unclassified += 1,
        }
    }
    Ok(ParsedReply {
        draft: parsed.draft,
        warnings: parsed.warnings,
        asked,
        unclassified_questions: unclassified,
        non_trade: false,
        structured: false,
    })
}

/// Sentences ending in a question mark.
pub fn free_text_questions(text: &str) -> Vec<String> {
    let mut questions = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        match ch {
            '?' | '？' => {
                let q = current.trim().trim_start_matches(['`', '*', '-', '"']).trim();
                if !q.is_empty() && q != "?" && q != "？" {
                    questions.push(q.to_string());
                }
                current.clear();
            }
            '.' | '!' | '\n' | '。' | '！' => current.clear(),
            _ => {}
        }
    }
    questions
}

/// Tri-state kinds of each field, in wire key order. Handy for tabulated tests.
pub fn state_kinds(draft: &OrderDraft) -> [StateKind; 5] {
    FieldName::WIRE_ORDER.map(|f| draft.state_kind(f))
}
