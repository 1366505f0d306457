//! Chat-completion providers and the prompt/reply protocol.
//!
//! Every provider takes a transcript (one system turn followed by user and
//! assistant turns) and returns reply text. The rule-based provider answers
//! with a structured [`ReplyEnvelope`]; remote providers speak the common
//! chat-completions HTTP shape and may answer in any form, which the
//! [`extract`](crate::extract) module then decodes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::extract::{parse_draft_object, ExtractError, ExtractionPolicy};
use crate::lexicon::{self, Intent, NumberRole};
use crate::order::{missing_fields, FieldName, FieldState, OrderDraft, Strategy, SymbolDirectory};
use crate::wire::WireDraft;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("remote error {status}: {body}")]
    RemoteError { status: u16, body: String },
    #[error("credential environment variable `{0}` is not set")]
    CredentialMissing(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(&'static str),
    #[error("invalid provider config: {0}")]
    Config(String),
}

impl GatewayError {
    /// Timeouts, 429 and 5xx are worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout => true,
            GatewayError::RemoteError { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

fn check_transcript(transcript: &[ChatTurn]) -> Result<(), GatewayError> {
    if transcript.first().map(|t| t.role) != Some(ChatRole::System) {
        return Err(GatewayError::InvalidTranscript("first turn must be the system prompt"));
    }
    if transcript[1..].iter().any(|t| t.role == ChatRole::System) {
        return Err(GatewayError::InvalidTranscript("only one system turn is allowed"));
    }
    if transcript.iter().any(|t| t.content.trim().is_empty()) {
        return Err(GatewayError::InvalidTranscript("turn content must be non-empty"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RuleBased,
    RemoteChat,
}

/// Provider settings, normally read from a small TOML file:
///
/// ```toml
/// kind = "remote_chat"
/// name = "gpt-4o-mini"
/// endpoint = "https://api.openai.com/v1/chat/completions"
/// model = "gpt-4o-mini"
/// credential_env = "OPENAI_API_KEY"
/// timeout_s = 60
/// max_retries = 3
/// temperature = 0.0
/// ```
///
/// The rule-based kind ignores every network field and optionally reads
/// `directory`, a symbol directory file resolved against the config location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub directory: Option<PathBuf>,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

impl ProviderConfig {
    pub fn rule_based() -> Self {
        ProviderConfig {
            kind: ProviderKind::RuleBased,
            name: None,
            endpoint: None,
            model: None,
            credential_env: None,
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            backoff_ms: default_backoff_ms(),
            directory: None,
        }
    }

    pub fn remote(endpoint: &str, model: &str, credential_env: &str) -> Self {
        ProviderConfig {
            kind: ProviderKind::RemoteChat,
            endpoint: Some(endpoint.to_string()),
            model: Some(model.to_string()),
            credential_env: Some(credential_env.to_string()),
            ..Self::rule_based()
        }
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let cfg: ProviderConfig = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and resolves a relative `directory` against its folder.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(dir), Some(base)) = (&cfg.directory, path.parent()) {
            if dir.is_relative() {
                cfg.directory = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad("timeout_s must be > 0");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if self.kind == ProviderKind::RemoteChat {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return bad("remote_chat requires `endpoint`");
            }
            if self.model.as_deref().is_none_or(str::is_empty) {
                return bad("remote_chat requires `model`");
            }
            if self.credential_env.as_deref().is_none_or(str::is_empty) {
                return bad("remote_chat requires `credential_env` (an environment variable name)");
            }
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        match (&self.name, self.kind) {
            (Some(n), _) => n.clone(),
            (None, ProviderKind::RuleBased) => "rule-based".to_string(),
            (None, ProviderKind::RemoteChat) => self.model.clone().unwrap_or_else(|| "remote".into()),
        }
    }

    pub fn load_directory(&self) -> Result<SymbolDirectory, GatewayError> {
        match &self.directory {
            Some(path) => SymbolDirectory::load(path).map_err(|e| GatewayError::Config(e.to_string())),
            None => Ok(SymbolDirectory::builtin()),
        }
    }
}

/// Structured reply: the order JSON plus the fields the model wants to ask about.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReplyEnvelope {
    pub order: OrderDraft,
    pub follow_up: Vec<FieldName>,
    pub question_texts: Vec<String>,
    pub non_trade: bool,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct EnvelopeWire<'a> {
    order: WireDraft,
    follow_up: Vec<&'static str>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    questions: &'a [String],
    non_trade: bool,
}

impl ReplyEnvelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&EnvelopeWire {
            order: WireDraft::from(&self.order),
            follow_up: self.follow_up.iter().map(|f| f.wire_key()).collect(),
            questions: &self.question_texts,
            non_trade: self.non_trade,
        })
        .expect("envelope serializes")
    }

    pub fn from_json_object(map: &Map<String, Value>, policy: ExtractionPolicy) -> Result<Self, ExtractError> {
        let Some(Value::Object(order)) = map.get("order") else {
            return Err(ExtractError::SchemaViolation("envelope lacks an `order` object".into()));
        };
        let parsed = parse_draft_object(order, policy, None)?;
        let mut follow_up = Vec::new();
        match map.get("follow_up") {
            None | Some(Value::Null) => {}
            Some(Value::Array(items)) => {
                for item in items {
                    let field = item.as_str().and_then(FieldName::from_wire_key);
                    match (field, policy) {
                        (Some(f), _) if !follow_up.contains(&f) => follow_up.push(f),
                        (Some(_), _) => {}
                        (None, ExtractionPolicy::Lenient) => {}
                        (None, ExtractionPolicy::Strict) => {
                            return Err(ExtractError::SchemaViolation(format!(
                                "follow_up names unknown field {item}"
                            )))
                        }
                    }
                }
            }
            Some(other) => {
                return Err(ExtractError::SchemaViolation(format!(
                    "follow_up must be an array, got {other}"
                )))
            }
        }
        let question_texts = match map.get("questions") {
            Some(Value::Array(items)) => items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
            _ => Vec::new(),
        };
        let non_trade = map.get("non_trade").and_then(Value::as_bool).unwrap_or(false);
        Ok(ReplyEnvelope {
            order: parsed.draft,
            follow_up,
            question_texts,
            non_trade,
            warnings: parsed.warnings,
        })
    }
}

/// Deterministic grammar over the utterance.
///
/// Quantity is a numeral next to a shares word, price a numeral after a price
/// marker or currency sign. A stated price makes the order a limit order; a
/// reference to the current or market price with no target makes it a market
/// order; otherwise the strategy stays unknown.
pub fn rule_extract(utterance: &str, directory: &SymbolDirectory) -> ReplyEnvelope {
    let tokens = lexicon::tokenize(utterance);
    let roles = lexicon::numerals(&tokens);

    let quantity = roles.iter().find_map(|(i, r)| match r {
        NumberRole::Quantity(q) => Some((*i, *q)),
        _ => None,
    });
    let price = roles.iter().find_map(|(_, r)| match r {
        NumberRole::Price(p) => Some(*p),
        _ => None,
    });

    let mut draft = OrderDraft::empty();
    if let Some(code) = lexicon::detect_symbol(&tokens, directory) {
        draft.symbol = FieldState::Present(code);
    }
    if let Some(side) = lexicon::detect_side(&tokens, quantity.map(|(i, _)| i)) {
        draft.side = FieldState::Present(side);
    }
    if let Some((_, q)) = quantity {
        draft.quantity = FieldState::Present(q);
    }
    if let Some(p) = price {
        draft.strategy = FieldState::Present(Strategy::LimitOrder);
        draft.price = FieldState::Present(p);
    } else if lexicon::has_market_cue(&tokens) {
        draft.set_strategy(Strategy::MarketOrder);
    }

    let non_trade = lexicon::classify_intent_with(utterance, directory) != Intent::TradeInstruction;
    let follow_up: Vec<FieldName> = missing_fields(&draft).into_iter().collect();
    ReplyEnvelope {
        order: draft,
        follow_up,
        question_texts: Vec::new(),
        non_trade,
        warnings: Vec::new(),
    }
}

/// System prompt for remote models. Pure function of the directory.
pub fn render_system_prompt(directory: &SymbolDirectory) -> String {
    let mut p = String::new();
    p.push_str(
        "You convert a trader's message into a stock order. Reply with exactly one JSON object and nothing else.\n\n",
    );
    p.push_str(
        "Order schema, keys in this order: \"strategy\", \"symbol\", \"order_type\", \"price\", \"quantity\".\n",
    );
    p.push_str("- strategy: \"market order\" or \"limit order\"\n");
    p.push_str("- symbol: the exchange code as a string of digits, e.g. \"600519\" or \"00700\"\n");
    p.push_str("- order_type: \"buy\" or \"sell\"\n");
    p.push_str("- price: a number\n");
    p.push_str("- quantity: a whole number of shares\n\n");
    p.push_str("Empty values:\n");
    p.push_str(
        "- If the message does not give a value for a key, write JSON null (not the string \"null\" or \"NULL\").\n",
    );
    p.push_str(
        "- A market order has no price of its own: write the string \"None\" for price when strategy is \"market order\".\n\n",
    );
    p.push_str("Order types:\n");
    p.push_str(
        "- limit order: the trader names a price; a buy fills only at that price or lower, a sell only at that price or higher, and the order may never fill.\n",
    );
    p.push_str(
        "- market order: executes right away at whatever price the market currently offers; the fill price is not guaranteed.\n\n",
    );
    p.push_str("Reply format:\n");
    p.push_str("{\"order\": {<order schema>}, \"follow_up\": [<keys you still need to ask the trader about>], \"questions\": [<one question per follow_up key>], \"non_trade\": <true if the message is not a trade instruction>}\n");
    p.push_str("Only list a key in follow_up when its value is null and the order cannot execute without it. ");
    p.push_str("Do not ask about price for a market order.\n\n");
    p.push_str("Known company names and their codes:\n");
    for (alias, code) in directory.entries() {
        let _ = writeln!(p, "- {alias}: {code}");
    }
    p
}

/// Transcript for a single-shot extraction request.
pub fn extraction_transcript(utterance: &str, directory: &SymbolDirectory) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(render_system_prompt(directory)),
        ChatTurn::user(utterance),
    ]
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, transcript: &[ChatTurn]) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct RuleBasedProvider {
    name: String,
    directory: SymbolDirectory,
}

impl RuleBasedProvider {
    pub fn new(directory: SymbolDirectory) -> Self {
        Self {
            name: "rule-based".to_string(),
            directory,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn directory(&self) -> &SymbolDirectory {
        &self.directory
    }
}

impl ChatProvider for RuleBasedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, transcript: &[ChatTurn]) -> Result<String, GatewayError> {
        check_transcript(transcript)?;
        let utterance = transcript
            .iter()
            .rev()
            .find(|t| t.role == ChatRole::User)
            .ok_or(GatewayError::InvalidTranscript("no user turn"))?;
        Ok(rule_extract(&utterance.content, &self.directory).to_json())
    }
}

/// Canned replies keyed by the last user turn. Unscripted utterances fall
/// back to the rule grammar when a directory is set, otherwise they time out.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    replies: std::collections::HashMap<String, Result<String, GatewayError>>,
    fallback: Option<SymbolDirectory>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, utterance: &str, text: impl Into<String>) -> Self {
        self.replies.insert(utterance.to_string(), Ok(text.into()));
        self
    }

    pub fn fail(mut self, utterance: &str, error: GatewayError) -> Self {
        self.replies.insert(utterance.to_string(), Err(error));
        self
    }

    pub fn with_rule_fallback(mut self, directory: SymbolDirectory) -> Self {
        self.fallback = Some(directory);
        self
    }
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, transcript: &[ChatTurn]) -> Result<String, GatewayError> {
        check_transcript(transcript)?;
        let utterance = transcript
            .iter()
            .rev()
            .find(|t| t.role == ChatRole::User)
            .ok_or(GatewayError::InvalidTranscript("no user turn"))?;
        match (self.replies.get(&utterance.content), &self.fallback) {
            (Some(reply), _) => reply.clone(),
            (None, Some(dir)) => Ok(rule_extract(&utterance.content, dir).to_json()),
            (None, None) => Err(GatewayError::Timeout),
        }
    }
}

static NETWORK_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests issued by remote providers in this process.
pub fn network_requests() -> u64 {
    NETWORK_REQUESTS.load(Ordering::SeqCst)
}

pub struct RemoteChatProvider {
    name: String,
    endpoint: String,
    model: String,
    credential_env: String,
    temperature: f64,
    max_retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl RemoteChatProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        if cfg.kind != ProviderKind::RemoteChat {
            return Err(GatewayError::Config("not a remote_chat config".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteChatProvider {
            name: cfg.display_name(),
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone().unwrap_or_default(),
            credential_env: cfg.credential_env.clone().unwrap_or_default(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            agent,
        })
    }

    fn request_body(&self, transcript: &[ChatTurn]) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": transcript,
        })
    }

    fn attempt(&self, key: &str, body: &Value) -> Result<String, GatewayError> {
        NETWORK_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(body)
            .map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_ureq_error)?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::RemoteError { status, body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| GatewayError::RemoteError {
            status,
            body: format!("unparseable body ({e}): {text}"),
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or(GatewayError::RemoteError {
                status,
                body: format!("missing choices[0].message.content: {text}"),
            })
    }
}

fn map_ureq_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => GatewayError::Timeout,
        other => GatewayError::Transport(other.to_string()),
    }
}

/// Delay before retry number `attempt` (1-based): base, 2·base, 4·base, …
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << (attempt.saturating_sub(1)).min(16))
}

impl ChatProvider for RemoteChatProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, transcript: &[ChatTurn]) -> Result<String, GatewayError> {
        check_transcript(transcript)?;
        let key = std::env::var(&self.credential_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::CredentialMissing(self.credential_env.clone()))?;
        let body = self.request_body(transcript);
        let mut attempt = 0u32;
        loop {
            match self.attempt(&key, &body) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    attempt += 1;
                    let delay = backoff_delay(self.backoff, attempt);
                    debug!(attempt, delay_ms = delay.as_millis() as u64, error = %e, "retrying chat completion");
                    std::thread::sleep(delay);
                }
                Err(e) => {
                    warn!(attempt, error = %e, provider = %self.name, "chat completion failed");
                    return Err(e);
                }
            }
        }
    }
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn ChatProvider>, GatewayError> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::RuleBased => Ok(Box::new(
            RuleBasedProvider::new(cfg.load_directory()?).named(cfg.display_name()),
        )),
        ProviderKind::RemoteChat => Ok(Box::new(RemoteChatProvider::new(cfg)?)),
    }
}

pub fn complete(transcript: &[ChatTurn], cfg: &ProviderConfig) -> Result<String, GatewayError> {
    build_provider(cfg)?.complete(transcript)
}

/// Fields an envelope asks about, as a set.
pub fn asked_fields(envelope: &ReplyEnvelope) -> BTreeSet<FieldName> {
    envelope.follow_up.iter().copied().collect()
}
