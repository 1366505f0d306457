//! Order-taking conversation as an explicit state machine.
//!
//! ```text
//! AwaitInput --UserMessage--> Rejected                (not a trade instruction)
//!            --UserMessage--> Drafting                (provider call pending)
//! Drafting   --ProviderReply--> ReadyToExecute | AwaitClarification
//! AwaitClarification --UserMessage--> AwaitClarification | ReadyToExecute | Failed
//! ReadyToExecute --ConfirmExecute--> Executed
//! ```
//!
//! [`step`] is the total transition function. Provider calls happen between
//! steps; their text comes back in as [`Event::ProviderReply`].

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::{ExchangeError, ExecutionReport, Venue};
use crate::extract::{parse_reply, ExtractionPolicy, FollowupLexicon};
use crate::gateway::rule_extract;
use crate::lexicon::{self, Intent};
use crate::order::{
    finalize, missing_fields, ExecutableOrder, FieldName, FieldState, OrderDraft, SymbolDirectory, TickerSymbol,
};

pub const PRICE_QUESTION: &str = "Could you please tell me what the stock price is?";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DialogueError {
    #[error("event {event} is not legal in state {state}")]
    IllegalEvent { state: &'static str, event: &'static str },
    #[error("could not read a value for `{0}` from the answer")]
    Unparseable(FieldName),
    #[error("field `{0}` is not pending")]
    NotPending(FieldName),
    #[error("execution failed: {0}")]
    Execution(#[from] ExchangeError),
    #[error("transcript log line {line}: {detail}")]
    Log { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionState {
    AwaitInput,
    /// Waiting on the provider. `draft` is the local rule parse, used if the
    /// reply cannot be read.
    Drafting {
        utterance: String,
        draft: OrderDraft,
    },
    AwaitClarification {
        draft: OrderDraft,
        pending: Vec<FieldName>,
        turns_used: u32,
    },
    ReadyToExecute {
        order: ExecutableOrder,
    },
    Executed {
        report: ExecutionReport,
    },
    Rejected {
        intent: Intent,
    },
    Failed {
        reason: FailReason,
    },
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::AwaitInput => "await_input",
            SessionState::Drafting { .. } => "drafting",
            SessionState::AwaitClarification { .. } => "await_clarification",
            SessionState::ReadyToExecute { .. } => "ready_to_execute",
            SessionState::Executed { .. } => "executed",
            SessionState::Rejected { .. } => "rejected",
            SessionState::Failed { .. } => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            SessionState::Executed { .. } | SessionState::Rejected { .. } | SessionState::Failed { .. }
        )
    }

    /// Current order in draft form, if the session has one.
    pub fn draft(&self) -> Option<OrderDraft> {
        match self {
            SessionState::Drafting { draft, .. } | SessionState::AwaitClarification { draft, .. } => {
                Some(draft.clone())
            }
            SessionState::ReadyToExecute { order } => Some(order.to_draft()),
            SessionState::Executed { report } => Some(report.order.to_draft()),
            _ => None,
        }
    }

    pub fn pending_field(&self) -> Option<FieldName> {
        match self {
            SessionState::AwaitClarification { pending, .. } => pending.first().copied(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "text", rename_all = "snake_case")]
pub enum Event {
    UserMessage(String),
    ProviderReply(String),
    ConfirmExecute,
    FeedTick,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::UserMessage(_) => "user_message",
            Event::ProviderReply(_) => "provider_reply",
            Event::ConfirmExecute => "confirm_execute",
            Event::FeedTick => "feed_tick",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutboundMessage {
    /// The driver should ask the provider to draft this utterance.
    RequestCompletion {
        utterance: String,
    },
    Question {
        field: FieldName,
        text: String,
    },
    DraftUpdated(OrderDraft),
    Notice(String),
    Report(ExecutionReport),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub max_turns: u32,
    pub auto_execute: bool,
    pub policy: ExtractionPolicy,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            max_turns: 5,
            auto_execute: false,
            policy: ExtractionPolicy::Strict,
        }
    }
}

pub trait Executor {
    fn execute(&mut self, order: &ExecutableOrder) -> Result<ExecutionReport, ExchangeError>;
}

impl Executor for Venue {
    fn execute(&mut self, order: &ExecutableOrder) -> Result<ExecutionReport, ExchangeError> {
        Venue::execute(self, order)
    }
}

pub struct StepContext<'a> {
    pub config: &'a SessionConfig,
    pub directory: &'a SymbolDirectory,
    pub lexicon: &'a FollowupLexicon,
    pub executor: &'a mut dyn Executor,
}

pub fn classify_intent(utterance: &str) -> Intent {
    lexicon::classify_intent_with(utterance, &SymbolDirectory::builtin())
}

pub fn render_question(field: FieldName) -> &'static str {
    match field {
        FieldName::Strategy => "Would you like to place a market order or a limit order?",
        FieldName::Symbol => "Which stock would you like to trade? Please give the company name or stock code.",
        FieldName::OrderType => "Would you like to buy or sell?",
        FieldName::Quantity => "How many shares would you like to trade?",
        FieldName::Price => PRICE_QUESTION,
    }
}

/// Reads a value for `field` from a clarification answer; other fields are
/// left alone except that answering the strategy keeps the price consistent.
pub fn merge_answer(
    draft: &OrderDraft,
    field: FieldName,
    answer: &str,
    directory: &SymbolDirectory,
) -> Result<OrderDraft, DialogueError> {
    if !missing_fields(draft).contains(&field) {
        return Err(DialogueError::NotPending(field));
    }
    let tokens = lexicon::tokenize(answer);
    let unparseable = || DialogueError::Unparseable(field);
    let mut next = draft.clone();
    match field {
        FieldName::Strategy => {
            let strategy = lexicon::detect_strategy_words(&tokens).ok_or_else(unparseable)?;
            next.set_strategy(strategy);
        }
        FieldName::Symbol => {
            let trimmed = answer.trim().trim_end_matches(['.', '!']);
            let code = TickerSymbol::parse(trimmed)
                .ok()
                .or_else(|| lexicon::detect_symbol(&tokens, directory))
                .ok_or_else(unparseable)?;
            next.symbol = FieldState::Present(code);
        }
        FieldName::OrderType => {
            let side = lexicon::detect_side(&tokens, None).ok_or_else(unparseable)?;
            next.side = FieldState::Present(side);
        }
        FieldName::Quantity => {
            next.quantity = FieldState::Present(lexicon::first_share_count(&tokens).ok_or_else(unparseable)?);
        }
        FieldName::Price => {
            next.price = FieldState::Present(lexicon::first_money(&tokens).ok_or_else(unparseable)?);
        }
    }
    Ok(next)
}

fn illegal(state: &SessionState, event: &Event) -> DialogueError {
    DialogueError::IllegalEvent {
        state: state.name(),
        event: event.name(),
    }
}

/// Either ready to execute or waiting on the first missing field.
fn settle(draft: OrderDraft, turns_used: u32, out: &mut Vec<OutboundMessage>) -> SessionState {
    out.push(OutboundMessage::DraftUpdated(draft.clone()));
    let pending: Vec<FieldName> = missing_fields(&draft).into_iter().collect();
    if pending.is_empty() {
        if let Ok(order) = finalize(&draft) {
            out.push(OutboundMessage::Notice("Order is complete. Confirm to execute.".into()));
            return SessionState::ReadyToExecute { order };
        }
    }
    let field = pending[0];
    out.push(OutboundMessage::Question {
        field,
        text: render_question(field).to_string(),
    });
    SessionState::AwaitClarification {
        draft,
        pending,
        turns_used,
    }
}

pub fn step(
    state: &SessionState,
    event: &Event,
    ctx: &mut StepContext<'_>,
) -> Result<(SessionState, Vec<OutboundMessage>), DialogueError> {
    let mut out = Vec::new();
    let next = match (state, event) {
        (_, Event::FeedTick) => state.clone(),

        (SessionState::AwaitInput, Event::UserMessage(text)) => {
            match lexicon::classify_intent_with(text, ctx.directory) {
                Intent::TradeInstruction => {
                    out.push(OutboundMessage::RequestCompletion {
                        utterance: text.clone(),
                    });
                    SessionState::Drafting {
                        utterance: text.clone(),
                        draft: rule_extract(text, ctx.directory).order,
                    }
                }
                intent => {
                    out.push(OutboundMessage::Notice(
                        "Sorry, that does not look like a trade instruction, so no order was created.".into(),
                    ));
                    SessionState::Rejected { intent }
                }
            }
        }

        (SessionState::Drafting { draft: fallback, .. }, Event::ProviderReply(reply)) => {
            let parsed = parse_reply(reply, ctx.config.policy, ctx.lexicon)
                .ok()
                .filter(|p| p.draft.validate().is_ok());
            let draft = match parsed {
                Some(p) => {
                    for w in p.warnings {
                        out.push(OutboundMessage::Notice(w));
                    }
                    p.draft
                }
                None => {
                    out.push(OutboundMessage::Notice(
                        "The model reply was not a valid order; using the local parse instead.".into(),
                    ));
                    fallback.clone()
                }
            };
            settle(draft, 0, &mut out)
        }

        (
            SessionState::AwaitClarification {
                draft,
                pending,
                turns_used,
            },
            Event::UserMessage(answer),
        ) => {
            let field = pending[0];
            let turns_used = turns_used + 1;
            match merge_answer(draft, field, answer, ctx.directory) {
                Ok(merged) => {
                    if !missing_fields(&merged).is_empty() && turns_used >= ctx.config.max_turns {
                        out.push(OutboundMessage::Notice(
                            "Too many clarification rounds; giving up.".into(),
                        ));
                        SessionState::Failed {
                            reason: FailReason::MaxTurns,
                        }
                    } else {
                        settle(merged, turns_used, &mut out)
                    }
                }
                Err(_) if turns_used >= ctx.config.max_turns => {
                    out.push(OutboundMessage::Notice(
                        "Too many clarification rounds; giving up.".into(),
                    ));
                    SessionState::Failed {
                        reason: FailReason::MaxTurns,
                    }
                }
                Err(_) => {
                    out.push(OutboundMessage::Notice(format!(
                        "Sorry, I could not read the {field} from that."
                    )));
                    out.push(OutboundMessage::Question {
                        field,
                        text: render_question(field).to_string(),
                    });
                    SessionState::AwaitClarification {
                        draft: draft.clone(),
                        pending: pending.clone(),
                        turns_used,
                    }
                }
            }
        }

        (SessionState::ReadyToExecute { order }, Event::ConfirmExecute) => {
            let report = ctx.executor.execute(order)?;
            out.push(OutboundMessage::Report(report.clone()));
            SessionState::Executed { report }
        }

        (state, event) => return Err(illegal(state, event)),
    };
    Ok((next, out))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts_ms: u64,
    pub event: Event,
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One conversation: current state plus an append-only transition log.
#[derive(Clone)]
pub struct Session {
    state: SessionState,
    config: SessionConfig,
    directory: SymbolDirectory,
    lexicon: FollowupLexicon,
    log: Vec<LogEntry>,
}

impl Session {
    pub fn new(config: SessionConfig, directory: SymbolDirectory) -> Self {
        Session {
            state: SessionState::AwaitInput,
            config,
            directory,
            lexicon: FollowupLexicon::default(),
            log: Vec::new(),
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn directory(&self) -> &SymbolDirectory {
        &self.directory
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Applies one event. On error the state is unchanged and the failure is logged.
    /// With `auto_execute` a transition into `ReadyToExecute` is followed by a
    /// confirm in the same call.
    pub fn handle(&mut self, event: Event, executor: &mut dyn Executor) -> Result<Vec<OutboundMessage>, DialogueError> {
        let mut messages = self.apply(event, executor)?;
        if self.config.auto_execute && matches!(self.state, SessionState::ReadyToExecute { .. }) {
            messages.extend(self.apply(Event::ConfirmExecute, executor)?);
        }
        Ok(messages)
    }

    fn apply(&mut self, event: Event, executor: &mut dyn Executor) -> Result<Vec<OutboundMessage>, DialogueError> {
        let mut ctx = StepContext {
            config: &self.config,
            directory: &self.directory,
            lexicon: &self.lexicon,
            executor,
        };
        let from = self.state.name().to_string();
        match step(&self.state, &event, &mut ctx) {
            Ok((next, messages)) => {
                self.log.push(LogEntry {
                    ts_ms: now_ms(),
                    event,
                    from,
                    to: next.name().to_string(),
                    error: None,
                });
                self.state = next;
                Ok(messages)
            }
            Err(e) => {
                self.log.push(LogEntry {
                    ts_ms: now_ms(),
                    event,
                    to: from.clone(),
                    from,
                    error: Some(e.to_string()),
                });
                Err(e)
            }
        }
    }

    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }

    /// Rebuilds a session by re-feeding the successful events of a JSONL log.
    pub fn replay(
        log_jsonl: &str,
        config: SessionConfig,
        directory: SymbolDirectory,
        executor: &mut dyn Executor,
    ) -> Result<Session, DialogueError> {
        let mut session = Session::new(
            SessionConfig {
                auto_execute: false,
                ..config
            },
            directory,
        );
        for (idx, line) in log_jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(line).map_err(|e| DialogueError::Log {
                line: idx + 1,
                detail: e.to_string(),
            })?;
            if entry.error.is_some() {
                continue;
            }
            session.apply(entry.event, executor)?;
        }
        session.config.auto_execute = config.auto_execute;
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::PriceFeed;
    use crate::order::{Money, Side, Strategy};

    fn venue() -> Venue {
        let mut feed = PriceFeed::new();
        for code in ["600519", "000002", "00700", "688001"] {
            let sym = TickerSymbol::parse(code).unwrap();
            for (t, p) in [(0, "7.20"), (1, "7.05"), (2, "6.98"), (3, "7.10")] {
                feed.push(sym.clone(), t, p.parse().unwrap()).unwrap();
            }
        }
        Venue::new(feed)
    }

    fn session() -> Session {
        Session::new(SessionConfig::default(), SymbolDirectory::builtin())
    }

    fn questions(msgs: &[OutboundMessage]) -> Vec<FieldName> {
        msgs.iter()
            .filter_map(|m| match m {
                OutboundMessage::Question { field, .. } => Some(*field),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn question_templates() {
        assert_eq!(
            render_question(FieldName::Price),
            "Could you please tell me what the stock price is?"
        );
        assert!(render_question(FieldName::Quantity).contains("shares"));
        assert_eq!(render_question(FieldName::Symbol), render_question(FieldName::Symbol));
        let lex = FollowupLexicon::default();
        for f in FieldName::ALL {
            assert_eq!(lex.classify(render_question(f)), Ok(f), "{f}");
        }
    }

    #[test]
    fn merge_answer_examples() {
        let dir = SymbolDirectory::builtin();
        let mut d = OrderDraft::empty();
        d.strategy = FieldState::Present(Strategy::LimitOrder);
        let merged = merge_answer(&d, FieldName::Price, "$7", &dir).unwrap();
        assert_eq!(merged.price, FieldState::Present("7".parse::<Money>().unwrap()));

        let d = OrderDraft::empty();
        let merged = merge_answer(&d, FieldName::Strategy, "market order please", &dir).unwrap();
        assert_eq!(merged.strategy, FieldState::Present(Strategy::MarketOrder));
        assert_eq!(merged.price, FieldState::NotApplicable);
        assert!(!missing_fields(&merged).contains(&FieldName::Price));

        assert_eq!(
            merge_answer(&d, FieldName::Quantity, "a few", &dir),
            Err(DialogueError::Unparseable(FieldName::Quantity))
        );
        assert_eq!(
            merge_answer(&merged, FieldName::Strategy, "limit", &dir),
            Err(DialogueError::NotPending(FieldName::Strategy))
        );
        let m = merge_answer(&d, FieldName::Symbol, "Tencent, please", &dir).unwrap();
        assert_eq!(m.symbol, FieldState::Present(TickerSymbol::parse("00700").unwrap()));
        let m = merge_answer(&d, FieldName::Symbol, "000002", &dir).unwrap();
        assert_eq!(m.symbol, FieldState::Present(TickerSymbol::parse("000002").unwrap()));
        let m = merge_answer(&d, FieldName::OrderType, "I want to sell", &dir).unwrap();
        assert_eq!(m.side, FieldState::Present(Side::Sell));
        let m = merge_answer(&d, FieldName::Quantity, "1000 shares", &dir).unwrap();
        assert_eq!(m.quantity.value().map(|q| q.get()), Some(1000));
    }

    #[test]
    fn intent_examples() {
        assert_eq!(
            classify_intent("If Moutai's stock price can fall to 1800, I will take the opportunity to stock up and plan to buy 200 shares of it."),
            Intent::TradeInstruction
        );
        assert_eq!(
            classify_intent("The Skyworth figure in my hand has risen a lot."),
            Intent::TradeRelated
        );
        assert_eq!(classify_intent("What's for lunch?"), Intent::Other);
    }

    #[test]
    fn complete_market_order_needs_no_questions() {
        let mut s = session();
        let mut v = venue();
        let text = "I intend to buy 100 shares of Kweichow Moutai while the current stock price is reasonable";
        let msgs = s.handle(Event::UserMessage(text.into()), &mut v).unwrap();
        assert!(matches!(msgs[0], OutboundMessage::RequestCompletion { .. }));
        let reply = rule_extract(text, &SymbolDirectory::builtin()).to_json();
        let msgs = s.handle(Event::ProviderReply(reply), &mut v).unwrap();
        assert!(questions(&msgs).is_empty());
        assert!(matches!(s.state(), SessionState::ReadyToExecute { .. }));
        s.handle(Event::ConfirmExecute, &mut v).unwrap();
        let SessionState::Executed { report } = s.state() else {
            panic!()
        };
        assert!(report.is_filled());
        assert_eq!(v.portfolio.position(&TickerSymbol::parse("600519").unwrap()), 100);
    }

    #[test]
    fn clarification_loop_asks_in_order() {
        let mut s = session();
        let mut v = venue();
        let text = "Looking at Vanke stocks to go up, I intend to sell 300 shares first";
        s.handle(Event::UserMessage(text.into()), &mut v).unwrap();
        let msgs = s
            .handle(
                Event::ProviderReply(rule_extract(text, s.directory()).to_json()),
                &mut v,
            )
            .unwrap();
        assert_eq!(questions(&msgs), [FieldName::Strategy]);
        let msgs = s.handle(Event::UserMessage("limit order".into()), &mut v).unwrap();
        assert_eq!(questions(&msgs), [FieldName::Price]);
        let msgs = s.handle(Event::UserMessage("hmm not sure".into()), &mut v).unwrap();
        assert_eq!(questions(&msgs), [FieldName::Price]);
        s.handle(Event::UserMessage("12.5 yuan".into()), &mut v).unwrap();
        let SessionState::ReadyToExecute { order } = s.state() else {
            panic!("{:?}", s.state())
        };
        assert_eq!(order.limit_price(), Some("12.5".parse().unwrap()));
        assert_eq!(order.side, Side::Sell);
    }

    #[test]
    fn unhelpful_answers_hit_the_turn_bound() {
        let mut s = session();
        let mut v = venue();
        let text = "sell 300 shares of Vanke";
        s.handle(Event::UserMessage(text.into()), &mut v).unwrap();
        s.handle(Event::ProviderReply("no json here".into()), &mut v).unwrap();
        assert_eq!(s.state().pending_field(), Some(FieldName::Strategy));
        let mut results = Vec::new();
        for _ in 0..6 {
            results.push(s.handle(Event::UserMessage("whatever".into()), &mut v));
        }
        assert_eq!(
            s.state(),
            &SessionState::Failed {
                reason: FailReason::MaxTurns
            }
        );
        assert!(results[..5].iter().all(Result::is_ok));
        assert!(matches!(
            results[5],
            Err(DialogueError::IllegalEvent { state: "failed", .. })
        ));
    }

    #[test]
    fn non_trade_is_rejected() {
        let mut s = session();
        let mut v = venue();
        s.handle(Event::UserMessage("What's for lunch?".into()), &mut v)
            .unwrap();
        assert_eq!(s.state(), &SessionState::Rejected { intent: Intent::Other });
    }

    #[test]
    fn illegal_events_preserve_state() {
        let mut s = session();
        let mut v = venue();
        assert!(s.handle(Event::ConfirmExecute, &mut v).is_err());
        assert!(s.handle(Event::ProviderReply("{}".into()), &mut v).is_err());
        assert_eq!(s.state(), &SessionState::AwaitInput);
        s.handle(Event::FeedTick, &mut v).unwrap();
        assert_eq!(s.state(), &SessionState::AwaitInput);
    }

    #[test]
    fn auto_execute_and_replay() {
        let config = SessionConfig {
            auto_execute: true,
            ..SessionConfig::default()
        };
        let mut s = Session::new(config.clone(), SymbolDirectory::builtin());
        let mut v = venue();
        let text = "I want to sell 200 shares of Tencent at $7 per share.";
        s.handle(Event::UserMessage(text.into()), &mut v).ok();
        // nothing held yet: oversell is refused and the order stays ready
        let err = s.handle(
            Event::ProviderReply(rule_extract(text, s.directory()).to_json()),
            &mut v,
        );
        assert!(matches!(
            err,
            Err(DialogueError::Execution(ExchangeError::OversellRejected { .. }))
        ));
        assert!(matches!(s.state(), SessionState::ReadyToExecute { .. }));

        let mut s = Session::new(config.clone(), SymbolDirectory::builtin());
        let mut v = venue();
        let text = "buy 200 shares of Tencent at $7 per share";
        s.handle(Event::UserMessage(text.into()), &mut v).unwrap();
        s.handle(
            Event::ProviderReply(rule_extract(text, s.directory()).to_json()),
            &mut v,
        )
        .unwrap();
        assert!(matches!(s.state(), SessionState::Executed { .. }));

        let log = s.log_jsonl();
        let replayed = Session::replay(&log, config, SymbolDirectory::builtin(), &mut venue()).unwrap();
        assert_eq!(replayed.state(), s.state());
    }
}
