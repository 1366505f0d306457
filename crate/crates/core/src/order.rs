//! Five-field trade order model.
//!
//! A draft order carries a [`FieldState`] per field: a present value, an
//! `Unknown` hole (wire `null`, the utterance did not say) or
//! `NotApplicable` (wire string `"None"`, only meaningful for the price of a
//! market order). [`finalize`] turns a complete draft into an
//! [`ExecutableOrder`] whose type no longer admits holes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrderError {
    #[error("order is incomplete, missing: {}", field_list(.0))]
    Incomplete(BTreeSet<FieldName>),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("invalid ticker symbol `{0}`: expected 5 or 6 ASCII digits")]
    InvalidSymbol(String),
    #[error("invalid price `{0}`: expected a positive amount with at most 2 decimals")]
    InvalidPrice(String),
    #[error("invalid quantity `{0}`: expected a positive integer")]
    InvalidQuantity(String),
    #[error("draft violates field invariants: {0}")]
    InvalidDraft(&'static str),
    #[error("symbol directory line {line}: {detail}")]
    Directory { line: usize, detail: String },
    #[error("duplicate alias `{0}` in symbol directory")]
    DuplicateAlias(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

fn field_list(fields: &BTreeSet<FieldName>) -> String {
    fields.iter().map(|f| f.wire_key()).collect::<Vec<_>>().join(", ")
}

/// The five order fields.
///
/// The derived ordering is the clarification order: strategy first (it decides
/// whether a price is needed at all), price last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldName {
    Strategy,
    Symbol,
    OrderType,
    Quantity,
    Price,
}

impl FieldName {
    pub const ALL: [FieldName; 5] = [
        FieldName::Strategy,
        FieldName::Symbol,
        FieldName::OrderType,
        FieldName::Quantity,
        FieldName::Price,
    ];

    /// Key order used by the wire JSON object.
    pub const WIRE_ORDER: [FieldName; 5] = [
        FieldName::Strategy,
        FieldName::Symbol,
        FieldName::OrderType,
        FieldName::Price,
        FieldName::Quantity,
    ];

    pub fn wire_key(self) -> &'static str {
        match self {
            FieldName::Strategy => "strategy",
            FieldName::Symbol => "symbol",
            FieldName::OrderType => "order_type",
            FieldName::Quantity => "quantity",
            FieldName::Price => "price",
        }
    }

    pub fn from_wire_key(key: &str) -> Option<FieldName> {
        FieldName::ALL.into_iter().find(|f| f.wire_key() == key)
    }
}

impl fmt::Display for FieldName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_key())
    }
}

impl FromStr for FieldName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FieldName::from_wire_key(s.trim()).ok_or_else(|| format!("unknown field `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FieldState<T> {
    Present(T),
    #[default]
    Unknown,
    NotApplicable,
}

impl<T> FieldState<T> {
    pub fn is_present(&self) -> bool {
        matches!(self, FieldState::Present(_))
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, FieldState::Unknown)
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            FieldState::Present(v) => Some(v),
            _ => None,
        }
    }

    /// Tri-state tag without the payload.
    pub fn kind(&self) -> StateKind {
        match self {
            FieldState::Present(_) => StateKind::Present,
            FieldState::Unknown => StateKind::Unknown,
            FieldState::NotApplicable => StateKind::NotApplicable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateKind {
    Present,
    Unknown,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    MarketOrder,
    LimitOrder,
}

impl Strategy {
    pub fn wire_value(self) -> &'static str {
        match self {
            Strategy::MarketOrder => "market order",
            Strategy::LimitOrder => "limit order",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn wire_value(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_value())
    }
}

/// Exchange code: 6 digits for mainland listings, 5 for Hong Kong.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TickerSymbol(String);

impl TickerSymbol {
    pub fn parse(code: &str) -> Result<Self, OrderError> {
        let valid = (5..=6).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_digit());
        if valid {
            Ok(TickerSymbol(code.to_string()))
        } else {
            Err(OrderError::InvalidSymbol(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TickerSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for TickerSymbol {
    type Err = OrderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TickerSymbol::parse(s)
    }
}

/// Positive unitless amount held as an exact count of hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money {
    cents: i64,
}

impl Money {
    pub fn from_cents(cents: i64) -> Result<Self, OrderError> {
        if cents > 0 {
            Ok(Money { cents })
        } else {
            Err(OrderError::InvalidPrice(format!("{cents} cents")))
        }
    }

    pub fn cents(self) -> i64 {
        self.cents
    }

    /// Nearest binary float; used for the JSON number form.
    pub fn to_f64(self) -> f64 {
        self.cents as f64 / 100.0
    }
}

impl FromStr for Money {
    type Err = OrderError;

    /// Accepts plain decimal notation, e.g. `1800`, `1800.0`, `7.25`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OrderError::InvalidPrice(s.to_string());
        let text = s.trim();
        let (whole, frac) = match text.split_once('.') {
            Some((w, f)) => (w, f),
            None => (text, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let frac = frac.trim_end_matches('0');
        if frac.len() > 2 {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let mut frac_cents: i64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        if frac.len() == 1 {
            frac_cents *= 10;
        }
        let cents = whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .ok_or_else(bad)?;
        Money::from_cents(cents).map_err(|_| bad())
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.cents / 100, self.cents % 100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShareCount(u64);

impl ShareCount {
    pub fn new(quantity: u64) -> Result<Self, OrderError> {
        if quantity >= 1 {
            Ok(ShareCount(quantity))
        } else {
            Err(OrderError::InvalidQuantity(quantity.to_string()))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for ShareCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OrderDraft {
    pub strategy: FieldState<Strategy>,
    pub symbol: FieldState<TickerSymbol>,
    pub side: FieldState<Side>,
    pub price: FieldState<Money>,
    pub quantity: FieldState<ShareCount>,
}

impl OrderDraft {
    /// Draft with every field `Unknown`.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Checks the cross-field invariants and the `NotApplicable` placement rule.
    pub fn validate(&self) -> Result<(), OrderError> {
        let na_outside_price = matches!(self.strategy, FieldState::NotApplicable)
            || matches!(self.symbol, FieldState::NotApplicable)
            || matches!(self.side, FieldState::NotApplicable)
            || matches!(self.quantity, FieldState::NotApplicable);
        if na_outside_price {
            return Err(OrderError::InvalidDraft("NotApplicable is only legal for price"));
        }
        match (&self.strategy, &self.price) {
            (FieldState::Present(Strategy::MarketOrder), FieldState::Present(_)) => {
                Err(OrderError::InvalidDraft("market order cannot carry a price"))
            }
            (FieldState::Present(Strategy::LimitOrder), FieldState::NotApplicable) => {
                Err(OrderError::InvalidDraft("limit order price cannot be NotApplicable"))
            }
            _ => Ok(()),
        }
    }

    pub fn state_kind(&self, field: FieldName) -> StateKind {
        match field {
            FieldName::Strategy => self.strategy.kind(),
            FieldName::Symbol => self.symbol.kind(),
            FieldName::OrderType => self.side.kind(),
            FieldName::Price => self.price.kind(),
            FieldName::Quantity => self.quantity.kind(),
        }
    }

    /// Sets the strategy and fixes up the price so the draft stays valid:
    /// market drops any price, limit turns a `NotApplicable` price back into a hole.
    pub fn set_strategy(&mut self, strategy: Strategy) {
        self.strategy = FieldState::Present(strategy);
        match strategy {
            Strategy::MarketOrder => self.price = FieldState::NotApplicable,
            Strategy::LimitOrder => {
                if matches!(self.price, FieldState::NotApplicable) {
                    self.price = FieldState::Unknown;
                }
            }
        }
    }
}

/// Fields that still need a value before the draft can be executed.
///
/// Price is required unless the strategy is known to be a market order; while
/// the strategy itself is unresolved a non-present price stays on the list.
pub fn missing_fields(draft: &OrderDraft) -> BTreeSet<FieldName> {
    let mut missing = BTreeSet::new();
    if draft.strategy.is_unknown() {
        missing.insert(FieldName::Strategy);
    }
    if draft.symbol.is_unknown() {
        missing.insert(FieldName::Symbol);
    }
    if draft.side.is_unknown() {
        missing.insert(FieldName::OrderType);
    }
    if draft.quantity.is_unknown() {
        missing.insert(FieldName::Quantity);
    }
    let market = matches!(draft.strategy, FieldState::Present(Strategy::MarketOrder));
    if !market && !draft.price.is_present() {
        missing.insert(FieldName::Price);
    }
    missing
}

/// Price terms of an executable order. A market order has no price by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderKind {
    Market,
    Limit(Money),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExecutableOrder {
    pub kind: OrderKind,
    pub symbol: TickerSymbol,
    pub side: Side,
    pub quantity: ShareCount,
}

impl ExecutableOrder {
    pub fn strategy(&self) -> Strategy {
        match self.kind {
            OrderKind::Market => Strategy::MarketOrder,
            OrderKind::Limit(_) => Strategy::LimitOrder,
        }
    }

    pub fn limit_price(&self) -> Option<Money> {
        match self.kind {
            OrderKind::Market => None,
            OrderKind::Limit(p) => Some(p),
        }
    }

    /// Back to draft form, e.g. for wire output.
    pub fn to_draft(&self) -> OrderDraft {
        OrderDraft {
            strategy: FieldState::Present(self.strategy()),
            symbol: FieldState::Present(self.symbol.clone()),
            side: FieldState::Present(self.side),
            price: match self.kind {
                OrderKind::Market => FieldState::NotApplicable,
                OrderKind::Limit(p) => FieldState::Present(p),
            },
            quantity: FieldState::Present(self.quantity),
        }
    }
}

pub fn finalize(draft: &OrderDraft) -> Result<ExecutableOrder, OrderError> {
    let missing = missing_fields(draft);
    if !missing.is_empty() {
        return Err(OrderError::Incomplete(missing));
    }
    draft.validate()?;
    let (
        FieldState::Present(strategy),
        FieldState::Present(symbol),
        FieldState::Present(side),
        FieldState::Present(quantity),
    ) = (&draft.strategy, &draft.symbol, &draft.side, &draft.quantity)
    else {
        unreachable!("missing_fields is empty");
    };
    let kind = match (strategy, &draft.price) {
        (Strategy::MarketOrder, _) => OrderKind::Market,
        (Strategy::LimitOrder, FieldState::Present(p)) => OrderKind::Limit(*p),
        (Strategy::LimitOrder, _) => unreachable!("limit price is in missing_fields"),
    };
    Ok(ExecutableOrder {
        kind,
        symbol: symbol.clone(),
        side: *side,
        quantity: *quantity,
    })
}

/// Alias → code lookup table for company names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolDirectory {
    entries: BTreeMap<String, TickerSymbol>,
}

const BUILTIN_ALIASES: [(&str, &str); 4] = [
    ("Kweichow Moutai", "600519"),
    ("Moutai", "600519"),
    ("Vanke", "000002"),
    ("Tencent", "00700"),
];

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_alias(name: &str) -> String {
    name.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Default for SymbolDirectory {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SymbolDirectory {
    pub fn builtin() -> Self {
        let entries = BUILTIN_ALIASES
            .iter()
            .map(|(alias, code)| {
                (
                    normalize_alias(alias),
                    TickerSymbol::parse(code).expect("built-in code"),
                )
            })
            .collect();
        SymbolDirectory { entries }
    }

    /// Built-ins plus the pairs in `text`.
    ///
    /// One pair per line, alias and code separated by a tab, a comma or `=`;
    /// blank lines and `#` comments are skipped.
    pub fn parse_with_builtins(text: &str) -> Result<Self, OrderError> {
        let mut dir = Self::builtin();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((alias, code)) = line
                .split_once('\t')
                .or_else(|| line.split_once('='))
                .or_else(|| line.rsplit_once(','))
            else {
                return Err(OrderError::Directory {
                    line: idx + 1,
                    detail: format!("expected `alias<TAB>code`, got `{line}`"),
                });
            };
            let code = TickerSymbol::parse(code.trim()).map_err(|e| OrderError::Directory {
                line: idx + 1,
                detail: e.to_string(),
            })?;
            dir.insert(alias, code).map_err(|e| OrderError::Directory {
                line: idx + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(dir)
    }

    pub fn load(path: &Path) -> Result<Self, OrderError> {
        let text = std::fs::read_to_string(path).map_err(|e| OrderError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_with_builtins(&text)
    }

    /// Adds an alias. Re-adding the same alias with the same code is a no-op.
    pub fn insert(&mut self, alias: &str, code: TickerSymbol) -> Result<(), OrderError> {
        let key = normalize_alias(alias);
        if key.is_empty() {
            return Err(OrderError::UnknownSymbol(alias.to_string()));
        }
        match self.entries.get(&key) {
            Some(existing) if *existing != code => Err(OrderError::DuplicateAlias(key)),
            _ => {
                self.entries.insert(key, code);
                Ok(())
            }
        }
    }

    /// Normalized alias → code pairs in alias order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &TickerSymbol)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_code(&self, code: &TickerSymbol) -> bool {
        self.entries.values().any(|c| c == code)
    }
}

pub fn resolve_symbol(name: &str, dir: &SymbolDirectory) -> Result<TickerSymbol, OrderError> {
    dir.entries
        .get(&normalize_alias(name))
        .cloned()
        .ok_or_else(|| OrderError::UnknownSymbol(name.to_string()))
}
