//! Deterministic single-venue simulator over a scripted price feed.
//!
//! Market orders fill at the first feed tick at or after the venue clock.
//! Limit orders scan forward and fill at the first tick whose price satisfies
//! the limit (buy: price ≤ limit, sell: price ≥ limit), at that tick's price.
//! No partial fills, no book depth, no fees.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::order::{ExecutableOrder, Money, OrderKind, Side, TickerSymbol};
use crate::wire::WireDraft;

pub const DEFAULT_HORIZON: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExchangeError {
    #[error("no feed data for symbol {0} at or after the current tick")]
    UnknownSymbolFeed(TickerSymbol),
    #[error("oversell rejected: holding {held} of {symbol}, asked to sell {requested}")]
    OversellRejected {
        symbol: TickerSymbol,
        held: i64,
        requested: u64,
    },
    #[error("report is not a fill")]
    NotFilled,
    #[error("feed line {line}: {detail}")]
    Feed { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Per-symbol `(tick, price)` series with strictly increasing ticks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriceFeed {
    series: BTreeMap<TickerSymbol, Vec<(u64, Money)>>,
}

#[derive(Deserialize)]
struct FeedRow {
    symbol: String,
    tick: u64,
    price: String,
}

impl PriceFeed {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tick; ticks must increase per symbol.
    pub fn push(&mut self, symbol: TickerSymbol, tick: u64, price: Money) -> Result<(), ExchangeError> {
        let series = self.series.entry(symbol.clone()).or_default();
        if let Some((last, _)) = series.last() {
            if tick <= *last {
                return Err(ExchangeError::Feed {
                    line: 0,
                    detail: format!("tick {tick} for {symbol} does not follow {last}"),
                });
            }
        }
        series.push((tick, price));
        Ok(())
    }

    pub fn from_series(symbol: TickerSymbol, points: &[(u64, Money)]) -> Result<Self, ExchangeError> {
        let mut feed = Self::new();
        for (tick, price) in points {
            feed.push(symbol.clone(), *tick, *price)?;
        }
        Ok(feed)
    }

    /// CSV with header `symbol,tick,price`.
    pub fn from_csv(text: &str) -> Result<Self, ExchangeError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut feed = Self::new();
        for (idx, row) in reader.deserialize::<FeedRow>().enumerate() {
            let line = idx + 2;
            let err = |detail: String| ExchangeError::Feed { line, detail };
            let row = row.map_err(|e| err(e.to_string()))?;
            let symbol = TickerSymbol::parse(&row.symbol).map_err(|e| err(e.to_string()))?;
            let price = row.price.parse::<Money>().map_err(|e| err(e.to_string()))?;
            feed.push(symbol, row.tick, price).map_err(|e| match e {
                ExchangeError::Feed { detail, .. } => err(detail),
                other => other,
            })?;
        }
        Ok(feed)
    }

    pub fn load(path: &Path) -> Result<Self, ExchangeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExchangeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("symbol,tick,price\n");
        for (symbol, series) in &self.series {
            for (tick, price) in series {
                out.push_str(&format!("{symbol},{tick},{price}\n"));
            }
        }
        out
    }

    /// Seeded multiplicative random walk: each step multiplies by a factor
    /// uniform in [0.99, 1.01], rounded to the cent and floored at one cent.
    /// Ticks run `0..steps`.
    pub fn random_walk(symbol: TickerSymbol, start: Money, steps: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feed = Self::new();
        let mut cents = start.cents() as f64;
        for tick in 0..steps {
            if tick > 0 {
                cents *= rng.random_range(0.99..=1.01);
                cents = cents.round().max(1.0);
            }
            let price = Money::from_cents(cents as i64).expect("walk stays positive");
            feed.push(symbol.clone(), tick, price).expect("ticks increase");
        }
        feed
    }

    pub fn merge(&mut self, other: PriceFeed) -> Result<(), ExchangeError> {
        for (symbol, series) in other.series {
            for (tick, price) in series {
                self.push(symbol.clone(), tick, price)?;
            }
        }
        Ok(())
    }

    pub fn series(&self, symbol: &TickerSymbol) -> Option<&[(u64, Money)]> {
        self.series.get(symbol).map(Vec::as_slice)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &TickerSymbol> {
        self.series.keys()
    }

    /// Points with tick ≥ `from`.
    fn points_from(&self, symbol: &TickerSymbol, from: u64) -> Option<&[(u64, Money)]> {
        let series = self.series.get(symbol)?;
        let start = series.partition_point(|(t, _)| *t < from);
        let rest = &series[start..];
        (!rest.is_empty()).then_some(rest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionStatus {
    Filled { fill_price: Money, tick: u64 },
    Resting,
    Expired,
    Rejected(String),
}

impl ExecutionStatus {
    pub fn label(&self) -> &'static str {
        match self {
            ExecutionStatus::Filled { .. } => "filled",
            ExecutionStatus::Resting => "resting",
            ExecutionStatus::Expired => "expired",
            ExecutionStatus::Rejected(_) => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionReport {
    pub status: ExecutionStatus,
    pub order: ExecutableOrder,
}

impl ExecutionReport {
    pub fn is_filled(&self) -> bool {
        matches!(self.status, ExecutionStatus::Filled { .. })
    }

    pub fn to_wire(&self) -> ReportWire {
        let (fill_price, tick, reason) = match &self.status {
            ExecutionStatus::Filled { fill_price, tick } => (Some(fill_price.to_f64()), Some(*tick), None),
            ExecutionStatus::Rejected(r) => (None, None, Some(r.clone())),
            _ => (None, None, None),
        };
        ReportWire {
            status: self.status.label().to_string(),
            fill_price,
            tick,
            reason,
            order: WireDraft::from(&self.order.to_draft()),
        }
    }
}

impl fmt::Display for ExecutionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.order;
        match &self.status {
            ExecutionStatus::Filled { fill_price, tick } => write!(
                f,
                "Filled: {} {} {} @ {} (tick {})",
                o.side, o.quantity, o.symbol, fill_price, tick
            ),
            ExecutionStatus::Resting => write!(f, "Resting: {} {} {}", o.side, o.quantity, o.symbol),
            ExecutionStatus::Expired => write!(f, "Expired: {} {} {}", o.side, o.quantity, o.symbol),
            ExecutionStatus::Rejected(r) => write!(f, "Rejected: {r}"),
        }
    }
}

/// JSON shape of a report, one line per report in the trade log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportWire {
    pub status: String,
    pub fill_price: Option<f64>,
    pub tick: Option<u64>,
    pub reason: Option<String>,
    pub order: WireDraft,
}

impl ReportWire {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

pub fn crosses(side: Side, limit: Money, price: Money) -> bool {
    match side {
        Side::Buy => price <= limit,
        Side::Sell => price >= limit,
    }
}

/// Runs one order against the feed starting at `from_tick`.
///
/// `horizon = None` leaves an uncrossed limit order `Resting`; otherwise only
/// ticks within `from_tick + horizon` are considered and it `Expired`s.
pub fn submit(
    order: &ExecutableOrder,
    feed: &PriceFeed,
    from_tick: u64,
    horizon: Option<u64>,
) -> Result<ExecutionReport, ExchangeError> {
    let series = feed
        .points_from(&order.symbol, from_tick)
        .ok_or_else(|| ExchangeError::UnknownSymbolFeed(order.symbol.clone()))?;
    let status = match order.kind {
        OrderKind::Market => {
            let (tick, price) = series[0];
            ExecutionStatus::Filled {
                fill_price: price,
                tick,
            }
        }
        OrderKind::Limit(limit) => {
            let last = horizon.map(|h| from_tick.saturating_add(h));
            let hit = series
                .iter()
                .take_while(|(t, _)| last.is_none_or(|l| *t <= l))
                .find(|(_, p)| crosses(order.side, limit, *p));
            match (hit, horizon) {
                (Some(&(tick, price)), _) => ExecutionStatus::Filled {
                    fill_price: price,
                    tick,
                },
                (None, None) => ExecutionStatus::Resting,
                (None, Some(_)) => ExecutionStatus::Expired,
            }
        }
    };
    Ok(ExecutionReport {
        status,
        order: order.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Portfolio {
    pub positions: BTreeMap<TickerSymbol, i64>,
    pub trade_log: Vec<ExecutionReport>,
    pub oversell_protection: bool,
}

impl Default for Portfolio {
    fn default() -> Self {
        Portfolio {
            positions: BTreeMap::new(),
            trade_log: Vec::new(),
            oversell_protection: true,
        }
    }
}

impl Portfolio {
    pub fn position(&self, symbol: &TickerSymbol) -> i64 {
        self.positions.get(symbol).copied().unwrap_or(0)
    }

    pub fn with_position(mut self, symbol: TickerSymbol, quantity: i64) -> Self {
        self.positions.insert(symbol, quantity);
        self
    }

    /// Fails when a sell of `order` would take the position below zero.
    pub fn check_sell(&self, order: &ExecutableOrder) -> Result<(), ExchangeError> {
        let held = self.position(&order.symbol);
        let requested = order.quantity.get();
        if self.oversell_protection && order.side == Side::Sell && held < requested as i64 {
            return Err(ExchangeError::OversellRejected {
                symbol: order.symbol.clone(),
                held,
                requested,
            });
        }
        Ok(())
    }

    /// Trade log as JSONL.
    pub fn trade_log_jsonl(&self) -> String {
        self.trade_log
            .iter()
            .map(|r| serde_json::to_string(&r.to_wire()).expect("report serializes") + "\n")
            .collect()
    }
}

pub fn apply_fill(portfolio: &Portfolio, report: &ExecutionReport) -> Result<Portfolio, ExchangeError> {
    if !report.is_filled() {
        return Err(ExchangeError::NotFilled);
    }
    portfolio.check_sell(&report.order)?;
    let mut next = portfolio.clone();
    let qty = report.order.quantity.get() as i64;
    let delta = match report.order.side {
        Side::Buy => qty,
        Side::Sell => -qty,
    };
    *next.positions.entry(report.order.symbol.clone()).or_insert(0) += delta;
    next.trade_log.push(report.clone());
    Ok(next)
}

/// Feed + clock + portfolio, processed sequentially by one owner.
#[derive(Debug, Clone)]
pub struct Venue {
    pub feed: PriceFeed,
    pub clock: u64,
    pub horizon: Option<u64>,
    pub portfolio: Portfolio,
}

impl Venue {
    pub fn new(feed: PriceFeed) -> Self {
        Venue {
            feed,
            clock: 0,
            horizon: Some(DEFAULT_HORIZON),
            portfolio: Portfolio::default(),
        }
    }

    pub fn advance(&mut self, ticks: u64) {
        self.clock = self.clock.saturating_add(ticks);
    }

    /// Checks oversell, submits, and books the fill if there is one.
    pub fn execute(&mut self, order: &ExecutableOrder) -> Result<ExecutionReport, ExchangeError> {
        self.portfolio.check_sell(order)?;
        let report = submit(order, &self.feed, self.clock, self.horizon)?;
        if report.is_filled() {
            self.portfolio = apply_fill(&self.portfolio, &report)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::order::ShareCount;

    fn sym(s: &str) -> TickerSymbol {
        TickerSymbol::parse(s).unwrap()
    }

    fn m(s: &str) -> Money {
        s.parse().unwrap()
    }

    fn order(kind: OrderKind, side: Side, qty: u64, code: &str) -> ExecutableOrder {
        ExecutableOrder {
            kind,
            symbol: sym(code),
            side,
            quantity: ShareCount::new(qty).unwrap(),
        }
    }

    #[test]
    fn market_fills_at_current_price() {
        let feed = PriceFeed::from_series(sym("600519"), &[(0, m("10.00")), (1, m("11"))]).unwrap();
        let r = submit(&order(OrderKind::Market, Side::Buy, 100, "600519"), &feed, 0, Some(100)).unwrap();
        assert_eq!(
            r.status,
            ExecutionStatus::Filled {
                fill_price: m("10.00"),
                tick: 0
            }
        );
    }

    #[test]
    fn limit_buy_first_crossing() {
        let feed = PriceFeed::from_series(
            sym("600519"),
            &[(1, m("1850")), (2, m("1820")), (3, m("1795")), (4, m("1810"))],
        )
        .unwrap();
        let r = submit(
            &order(OrderKind::Limit(m("1800")), Side::Buy, 200, "600519"),
            &feed,
            0,
            Some(DEFAULT_HORIZON),
        )
        .unwrap();
        assert_eq!(
            r.status,
            ExecutionStatus::Filled {
                fill_price: m("1795"),
                tick: 3
            }
        );
    }

    #[test]
    fn limit_sell_never_crossed() {
        let points: Vec<_> = (0..50).map(|t| (t, m("1990"))).collect();
        let feed = PriceFeed::from_series(sym("600519"), &points).unwrap();
        let o = order(OrderKind::Limit(m("2000")), Side::Sell, 10, "600519");
        assert_eq!(
            submit(&o, &feed, 0, Some(100)).unwrap().status,
            ExecutionStatus::Expired
        );
        assert_eq!(submit(&o, &feed, 0, None).unwrap().status, ExecutionStatus::Resting);
    }

    #[test]
    fn horizon_cuts_scan() {
        let feed = PriceFeed::from_series(sym("000002"), &[(0, m("12")), (5, m("9"))]).unwrap();
        let o = order(OrderKind::Limit(m("10")), Side::Buy, 1, "000002");
        assert_eq!(submit(&o, &feed, 0, Some(4)).unwrap().status, ExecutionStatus::Expired);
        assert!(submit(&o, &feed, 0, Some(5)).unwrap().is_filled());
    }

    #[test]
    fn unknown_symbol_feed() {
        let feed = PriceFeed::from_series(sym("000002"), &[(0, m("12"))]).unwrap();
        let o = order(OrderKind::Market, Side::Buy, 1, "600519");
        assert_eq!(
            submit(&o, &feed, 0, None),
            Err(ExchangeError::UnknownSymbolFeed(sym("600519")))
        );
        let o = order(OrderKind::Market, Side::Buy, 1, "000002");
        assert!(submit(&o, &feed, 1, None).is_err());
    }

    #[test]
    fn apply_fill_examples() {
        let feed = PriceFeed::from_series(sym("600519"), &[(0, m("10"))]).unwrap();
        let buy = submit(&order(OrderKind::Market, Side::Buy, 100, "600519"), &feed, 0, None).unwrap();
        let p = apply_fill(&Portfolio::default(), &buy).unwrap();
        assert_eq!(p.position(&sym("600519")), 100);
        assert_eq!(p.trade_log.len(), 1);

        let held = Portfolio::default().with_position(sym("600519"), 300);
        let sell = submit(&order(OrderKind::Market, Side::Sell, 300, "600519"), &feed, 0, None).unwrap();
        assert_eq!(apply_fill(&held, &sell).unwrap().position(&sym("600519")), 0);

        let held = Portfolio::default().with_position(sym("600519"), 100);
        let sell = submit(&order(OrderKind::Market, Side::Sell, 200, "600519"), &feed, 0, None).unwrap();
        assert!(matches!(
            apply_fill(&held, &sell),
            Err(ExchangeError::OversellRejected { held: 100, .. })
        ));

        let unprotected = Portfolio {
            oversell_protection: false,
            ..held
        };
        assert_eq!(apply_fill(&unprotected, &sell).unwrap().position(&sym("600519")), -100);
    }

    #[test]
    fn csv_feed_round_trip_and_errors() {
        let feed = PriceFeed::from_csv("symbol,tick,price\n600519,1,1850\n600519,2,1820.50\n00700,0,400\n").unwrap();
        assert_eq!(feed.series(&sym("600519")).unwrap().len(), 2);
        assert_eq!(PriceFeed::from_csv(&feed.to_csv()).unwrap(), feed);
        assert!(matches!(
            PriceFeed::from_csv("symbol,tick,price\n600519,2,1\n600519,2,1\n"),
            Err(ExchangeError::Feed { line: 3, .. })
        ));
        assert!(PriceFeed::from_csv("symbol,tick,price\n600519,1,-4\n").is_err());
    }

    #[test]
    fn random_walk_is_seeded_and_bounded() {
        let a = PriceFeed::random_walk(sym("600519"), m("100"), 500, 7);
        assert_eq!(a, PriceFeed::random_walk(sym("600519"), m("100"), 500, 7));
        assert_ne!(a, PriceFeed::random_walk(sym("600519"), m("100"), 500, 8));
        let s = a.series(&sym("600519")).unwrap();
        for w in s.windows(2) {
            let ratio = w[1].1.cents() as f64 / w[0].1.cents() as f64;
            // one cent of rounding slack on top of the ±1% step
            assert!(ratio >= 0.99 - 0.01 / w[0].1.to_f64() - 1e-9 && ratio <= 1.01 + 0.01 / w[0].1.to_f64() + 1e-9);
        }
    }

    #[test]
    fn venue_rejects_oversell_before_submitting() {
        let feed = PriceFeed::from_series(sym("600519"), &[(0, m("10"))]).unwrap();
        let mut v = Venue::new(feed);
        assert!(v.execute(&order(OrderKind::Market, Side::Sell, 1, "600519")).is_err());
        assert!(v.portfolio.trade_log.is_empty());
        v.execute(&order(OrderKind::Market, Side::Buy, 5, "600519")).unwrap();
        let jsonl = v.portfolio.trade_log_jsonl();
        assert_eq!(
            jsonl,
            "{\"status\":\"filled\",\"fill_price\":10.0,\"tick\":0,\"reason\":null,\"order\":{\"strategy\":\"market order\",\"symbol\":\"600519\",\"order_type\":\"buy\",\"price\":\"None\",\"quantity\":5}}\n"
        );
    }
}
