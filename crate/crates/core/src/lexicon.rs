//! Word lists and a small tokenizer shared by the rule grammar, the intent
//! classifier and the clarification answer parser.

use crate::order::{normalize_alias, Money, ShareCount, Side, Strategy, SymbolDirectory, TickerSymbol};

/// Hesitation tokens. The grammar drops them before matching, and the noise
/// generator draws its default fillers from here.
pub const FILLERS: &[&str] = &["emmm", "emm", "umm", "um", "uh", "uhh", "hmm", "er", "oh", "嗯", "呃"];

const BUY_WORDS: &[&str] = &[
    "buy",
    "buying",
    "bought",
    "purchase",
    "purchasing",
    "acquire",
    "买",
    "买入",
    "购入",
    "买进",
];
const SELL_WORDS: &[&str] = &[
    "sell", "selling", "sold", "dump", "unload", "offload", "卖", "卖出", "抛售", "卖掉",
];
const BUY_PHRASES: &[&[&str]] = &[&["stock", "up"], &["pick", "up"], &["go", "long"]];
const SELL_PHRASES: &[&[&str]] = &[&["cash", "out"], &["get", "rid"]];

const SHARE_WORDS: &[&str] = &["share", "shares", "股"];
const PRICE_MARKERS: &[&str] = &[
    "at", "to", "reaches", "reach", "hits", "hit", "below", "under", "above", "around", "price", "到", "价格",
];
const PRICE_SUFFIXES: &[&str] = &["yuan", "dollars", "dollar", "rmb", "hkd", "元", "块"];
const MARKET_WORDS: &[&str] = &[
    "current",
    "currently",
    "immediately",
    "asap",
    "市价",
    "现价",
    "立即",
    "马上",
];
const MARKET_PHRASES: &[&[&str]] = &[
    &["market", "price"],
    &["right", "now"],
    &["at", "market"],
    &["at", "once"],
    &["best", "available"],
];
const LIMIT_WORDS: &[&str] = &["limit", "限价"];

const TRADE_VERBS: &[&str] = &["trade", "order", "place", "execute", "交易", "下单"];
const INSTRUMENT_WORDS: &[&str] = &[
    "share",
    "shares",
    "stock",
    "stocks",
    "position",
    "positions",
    "股",
    "股票",
    "持仓",
];
const MARKET_VOCAB: &[&str] = &[
    "stock",
    "stocks",
    "share",
    "shares",
    "market",
    "price",
    "prices",
    "risen",
    "rise",
    "rises",
    "rising",
    "rose",
    "fall",
    "falls",
    "falling",
    "fell",
    "drop",
    "dropped",
    "surge",
    "surged",
    "rally",
    "bull",
    "bullish",
    "bear",
    "bearish",
    "portfolio",
    "position",
    "dividend",
    "dividends",
    "index",
    "trading",
    "invest",
    "investing",
    "investment",
    "earnings",
    "valuation",
    "valuations",
    "sector",
    "股票",
    "股市",
    "大盘",
    "涨",
    "跌",
];

pub fn is_filler(word: &str) -> bool {
    FILLERS.contains(&word)
}

/// One whitespace-delimited word after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    /// Lowercase, surrounding punctuation and possessive removed.
    pub word: String,
    /// Currency sign seen in front of the word (`$`, `¥`, `￥`).
    pub currency: bool,
}

impl Token {
    pub fn number(&self) -> Option<&str> {
        let w = self.word.as_str();
        let mut seen_digit = false;
        let mut seen_dot = false;
        for c in w.chars() {
            match c {
                '0'..='9' => seen_digit = true,
                '.' if !seen_dot && seen_digit => seen_dot = true,
                _ => return None,
            }
        }
        (seen_digit && !w.ends_with('.')).then_some(w)
    }

    fn is_cjk(&self) -> bool {
        self.word.chars().any(is_cjk)
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c, '\u{4e00}'..='\u{9fff}' | '\u{3400}'..='\u{4dbf}')
}

const CJK_PUNCT: &[char] = &['，', '。', '；', '！', '？', '、', '：'];

fn is_edge_punct(c: char) -> bool {
    !(c.is_alphanumeric() || c == '$' || c == '¥' || c == '￥')
}

/// Splits on whitespace and at CJK/latin boundaries, drops punctuation and
/// filler tokens. `1,800` becomes `1800`; `Moutai's` becomes `moutai`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let clauses = text.split(|c: char| c.is_whitespace() || CJK_PUNCT.contains(&c));
    for raw in clauses.filter(|r| !r.is_empty()) {
        for piece in split_scripts(raw) {
            let trimmed = piece.trim_matches(is_edge_punct);
            let (currency, body) = match trimmed.chars().next() {
                Some(c @ ('$' | '¥' | '￥')) => (true, &trimmed[c.len_utf8()..]),
                _ => (false, trimmed),
            };
            let mut word = body.trim_matches(is_edge_punct).to_lowercase();
            for suffix in ["'s", "’s"] {
                if let Some(stripped) = word.strip_suffix(suffix) {
                    word = stripped.to_string();
                }
            }
            if is_thousands_grouped(&word) {
                word.retain(|c| c != ',');
            }
            if word.is_empty() || is_filler(&word) {
                continue;
            }
            tokens.push(Token { word, currency });
        }
    }
    tokens
}

fn is_thousands_grouped(word: &str) -> bool {
    let mut groups = word.split(',');
    let Some(first) = groups.next() else { return false };
    let rest: Vec<&str> = groups.collect();
    !rest.is_empty()
        && (1..=3).contains(&first.len())
        && first.bytes().all(|b| b.is_ascii_digit())
        && rest.iter().enumerate().all(|(i, g)| {
            let g = if i + 1 == rest.len() {
                g.split('.').next().unwrap_or("")
            } else {
                g
            };
            g.len() == 3 && g.bytes().all(|b| b.is_ascii_digit())
        })
}

/// Breaks a raw word where it switches between CJK and other characters,
/// so `买入200股` yields `买入`, `200`, `股`.
fn split_scripts(raw: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut prev: Option<bool> = None;
    for (i, c) in raw.char_indices() {
        let class = if is_edge_punct(c) && c != '.' && c != ',' {
            None
        } else {
            Some(is_cjk(c))
        };
        if let (Some(p), Some(cur)) = (prev, class) {
            if p != cur {
                pieces.push(&raw[start..i]);
                start = i;
            }
        }
        if class.is_some() {
            prev = class;
        }
    }
    pieces.push(&raw[start..]);
    pieces
}

fn words(tokens: &[Token]) -> Vec<&str> {
    tokens.iter().map(|t| t.word.as_str()).collect()
}

fn phrase_at(ws: &[&str], i: usize, phrase: &[&str]) -> bool {
    ws.len() >= i + phrase.len() && ws[i..i + phrase.len()] == *phrase
}

fn contains_word(token: &Token, list: &[&str]) -> bool {
    list.contains(&token.word.as_str())
        || (token.is_cjk() && list.iter().any(|w| w.chars().any(is_cjk) && token.word.contains(w)))
}

/// Positions where a buy or sell is mentioned.
pub fn side_mentions(tokens: &[Token]) -> Vec<(usize, Side)> {
    let ws = words(tokens);
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        let buy = contains_word(t, BUY_WORDS) || BUY_PHRASES.iter().any(|p| phrase_at(&ws, i, p));
        let sell = contains_word(t, SELL_WORDS) || SELL_PHRASES.iter().any(|p| phrase_at(&ws, i, p));
        match (buy, sell) {
            (true, false) => out.push((i, Side::Buy)),
            (false, true) => out.push((i, Side::Sell)),
            _ => {}
        }
    }
    out
}

/// Single side if mentions agree; on conflict the last mention before
/// `anchor` (usually the quantity) decides.
pub fn detect_side(tokens: &[Token], anchor: Option<usize>) -> Option<Side> {
    let mentions = side_mentions(tokens);
    let first = mentions.first()?.1;
    if mentions.iter().all(|(_, s)| *s == first) {
        return Some(first);
    }
    let anchor = anchor?;
    mentions.iter().rev().find(|(i, _)| *i < anchor).map(|(_, s)| *s)
}

pub fn has_market_cue(tokens: &[Token]) -> bool {
    let ws = words(tokens);
    tokens
        .iter()
        .enumerate()
        .any(|(i, t)| contains_word(t, MARKET_WORDS) || MARKET_PHRASES.iter().any(|p| phrase_at(&ws, i, p)))
}

/// Explicit strategy words, as in a clarification answer.
pub fn detect_strategy_words(tokens: &[Token]) -> Option<Strategy> {
    let market = tokens.iter().any(|t| t.word == "market" || contains_word(t, &["市价"])) || has_market_cue(tokens);
    let limit = tokens.iter().any(|t| contains_word(t, LIMIT_WORDS));
    match (market, limit) {
        (true, false) => Some(Strategy::MarketOrder),
        (false, true) => Some(Strategy::LimitOrder),
        _ => None,
    }
}

fn is_share_word(token: &Token) -> bool {
    SHARE_WORDS.contains(&token.word.as_str()) || (token.is_cjk() && token.word.starts_with('股'))
}

#[derive(Debug, Clone, PartialEq)]
pub enum NumberRole {
    Quantity(ShareCount),
    Price(Money),
    Code(TickerSymbol),
}

/// Classifies every numeral in the token stream by its neighbours.
pub fn numerals(tokens: &[Token]) -> Vec<(usize, NumberRole)> {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        let Some(num) = t.number() else { continue };
        let next = tokens.get(i + 1);
        let prev = i.checked_sub(1).map(|p| &tokens[p]);
        if next.is_some_and(is_share_word) {
            if let Some(q) = num.parse::<u64>().ok().and_then(|n| ShareCount::new(n).ok()) {
                out.push((i, NumberRole::Quantity(q)));
            }
            continue;
        }
        let priced = t.currency
            || prev.is_some_and(|p| PRICE_MARKERS.contains(&p.word.as_str()))
            || next.is_some_and(|n| contains_word(n, PRICE_SUFFIXES));
        if priced {
            if let Ok(m) = num.parse::<Money>() {
                out.push((i, NumberRole::Price(m)));
            }
            continue;
        }
        if let Ok(code) = TickerSymbol::parse(num) {
            out.push((i, NumberRole::Code(code)));
        }
    }
    out
}

/// Longest directory alias found in the tokens, first position wins.
pub fn find_alias(tokens: &[Token], dir: &SymbolDirectory) -> Option<(usize, usize, TickerSymbol)> {
    let ws = words(tokens);
    let aliases: Vec<(Vec<String>, &TickerSymbol)> = dir
        .entries()
        .map(|(alias, code)| (alias.split(' ').map(str::to_string).collect(), code))
        .collect();
    for i in 0..ws.len() {
        let best = aliases
            .iter()
            .filter(|(parts, _)| {
                let cjk_inside = parts.len() == 1 && parts[0].chars().any(is_cjk) && ws[i].contains(&parts[0]);
                cjk_inside || (ws.len() >= i + parts.len() && parts.iter().zip(&ws[i..]).all(|(a, w)| a == w))
            })
            .max_by_key(|(parts, _)| (parts.len(), parts[0].chars().count()));
        if let Some((parts, code)) = best {
            return Some((i, parts.len(), (*code).clone()));
        }
    }
    None
}

pub fn detect_symbol(tokens: &[Token], dir: &SymbolDirectory) -> Option<TickerSymbol> {
    if let Some((_, _, code)) = find_alias(tokens, dir) {
        return Some(code);
    }
    numerals(tokens).into_iter().find_map(|(_, role)| match role {
        NumberRole::Code(c) => Some(c),
        _ => None,
    })
}

/// First numeral of any kind read as a price; answers to "what price?" are bare.
pub fn first_money(tokens: &[Token]) -> Option<Money> {
    tokens
        .iter()
        .filter_map(|t| t.number())
        .find_map(|n| n.parse::<Money>().ok())
}

pub fn first_share_count(tokens: &[Token]) -> Option<ShareCount> {
    let n = tokens.iter().find_map(|t| t.number())?;
    n.parse::<u64>().ok().and_then(|n| ShareCount::new(n).ok())
}

/// Broad utterance category used to gate the order pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    TradeInstruction,
    TradeRelated,
    Other,
}

pub fn classify_intent_with(utterance: &str, dir: &SymbolDirectory) -> Intent {
    let tokens = tokenize(utterance);
    let action = !side_mentions(&tokens).is_empty() || tokens.iter().any(|t| contains_word(t, TRADE_VERBS));
    let alias = find_alias(&tokens, dir).is_some();
    let roles = numerals(&tokens);
    let instrument = alias
        || tokens.iter().any(|t| contains_word(t, INSTRUMENT_WORDS))
        || roles
            .iter()
            .any(|(_, r)| matches!(r, NumberRole::Code(_) | NumberRole::Quantity(_)));
    if action && instrument {
        return Intent::TradeInstruction;
    }
    let vocab = tokens.iter().any(|t| contains_word(t, MARKET_VOCAB));
    if vocab || instrument {
        Intent::TradeRelated
    } else {
        Intent::Other
    }
}

/// True when `name` normalizes to a directory alias.
pub fn is_alias(name: &str, dir: &SymbolDirectory) -> bool {
    let key = normalize_alias(name);
    dir.entries().any(|(a, _)| a == key)
}
