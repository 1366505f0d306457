//! Natural-language trade instruction toolkit.
//!
//! Utterances become five-field order drafts ([`order`], [`extract`]), missing
//! fields are collected through a clarification dialogue ([`dialogue`]),
//! complete orders run against a simulated venue ([`exchange`]), and model
//! providers ([`gateway`]) are scored with the structured-output metrics in
//! [`bench`]. [`forge`] augments corpora with noise and slicing.

pub mod bench;
pub mod dialogue;
pub mod exchange;
pub mod extract;
pub mod forge;
pub mod gateway;
pub mod lexicon;
pub mod order;
pub mod wire;

pub use extract::{compare_drafts, extract_json_block, parse_draft, ExtractionPolicy, FieldDiff};
pub use order::{
    finalize, missing_fields, resolve_symbol, ExecutableOrder, FieldName, FieldState, Money, OrderDraft, OrderKind,
    ShareCount, Side, Strategy, SymbolDirectory, TickerSymbol,
};
