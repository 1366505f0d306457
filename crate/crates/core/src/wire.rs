//! JSON wire form of an order draft.
//!
//! Keys are emitted in the fixed order `strategy, symbol, order_type, price,
//! quantity`. `Unknown` is JSON `null`, `NotApplicable` is the string `"None"`.

use serde::Serialize;
use serde_json::Value;

use crate::order::{FieldState, OrderDraft};

pub const NOT_APPLICABLE: &str = "None";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WireDraft {
    pub strategy: Value,
    pub symbol: Value,
    pub order_type: Value,
    pub price: Value,
    pub quantity: Value,
}

fn encode<T>(state: &FieldState<T>, value: impl FnOnce(&T) -> Value) -> Value {
    match state {
        FieldState::Present(v) => value(v),
        FieldState::Unknown => Value::Null,
        FieldState::NotApplicable => Value::String(NOT_APPLICABLE.to_string()),
    }
}

impl From<&OrderDraft> for WireDraft {
    fn from(d: &OrderDraft) -> Self {
        WireDraft {
            strategy: encode(&d.strategy, |s| Value::from(s.wire_value())),
            symbol: encode(&d.symbol, |s| Value::from(s.as_str())),
            order_type: encode(&d.side, |s| Value::from(s.wire_value())),
            price: encode(&d.price, |p| Value::from(p.to_f64())),
            quantity: encode(&d.quantity, |q| Value::from(q.get())),
        }
    }
}

pub fn to_wire_json(draft: &OrderDraft) -> String {
    serde_json::to_string(&WireDraft::from(draft)).expect("wire draft serializes")
}

/// Two-space indented form, the layout used by the reference gold rows.
pub fn to_wire_json_pretty(draft: &OrderDraft) -> String {
    serde_json::to_string_pretty(&WireDraft::from(draft)).expect("wire draft serializes")
}
