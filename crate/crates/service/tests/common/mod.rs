#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use tradeslot_core::dialogue::SessionConfig;
use tradeslot_core::exchange::PriceFeed;
use tradeslot_core::gateway::{ChatProvider, ScriptedProvider};
use tradeslot_core::{SymbolDirectory, TickerSymbol};
use tradeslot_service::api::{router, AppState};

pub const KU_UTTERANCE: &str = "KU's tech is going to be really popular, I'll buy 1000 shares of it.";
pub const KU_REPLY: &str = r#"{"order":{"strategy":"limit order","symbol":"688001","order_type":"buy","price":null,"quantity":1000},"follow_up":["price"],"non_trade":false}"#;

pub fn ku_directory() -> SymbolDirectory {
    let mut dir = SymbolDirectory::builtin();
    dir.insert("KU", TickerSymbol::parse("688001").unwrap()).unwrap();
    dir
}

pub fn ku_feed() -> PriceFeed {
    let mut csv = String::from("symbol,tick,price\n");
    for (tick, price) in ["7.20", "7.05", "6.98", "7.10", "6.90", "7.02"].iter().enumerate() {
        csv.push_str(&format!("688001,{tick},{price}\n"));
    }
    PriceFeed::from_csv(&csv).unwrap()
}

pub fn ku_provider() -> ScriptedProvider {
    ScriptedProvider::new()
        .reply(KU_UTTERANCE, KU_REPLY)
        .with_rule_fallback(ku_directory())
}

pub fn app_with(provider: impl ChatProvider + 'static, cap: usize, config: SessionConfig) -> Router {
    let state = AppState::new(Arc::new(provider), ku_directory(), ku_feed(), config, cap);
    router(Arc::new(state))
}

pub fn ku_app() -> Router {
    app_with(ku_provider(), 8, SessionConfig::default())
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("non-JSON body {bytes:?}: {e}"))
    };
    (status, value)
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().expect("object").keys().map(String::as_str).collect();
    k.sort();
    k
}

fn nullable(v: &Value, check: fn(&Value) -> bool) -> bool {
    v.is_null() || check(v)
}

pub fn check_draft(v: &Value) {
    assert_eq!(
        keys(v),
        ["order_type", "price", "quantity", "strategy", "symbol"],
        "{v}"
    );
    for (k, val) in v.as_object().unwrap() {
        let ok = match k.as_str() {
            "price" => val.is_null() || val.is_number() || val == "None",
            "quantity" => nullable(val, Value::is_u64),
            _ => nullable(val, Value::is_string),
        };
        assert!(ok, "draft field {k} = {val}");
    }
}

pub fn check_report(v: &Value) {
    assert_eq!(keys(v), ["fill_price", "order", "reason", "status", "tick"], "{v}");
    assert!(["filled", "resting", "expired", "rejected"].contains(&v["status"].as_str().unwrap()));
    assert!(nullable(&v["fill_price"], Value::is_number));
    assert!(nullable(&v["tick"], Value::is_u64));
    assert!(nullable(&v["reason"], Value::is_string));
    check_draft(&v["order"]);
}

pub fn check_session(v: &Value) {
    assert_eq!(
        keys(v),
        [
            "draft",
            "id",
            "last_report",
            "pending_field",
            "question",
            "state",
            "transcript"
        ],
        "{v}"
    );
    assert!(v["id"].is_string());
    assert!([
        "await_input",
        "drafting",
        "await_clarification",
        "ready_to_execute",
        "executed",
        "rejected",
        "failed"
    ]
    .contains(&v["state"].as_str().unwrap()));
    if !v["draft"].is_null() {
        check_draft(&v["draft"]);
    }
    assert!(nullable(&v["pending_field"], Value::is_string));
    assert!(nullable(&v["question"], Value::is_string));
    if !v["last_report"].is_null() {
        check_report(&v["last_report"]);
    }
    for b in v["transcript"].as_array().unwrap() {
        assert_eq!(keys(b), ["role", "text"]);
        assert!(["user", "system"].contains(&b["role"].as_str().unwrap()));
    }
}

pub fn check_error(v: &Value) {
    assert_eq!(keys(v), ["error"]);
    assert!(v["error"].is_string());
}
