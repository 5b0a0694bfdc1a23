//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes and returns plain strings: config text in the same
//! `key = value` format the CLI reads, JSON out.

use serde_json::{json, Map, Value as Json};
use wasm_bindgen::prelude::*;

use dipolar_core::output::{CsvTable, Value};
use dipolar_core::scenario::{evaluate_scenario, Scenario, ScenarioName};

fn cell(v: &Value) -> Json {
    match v {
        Value::F(x) if x.is_finite() => json!(x),
        Value::F(_) => Json::Null,
        Value::U(u) => json!(u),
        Value::I(i) => json!(i),
        Value::S(s) => json!(s),
    }
}

/// Column-major JSON: `{"column": [values...]}`.
fn table_json(t: &CsvTable) -> Json {
    let mut cols = Map::new();
    for (c, name) in t.columns.iter().enumerate() {
        cols.insert(name.clone(), t.rows.iter().map(|r| cell(&r[c])).collect());
    }
    Json::Object(cols)
}

fn err_json(e: dipolar_core::Error) -> String {
    json!({ "kind": e.kind(), "message": e.to_string() }).to_string()
}

pub fn scenario_list() -> String {
    Json::from(ScenarioName::ALL.iter().map(|n| n.as_str()).collect::<Vec<_>>()).to_string()
}

/// Default config text for a scenario, including its effective sweeps.
pub fn default_config_text(name: &str) -> Result<String, String> {
    let name: ScenarioName = name.parse().map_err(err_json)?;
    Ok(Scenario::new(name).to_config_string())
}

/// Evaluate a scenario from config text.
///
/// Result: `{"scenario", "rows": {"total", "ok"}, "tables": {name: columns},
/// "json": {name: value}}`. Errors come back as `{"kind", "message"}`.
pub fn evaluate(config: &str) -> Result<String, String> {
    let s = Scenario::from_config_str(config, None).map_err(err_json)?;
    let out = evaluate_scenario(&s, 1).map_err(err_json)?;
    let tables: Map<String, Json> = out.tables.iter().map(|(n, t)| (n.clone(), table_json(t))).collect();
    let mut side = Map::new();
    for (n, body) in &out.json {
        side.insert(n.clone(), serde_json::from_str(body).unwrap_or(Json::Null));
    }
    Ok(json!({
        "scenario": s.name.as_str(),
        "rows": { "total": out.rows.total, "ok": out.rows.ok },
        "tables": tables,
        "json": side,
    })
    .to_string())
}

#[wasm_bindgen(js_name = scenarios)]
pub fn scenarios_js() -> String {
    scenario_list()
}

#[wasm_bindgen(js_name = defaultConfig)]
pub fn default_config_js(name: &str) -> Result<String, JsValue> {
    default_config_text(name).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = run)]
pub fn run_js(config: &str) -> Result<String, JsValue> {
    evaluate(config).map_err(|e| JsValue::from_str(&e))
}
