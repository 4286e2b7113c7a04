//! JSON-RPC 2.0 front for the tool registry (`initialize`, `tools/list`,
//! `tools/call`). Transport-free: [`handle`] maps a request body to a
//! response value, which is `Null` when nothing should be sent back.

use serde_json::{json, Value};

use crate::tools::{ToolError, ToolRegistry};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

pub const PROTOCOL_VERSION: &str = "2025-03-26";

fn error(id: Value, code: i64, message: impl Into<String>) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "error": { "code": code, "message": message.into() } })
}

fn success(id: Value, result: Value) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "result": result })
}

/// Handles a raw request body, single or batch.
pub fn handle(registry: &ToolRegistry, body: &str) -> Value {
    let parsed: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return error(Value::Null, PARSE_ERROR, format!("parse error: {e}")),
    };
    match parsed {
        Value::Array(batch) if batch.is_empty() => error(Value::Null, INVALID_REQUEST, "empty batch"),
        Value::Array(batch) => {
            let out: Vec<Value> = batch
                .iter()
                .map(|r| handle_value(registry, r))
                .filter(|r| !r.is_null())
                .collect();
            if out.is_empty() {
                Value::Null
            } else {
                Value::Array(out)
            }
        }
        single => handle_value(registry, &single),
    }
}

/// Handles one parsed request. Notifications (no `id`) get `Null`.
pub fn handle_value(registry: &ToolRegistry, req: &Value) -> Value {
    let Some(obj) = req.as_object() else {
        return error(Value::Null, INVALID_REQUEST, "request must be an object");
    };
    let id = obj.get("id").cloned();
    let valid_id = matches!(&id, None | Some(Value::String(_)) | Some(Value::Number(_)) | Some(Value::Null));
    if obj.get("jsonrpc").and_then(Value::as_str) != Some("2.0") || !valid_id {
        return error(id.filter(|_| valid_id).unwrap_or(Value::Null), INVALID_REQUEST, "not a JSON-RPC 2.0 request");
    }
    let Some(method) = obj.get("method").and_then(Value::as_str) else {
        return error(id.unwrap_or(Value::Null), INVALID_REQUEST, "missing method");
    };
    let Some(id) = id else {
        // notification, e.g. notifications/initialized
        return Value::Null;
    };
    let params = obj.get("params").cloned().unwrap_or(Value::Null);
    if !(params.is_null() || params.is_object()) {
        return error(id, INVALID_PARAMS, "params must be an object");
    }
    match method {
        "initialize" => success(
            id,
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": { "tools": { "listChanged": false } },
                "serverInfo": { "name": "fashionrec", "version": env!("CARGO_PKG_VERSION") }
            }),
        ),
        "ping" => success(id, json!({})),
        "tools/list" => success(id, json!({ "tools": registry.list() })),
        "tools/call" => {
            let Some(name) = params["name"].as_str() else {
                return error(id, INVALID_PARAMS, "tools/call needs a string `name`");
            };
            let args = match params.get("arguments") {
                None | Some(Value::Null) => json!({}),
                Some(a) => a.clone(),
            };
            match registry.call(name, &args) {
                Ok(out) => success(
                    id,
                    json!({
                        "content": [{ "type": "text", "text": out.to_string() }],
                        "structuredContent": out,
                        "isError": false
                    }),
                ),
                Err(ToolError::UnknownTool(t)) => error(id, METHOD_NOT_FOUND, format!("unknown tool: {t}")),
                Err(ToolError::InvalidParams(m)) => error(id, INVALID_PARAMS, m),
                // execution failures are reported in-band so the caller can
                // show them to the model
                Err(e @ ToolError::Failed(_)) => success(
                    id,
                    json!({
                        "content": [{ "type": "text", "text": e.to_string() }],
                        "isError": true
                    }),
                ),
            }
        }
        other => error(id, METHOD_NOT_FOUND, format!("unknown method: {other}")),
    }
}
