mod common;

use fashionrec_server::rpc::{self, INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR};
use serde_json::{json, Value};

use common::Env;

fn assert_error(resp: &Value, id: Value, code: i64) {
    assert_eq!(resp["jsonrpc"], "2.0", "{resp}");
    assert_eq!(resp["id"], id, "{resp}");
    assert_eq!(resp["error"]["code"], code, "{resp}");
    assert!(resp["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(resp.get("result").is_none());
}

#[test]
fn error_paths_are_well_formed() {
    let env = Env::new();
    let orch = env.orchestrator();
    let reg = orch.registry();
    let call = |body: &str| rpc::handle(reg, body);

    assert_error(&call("{not json"), Value::Null, PARSE_ERROR);
    assert_error(&call(""), Value::Null, PARSE_ERROR);
    assert_error(&call("[]"), Value::Null, INVALID_REQUEST);
    assert_error(&call("42"), Value::Null, INVALID_REQUEST);
    assert_error(&call(r#"{"id": 1, "method": "tools/list"}"#), json!(1), INVALID_REQUEST);
    assert_error(&call(r#"{"jsonrpc": "1.0", "id": 1, "method": "tools/list"}"#), json!(1), INVALID_REQUEST);
    assert_error(&call(r#"{"jsonrpc": "2.0", "id": 2}"#), json!(2), INVALID_REQUEST);
    assert_error(&call(r#"{"jsonrpc": "2.0", "id": {"x": 1}, "method": "ping"}"#), Value::Null, INVALID_REQUEST);
    assert_error(&call(r#"{"jsonrpc": "2.0", "id": 3, "method": "tools/remove"}"#), json!(3), METHOD_NOT_FOUND);
    assert_error(
        &call(r#"{"jsonrpc": "2.0", "id": "a", "method": "tools/call", "params": {"name": "teleport", "arguments": {}}}"#),
        json!("a"),
        METHOD_NOT_FOUND,
    );
    assert_error(&call(r#"{"jsonrpc": "2.0", "id": 4, "method": "tools/call", "params": {}}"#), json!(4), INVALID_PARAMS);
    assert_error(&call(r#"{"jsonrpc": "2.0", "id": 5, "method": "tools/call", "params": [1]}"#), json!(5), INVALID_PARAMS);
    assert_error(
        &call(r#"{"jsonrpc": "2.0", "id": 6, "method": "tools/call", "params": {"name": "try_on", "arguments": {}}}"#),
        json!(6),
        INVALID_PARAMS,
    );
    assert_error(
        &call(r#"{"jsonrpc": "2.0", "id": 7, "method": "tools/call", "params": {"name": "retrieve_similar", "arguments": {"text": "x", "colour": "red"}}}"#),
        json!(7),
        INVALID_PARAMS,
    );
}

#[test]
fn list_and_call() {
    let env = Env::new();
    let orch = env.orchestrator();
    let reg = orch.registry();
    let init = rpc::handle(reg, r#"{"jsonrpc": "2.0", "id": 0, "method": "initialize", "params": {}}"#);
    assert!(init["result"]["capabilities"]["tools"].is_object());

    let list = rpc::handle(reg, r#"{"jsonrpc": "2.0", "id": 1, "method": "tools/list"}"#);
    let names: Vec<&str> = list["result"]["tools"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["generate_image", "recommend", "retrieve_similar", "try_on"]);
    assert!(list["result"]["tools"].as_array().unwrap().iter().all(|t| t["inputSchema"]["type"] == "object"));

    let body = json!({"jsonrpc": "2.0", "id": 2, "method": "tools/call", "params": {"name": "retrieve_similar", "arguments": {"item_id": "shoes-000", "k": 2}}});
    let r = rpc::handle(reg, &body.to_string());
    assert_eq!(r["result"]["isError"], false);
    let structured = &r["result"]["structuredContent"];
    assert_eq!(structured["results"].as_array().unwrap().len(), 2);
    let text: Value = serde_json::from_str(r["result"]["content"][0]["text"].as_str().unwrap()).unwrap();
    assert_eq!(&text, structured);

    // execution failure is in-band
    let body = json!({"jsonrpc": "2.0", "id": 3, "method": "tools/call", "params": {"name": "try_on", "arguments": {"image_refs": ["images/missing.png"]}}});
    let r = rpc::handle(reg, &body.to_string());
    assert_eq!(r["result"]["isError"], true);
}

#[test]
fn batches_and_notifications() {
    let env = Env::new();
    let orch = env.orchestrator();
    let reg = orch.registry();
    let r = rpc::handle(
        reg,
        r#"[{"jsonrpc": "2.0", "id": 1, "method": "ping"}, {"jsonrpc": "2.0", "method": "notifications/initialized"}, {"jsonrpc": "2.0", "id": 2, "method": "nope"}, 5]"#,
    );
    let arr = r.as_array().unwrap();
    assert_eq!(arr.len(), 3);
    assert_eq!(arr[0]["result"], json!({}));
    assert_error(&arr[1], json!(2), METHOD_NOT_FOUND);
    assert_error(&arr[2], Value::Null, INVALID_REQUEST);
    assert!(rpc::handle(reg, r#"{"jsonrpc": "2.0", "method": "notifications/initialized"}"#).is_null());
}
