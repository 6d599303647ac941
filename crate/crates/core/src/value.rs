//! Opaque payload values and their canonical text form.
//!
//! Message bodies, timeout bodies and node states are opaque to the debugger:
//! any JSON value. The canonical form sorts object keys and carries no
//! insignificant whitespace, which makes snapshots byte-comparable.

use std::fmt::Write as _;

use serde::Serialize;

/// A tree-structured value: null, boolean, number, text, sequence or map.
pub type Value = serde_json::Value;

/// An empty map, the initial local state of every node.
pub fn empty_state() -> Value {
    Value::Object(serde_json::Map::new())
}

/// Canonical serialization of a value.
pub fn canonical(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

/// Canonical serialization of any serializable type, via the value model.
pub fn to_canonical<T: Serialize + ?Sized>(item: &T) -> Result<String, serde_json::Error> {
    Ok(canonical(&serde_json::to_value(item)?))
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(key, out);
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

fn write_string(s: &str, out: &mut String) {
    if s.bytes().all(|b| b >= 0x20 && b != b'"' && b != b'\\') {
        out.push('"');
        out.push_str(s);
        out.push('"');
    } else {
        // serializing a str cannot fail
        out.push_str(&serde_json::to_string(s).expect("string serialization"));
    }
}
