//! Canonical structured-text encoding.
//!
//! Every document the crate persists or hashes (pipelines, manifests, module
//! specs, reports, events) goes through this writer so that equal content
//! always produces equal bytes:
//!
//! - object keys sorted ascending (byte order) at every level,
//! - two-space indentation, `": "` separators, LF line endings,
//! - a single trailing newline in pretty mode,
//! - numbers in their shortest round-trip form.
//!
//! The compact mode emits the same content on one line without whitespace; it
//! is used for event frames and for text values embedded in other values.

use serde::Serialize;
use serde_json::Value as Json;
use sha2::{Digest as _, Sha256};

/// Renders `value` in the pretty canonical form (trailing newline included).
pub fn to_pretty(value: &Json) -> String {
    let mut out = String::new();
    write_value(&mut out, value, Some(0));
    out.push('\n');
    out
}

/// Renders `value` in the single-line canonical form.
pub fn to_compact(value: &Json) -> String {
    let mut out = String::new();
    write_value(&mut out, value, None);
    out
}

/// Serializes any `Serialize` type through the canonical pretty writer.
pub fn pretty_of<T: Serialize>(value: &T) -> String {
    to_pretty(&serde_json::to_value(value).expect("value is representable as JSON"))
}

/// Serializes any `Serialize` type through the canonical compact writer.
pub fn compact_of<T: Serialize>(value: &T) -> String {
    to_compact(&serde_json::to_value(value).expect("value is representable as JSON"))
}

fn write_value(out: &mut String, value: &Json, indent: Option<usize>) {
    match value {
        Json::Null => out.push_str("null"),
        Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Json::Number(n) => out.push_str(&n.to_string()),
        Json::String(s) => write_string(out, s),
        Json::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent.map(|d| d + 1));
                write_value(out, item, indent.map(|d| d + 1));
            }
            newline(out, indent);
            out.push(']');
        }
        Json::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent.map(|d| d + 1));
                write_string(out, key);
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(out, &map[key], indent.map(|d| d + 1));
            }
            newline(out, indent);
            out.push('}');
        }
    }
}

fn newline(out: &mut String, indent: Option<usize>) {
    if let Some(depth) = indent {
        out.push('\n');
        for _ in 0..depth {
            out.push_str("  ");
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
