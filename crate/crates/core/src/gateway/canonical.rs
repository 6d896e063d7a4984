//! Canonical request form and content hashing for the replay cache.
//!
//! Two requests hash equal when they differ only in object key order or in
//! runs of whitespace inside string values.

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::text::collapse_whitespace;

/// Recursively collapse whitespace in every string. Key order is handled by
/// [`canonical_string`], which always emits keys sorted.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::String(s) => Value::String(collapse_whitespace(s)),
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), canonicalize(v)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// Compact JSON with object keys in byte order, regardless of how the map is backed.
pub fn canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_sorted(&canonicalize(value), &mut out);
    out
}

fn write_sorted(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_sorted(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_sorted(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// SHA-256 over the canonical string, hex encoded.
pub fn request_hash(value: &Value) -> String {
    hex::encode(Sha256::digest(canonical_string(value).as_bytes()))
}
