//! Canonical hashing and run manifests for JSON artifacts.
//!
//! Every file the toolkit writes is JSON with a stable field layout. Two
//! hash flavours are used: [`sha256_canonical`] over the full canonical
//! form (sorted keys, compact separators) for checksums, and
//! [`stable_hash`] which first strips volatile keys (wall-clock timings,
//! hardware fingerprints, creation stamps) so that re-running a command
//! with the same config and seeds reproduces the same hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Keys whose values vary between identical runs and are excluded from
/// [`stable_hash`].
pub const VOLATILE_KEYS: &[&str] =
    &["elapsed_ms", "elapsed_seconds", "timing", "timings", "created_at", "hardware", "stage_seconds"];

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push(b'{');
            for (i, (k, v)) in sorted.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend_from_slice(serde_json::to_string(k).unwrap().as_bytes());
                out.push(b':');
                write_canonical(v, out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(v, out);
            }
            out.push(b']');
        }
        other => out.extend_from_slice(serde_json::to_string(other).unwrap().as_bytes()),
    }
}

pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Canonical SHA-256 of any serializable value.
pub fn sha256_canonical<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes");
    sha256_hex(&canonical_bytes(&v))
}

fn strip_volatile(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.retain(|k, _| !VOLATILE_KEYS.contains(&k.as_str()));
            for v in map.values_mut() {
                strip_volatile(v);
            }
        }
        Value::Array(items) => {
            for v in items.iter_mut() {
                strip_volatile(v);
            }
        }
        _ => {}
    }
}

/// Canonical SHA-256 with volatile keys removed: the identity of an artifact
/// for idempotence checks.
pub fn stable_hash<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("value serializes");
    strip_volatile(&mut v);
    sha256_hex(&canonical_bytes(&v))
}

/// Stable hash of a JSON file on disk.
pub fn stable_hash_file(path: &Path) -> std::io::Result<String> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(stable_hash(&v))
}

/// Best-effort CPU description for timing provenance.
pub fn hardware_fingerprint() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1).map(|s| s.trim().to_string()))
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!("{model} x{cores}")
}

/// Provenance block embedded in every artifact a command writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub hardware: String,
    #[serde(default)]
    pub stage_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            input_hashes: BTreeMap::new(),
            seed,
            hardware: hardware_fingerprint(),
            stage_seconds: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, name: &str, hash: String) {
        self.input_hashes.insert(name.to_string(), hash);
    }

    pub fn record_stage(&mut self, name: &str, seconds: f64) {
        self.stage_seconds.insert(name.to_string(), seconds);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_sorts_keys() {
        let a = json!({"b": 1, "a": {"z": true, "y": [1, 2]}});
        let b = json!({"a": {"y": [1, 2], "z": true}, "b": 1});
        assert_eq!(canonical_bytes(&a), canonical_bytes(&b));
        assert_eq!(String::from_utf8(canonical_bytes(&a)).unwrap(), r#"{"a":{"y":[1,2],"z":true},"b":1}"#);
    }

    #[test]
    fn stable_hash_ignores_volatile_fields() {
        let run1 = json!({"result": 3, "timing": {"mean": 0.5}, "elapsed_ms": 123});
        let run2 = json!({"result": 3, "timing": {"mean": 0.9}, "elapsed_ms": 456});
        assert_eq!(stable_hash(&run1), stable_hash(&run2));
        let run3 = json!({"result": 4, "elapsed_ms": 123});
        assert_ne!(stable_hash(&run1), stable_hash(&run3));
    }
}
