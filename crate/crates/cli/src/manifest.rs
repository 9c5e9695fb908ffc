//! Run manifests: the resolved options, digests of every input, and the tool
//! version. No timestamps, so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::Failure;

fn digest_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of `path`, or of every file directly inside it.
pub fn digests(path: &Path, out: &mut BTreeMap<String, String>) -> Result<(), Failure> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| Failure::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            out.insert(p.display().to_string(), digest_file(&p)?);
        }
    } else {
        out.insert(path.display().to_string(), digest_file(path)?);
    }
    Ok(())
}

pub fn build<T: Serialize>(command: &str, resolved: &T, inputs: &[&Path]) -> Result<Vec<u8>, Failure> {
    let mut files = BTreeMap::new();
    for p in inputs {
        digests(p, &mut files)?;
    }
    // where the result goes does not change it
    let mut config = serde_json::to_value(resolved).expect("options serialize");
    if let Value::Object(map) = &mut config {
        map.remove("out");
    }
    let m = json!({
        "tool": "zsl",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "inputs": files,
    });
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    Ok(text.into_bytes())
}

/// Overlays command-line values on config-file values. `null` on the
/// command line means "not given". Config keys may use `-` or `_`.
pub fn merge_options(flags: Value, file: Option<&Value>) -> Result<Value, Failure> {
    let mut merged = serde_json::Map::new();
    if let Some(file) = file {
        let obj = file
            .as_object()
            .ok_or_else(|| Failure::Usage("--config must hold a JSON object".into()))?;
        for (k, v) in obj {
            merged.insert(k.replace('-', "_"), v.clone());
        }
    }
    if let Value::Object(flags) = flags {
        for (k, v) in flags {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    Ok(Value::Object(merged))
}
