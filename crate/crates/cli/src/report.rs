use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use otbary::measures::DiscreteMeasure;
use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct MomentsReport {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub entropy: f64,
}

impl MomentsReport {
    pub fn of(measure: &DiscreteMeasure) -> Self {
        let m = measure.moments();
        MomentsReport {
            mean: m.mean,
            variance: m.variance,
            entropy: measure.entropy(),
        }
    }
}

/// Writes pretty JSON with a trailing newline.
///
/// Optional fields are skipped rather than written as `null`, so any `null`
/// left in the tree is a non-finite float and is refused.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = to_json(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value)?;
    if let Some(at) = find_null(&tree, String::new()) {
        bail!("report field `{at}` is not a finite number");
    }
    Ok(serde_json::to_string_pretty(&tree)? + "\n")
}

fn find_null(value: &Value, at: String) -> Option<String> {
    match value {
        Value::Null => Some(at),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .find_map(|(i, v)| find_null(v, format!("{at}[{i}]"))),
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
            find_null(v, key)
        }),
        _ => None,
    }
}
