//! `key=value` run configuration files.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// later keys override earlier ones.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Input(format!("line {}: empty key", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}
