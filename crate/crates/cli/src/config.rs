//! Sectioned key-value pipeline configuration.
//!
//! Format: `[section]` headers group flat `key = value` lines; `#` starts
//! a comment, blank lines are ignored. Known sections: `sim`, `track`,
//! `odometry`, `segment`. Each subcommand reads only its own section, so
//! one file can drive the whole pipeline. Unknown sections are rejected so
//! typos fail loudly; key validation happens in each section's consumer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

const SECTIONS: [&str; 4] = ["sim", "track", "odometry", "segment"];

/// Raw section bodies of a pipeline config file.
#[derive(Debug, Default)]
pub struct FileConfig {
    sections: BTreeMap<String, String>,
}

impl FileConfig {
    /// Loads a config when a path is given; an absent path yields an empty
    /// config so callers need no special case.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    bail!("config line {}: unknown section [{name}]", lineno + 1);
                }
                current = Some(name.to_string());
                continue;
            }
            match &current {
                // The raw line goes through untouched: each section's
                // parser strips its own comments.
                Some(name) => {
                    let body = sections.entry(name.clone()).or_default();
                    body.push_str(raw);
                    body.push('\n');
                }
                None => {
                    bail!("config line {}: expected a [section] header before {line:?}", lineno + 1)
                }
            }
        }
        Ok(FileConfig { sections })
    }

    pub fn section(&self, name: &str) -> &str {
        self.sections.get(name).map(String::as_str).unwrap_or("")
    }
}

/// Applies `f` to every `key = value` line of a section body.
pub fn parse_kv(body: &str, mut f: impl FnMut(&str, &str) -> Result<()>) -> Result<()> {
    for raw in body.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key = value, got {line:?}"))?;
        f(key.trim(), value.trim())?;
    }
    Ok(())
}

pub fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| anyhow!("cannot parse {key} = {value:?}"))
}
