//! Flat `key = value` run configuration and parameter resolution.
//!
//! Effective parameters start from built-in defaults, are overridden by the config
//! file, then by command-line flags. The resolved map is what gets hashed into
//! `run.json`, so two runs with the same hash used the same settings.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "workers",
    "tile.size",
    "tile.overlap",
    "tile.min_visibility",
    "sample.rate",
    "sample.threshold",
    "split.cap",
    "merge.dedup",
    "proposal.points",
    "proposal.iou_threshold",
    "proposal.stability_threshold",
    "proposal.downsample",
    "proposal.top_k_large",
    "proposal.top_k_small",
    "proposal.small_image_cutoff",
    "filter.min_likelihood",
    "filter.monotone_std",
    "filter.blocklist",
    "service.proposal_endpoint",
    "service.naming_endpoint",
    "service.max_retries",
    "service.base_delay_ms",
    "service.timeout_ms",
    "dvc.n_dv",
    "dvc.steps",
    "eval.max_dets",
    "eval.interpolation",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                bail!("config line {}: unknown key {k:?}", n + 1);
            }
            if entries.insert(k.to_owned(), v.to_owned()).is_some() {
                bail!("config line {}: key {k:?} set twice", n + 1);
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}

/// Resolved parameters of one command.
#[derive(Debug, Clone, Default)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn resolve(
        defaults: &[(&str, String)],
        config: &ConfigFile,
        flags: Vec<(&str, Option<String>)>,
    ) -> Self {
        let mut values = BTreeMap::new();
        for (k, v) in defaults {
            let v = config.entries.get(*k).cloned().unwrap_or_else(|| v.clone());
            values.insert((*k).to_owned(), v);
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_owned(), v);
            }
        }
        Self { values }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| anyhow!("invalid value {v:?} for {key}: {e}"))
    }

    pub fn optional(&self, key: &str) -> Option<String> {
        Some(self.raw(key).to_owned()).filter(|v| !v.is_empty())
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// sha256 over the sorted `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Shorthand for flag overrides.
pub fn flag<T: ToString>(key: &str, v: Option<T>) -> (&str, Option<String>) {
    (key, v.map(|x| x.to_string()))
}
