//! Flat `key=value` configuration files. Keys are the long flag names
//! without dashes (`N`, `seed`, `alpha`, `min-delta`, ...); command-line
//! flags take precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::BadArgs;

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| BadArgs(format!("config line {}: expected key=value, got '{line}'", lineno + 1)))?;
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, otherwise the parsed config entry.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(text) => text
                .parse()
                .map(Some)
                .map_err(|e| BadArgs(format!("config key '{key}': cannot parse '{text}': {e}")).into()),
        }
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| BadArgs(format!("missing required option --{key}")).into())
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Boolean switches: set by the flag or by `key=true` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}
