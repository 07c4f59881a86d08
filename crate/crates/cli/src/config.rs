//! Optional `key = value` configuration file.
//!
//! Keys use the long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are skipped. Flags given on the command line win
//! over the file, and the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key the file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "snr-db",
    "length",
    "height",
    "per-combo-train",
    "per-combo-test",
    "k0",
    "kc",
    "kc-per-class",
    "window",
    "lambda",
    "eta",
    "mu",
    "delta",
    "rho",
    "epochs",
    "tol",
    "admm-iters",
    "newton-iters",
    "pooling",
    "threshold",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "config line {}: expected key = value",
                    lineno + 1
                )));
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::config(format!(
                    "config line {}: unknown key {key:?}",
                    lineno + 1
                )));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(CliError::config(format!(
                    "config line {}: {key} set twice",
                    lineno + 1
                )));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted key {key}");
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::config(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    /// Flag, else file, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}
