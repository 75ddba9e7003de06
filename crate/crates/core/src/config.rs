//! Flat `key = value` configuration files.
//!
//! ```text
//! # New Haven field experiment
//! outcome = voted
//! treatment = visit
//! treatment = phone
//! covariates = age, female
//! derived = square:age
//! baseline = 0
//! baseline = none
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. List keys may be
//! repeated and may hold comma-separated values; scalar keys may appear once.
//! Command-line flags replace the values of the corresponding key.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const LIST_KEYS: &[&str] = &[
    "treatment",
    "covariates",
    "derived",
    "baseline",
    "heterogeneity",
    "sizes",
    "scenario",
];

pub const SCALAR_KEYS: &[&str] = &[
    "data",
    "outcome",
    "weights",
    "encoding",
    "grid_min",
    "grid_max",
    "precision",
    "lambda_z",
    "lambda_v",
    "seed",
    "replicates",
    "jobs",
    "output",
    "eval_n",
    "budget",
    "calibration_draws",
    "top_k",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, Vec<String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            if LIST_KEYS.contains(&key.as_str()) {
                let items = value.split(',').map(str::trim).filter(|s| !s.is_empty());
                cfg.entries.entry(key).or_default().extend(items.map(String::from));
            } else if SCALAR_KEYS.contains(&key.as_str()) {
                if cfg.entries.contains_key(&key) {
                    return Err(Error::Config(format!("line {}: '{key}' given twice", lineno + 1)));
                }
                cfg.entries.insert(key, vec![value.to_string()]);
            } else {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.entries.get(key).cloned().unwrap_or_default()
    }

    /// Replaces a scalar when `value` is given.
    pub fn override_scalar(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.entries.insert(key.to_string(), vec![v]);
        }
    }

    /// Replaces a list when `values` is nonempty; comma-separated items are split.
    pub fn override_list(&mut self, key: &str, values: &[String]) {
        if !values.is_empty() {
            let items = values
                .iter()
                .flat_map(|v| v.split(','))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            self.entries.insert(key.to_string(), items);
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("'{key}' has invalid value '{v}'")))
            })
            .transpose()
    }

    pub fn parsed_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.list(key)
            .iter()
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("'{key}' has invalid item '{v}'")))
            })
            .collect()
    }

    /// Stable text form used for hashing.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={}\n", v.join(",")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_accumulate_and_flags_override() {
        let mut c =
            ConfigFile::parse("# comment\noutcome = y\ntreatment = a\ntreatment = b\ncovariates = x1, x2\n\nseed=7\n")
                .unwrap();
        assert_eq!(c.get("outcome"), Some("y"));
        assert_eq!(c.list("treatment"), vec!["a", "b"]);
        assert_eq!(c.list("covariates"), vec!["x1", "x2"]);
        assert_eq!(c.parsed::<u64>("seed").unwrap(), Some(7));
        c.override_list("covariates", &["x3,x4".into()]);
        c.override_scalar("seed", Some("9".into()));
        c.override_scalar("outcome", None);
        assert_eq!(c.list("covariates"), vec!["x3", "x4"]);
        assert_eq!(c.get("seed"), Some("9"));
        assert_eq!(c.get("outcome"), Some("y"));
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        for text in ["outcome y", "colour = red", "seed = 1\nseed = 2", "replicates = many"] {
            let r = ConfigFile::parse(text).and_then(|c| c.parsed::<usize>("replicates").map(|_| ()));
            assert_eq!(r.unwrap_err().exit_code(), 2, "{text}");
        }
    }
}
