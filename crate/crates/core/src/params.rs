//! Flat `key = value` parameter maps with typed lookups.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{BloError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Params {
    entries: BTreeMap<String, String>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                BloError::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(BloError::InvalidConfig(format!("line {}: empty key", n + 1)));
            }
            p.set(k, v.trim());
        }
        Ok(p)
    }

    /// Parses whitespace-separated `key=value` tokens.
    pub fn parse_inline(text: &str) -> Result<Self> {
        let mut p = Self::new();
        for tok in text.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                BloError::InvalidConfig(format!("expected key=value, got {tok:?}"))
            })?;
            p.set(k, v);
        }
        Ok(p)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Later entries win.
    pub fn merged(&self, over: &Params) -> Params {
        let mut out = self.clone();
        for (k, v) in &over.entries {
            out.entries.insert(k.clone(), v.clone());
        }
        out
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Params {
        let dotted = format!("{prefix}.");
        Params {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                BloError::InvalidConfig(format!("cannot parse {key} = {v:?}"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| {
                        BloError::InvalidConfig(format!("cannot parse {key} item {s:?}"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Errors on any key outside `valid`, listing the valid ones.
    pub fn check_keys(&self, context: &str, valid: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !valid.contains(k)).collect();
        if unknown.is_empty() {
            return Ok(());
        }
        Err(BloError::InvalidConfig(format!(
            "unknown {context} key(s) {}; valid keys: {}",
            unknown.join(", "),
            valid.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let p = Params::parse("# header\nseeds = 0, 1,2\n\nouter.eta=0.005 # lr\n").unwrap();
        assert_eq!(p.list::<u64>("seeds").unwrap(), Some(vec![0, 1, 2]));
        assert_eq!(p.section("outer").get::<f64>("eta").unwrap(), Some(0.005));
        assert!(Params::parse("oops").is_err());
    }

    #[test]
    fn unknown_keys_are_listed() {
        let p = Params::parse_inline("alpha=1 beta=2").unwrap();
        let err = p.check_keys("estimator", &["alpha"]).unwrap_err().to_string();
        assert!(err.contains("beta") && err.contains("valid keys: alpha"));
    }
}
