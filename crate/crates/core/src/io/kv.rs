//! Flat `section.key = value` text files shared by config and calibration.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::{Error, Result};

/// Parsed key-value file remembering where each key came from.
#[derive(Debug, Clone, Default)]
pub(crate) struct KeyValues {
    source: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    /// `#` starts a comment; blank lines are ignored; keys may not repeat.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(err("empty key or value".into()));
            }
            if entries.insert(key.to_string(), (value.to_string(), line_no)).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    fn error(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line,
            message,
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key`, leaving `target` untouched when it is absent.
    pub fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some((value, line)) = self.entries.remove(key) {
            *target = value
                .parse()
                .map_err(|_| self.error(line, format!("invalid value `{value}` for `{key}`")))?;
        }
        Ok(())
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (value, line) = self
            .entries
            .remove(key)
            .ok_or_else(|| self.error(0, format!("missing key `{key}`")))?;
        value
            .parse()
            .map_err(|_| self.error(line, format!("invalid value `{value}` for `{key}`")))
    }

    /// Whitespace- or comma-separated list of exactly `N` numbers.
    pub fn take_array<const N: usize>(&mut self, key: &str, target: &mut [f64; N]) -> Result<()> {
        if let Some((value, line)) = self.entries.remove(key) {
            let parts: Vec<&str> = value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if parts.len() != N {
                return Err(self.error(line, format!("`{key}` needs {N} numbers, got {}", parts.len())));
            }
            for (t, p) in target.iter_mut().zip(parts) {
                *t = p
                    .parse()
                    .map_err(|_| self.error(line, format!("invalid number `{p}` in `{key}`")))?;
            }
        }
        Ok(())
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(Error::Parse {
                path: self.source,
                line,
                message: format!("unknown key `{key}`"),
            }),
            None => Ok(()),
        }
    }
}
