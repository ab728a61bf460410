//! `key=value` text used by config files and binary container headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs. Tracks which keys were read so callers can reject
/// unknown ones.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    /// Parses one `key = value` per line. Blank lines and text after `#` are
    /// ignored; duplicate keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::InvalidArgument(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::InvalidArgument(format!("line {}: duplicate key {k:?}", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("line {line}: bad value for {key}: {e}"))),
        }
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::InvalidArgument(format!("missing key {key:?}")))
    }

    /// Comma-separated list.
    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: Display,
    {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        parse_list(v)
            .map(Some)
            .map_err(|e| Error::InvalidArgument(format!("line {line}: bad value for {key}: {e}")))
    }

    /// Keys not in `known`.
    pub fn unknown_keys<'a>(&'a self, known: &[&str]) -> Vec<&'a str> {
        self.entries
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .collect()
    }
}

/// Parses `"a,b,c"`; whitespace around items is ignored.
pub fn parse_list<V: FromStr>(s: &str) -> std::result::Result<Vec<V>, String>
where
    V::Err: Display,
{
    s.split(',')
        .map(|p| p.trim().parse().map_err(|e: V::Err| format!("{p:?}: {e}")))
        .collect()
}

/// Renders pairs one per line. Floats should be passed through `{:?}` by
/// the caller so they round-trip exactly.
pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
