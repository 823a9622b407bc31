//! Canonical `key=value` text used for configs, checkpoint headers and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value pairs. Rendering is canonical: keys sorted, one
/// `key=value` per line, trailing newline.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// a repeated key is an error.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    /// Parses items of the form `key=value`, e.g. command-line overrides.
    pub fn from_pairs<'a>(items: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut kv = KeyValues::new();
        let mut errors = Vec::new();
        for item in items {
            match item.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let k = k.trim().to_string();
                    if kv.map.insert(k.clone(), v.trim().to_string()).is_some() {
                        errors.push(format!("duplicate key `{k}`"));
                    }
                }
                _ => errors.push(format!("expected key=value, got `{item}`")),
            }
        }
        if errors.is_empty() {
            Ok(kv)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    /// Copies every pair of `other` over this one.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Typed reader over [`KeyValues`] that collects every problem instead of
/// stopping at the first one, and rejects keys nobody asked for.
pub struct KvReader<'a> {
    kv: &'a KeyValues,
    used: BTreeSet<String>,
    errors: Vec<String>,
}

impl<'a> KvReader<'a> {
    pub fn new(kv: &'a KeyValues) -> Self {
        KvReader {
            kv,
            used: BTreeSet::new(),
            errors: Vec::new(),
        }
    }

    pub fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.kv.get(key)
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{key}: cannot parse `{raw}`: {e}"));
                None
            }
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: Display,
    {
        self.opt(key).unwrap_or(default)
    }

    pub fn required<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        if self.kv.get(key).is_none() {
            self.errors.push(format!("{key}: required"));
        }
        self.opt(key)
    }

    pub fn error(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }

    /// Marks keys as known without reading them.
    pub fn allow(&mut self, keys: &[&str]) {
        for k in keys {
            self.used.insert((*k).to_string());
        }
    }

    /// Fails with every collected error plus one per unknown key.
    pub fn finish(self) -> Result<()> {
        let mut errors = self.errors;
        for (k, _) in self.kv.iter() {
            if !self.used.contains(k) {
                errors.push(format!("unknown key `{k}`"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

/// Comma-separated list helper for values such as `300,300,300`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|e: T::Err| e.to_string()))
        .collect()
}

pub fn render_list<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
