//! Plain-text run configuration.
//!
//! ```text
//! # comment
//! [train]
//! epochs = 20
//! lambda_avg = 0.3
//! ```
//!
//! Keys outside any section belong to `common`. Dashes and underscores in
//! keys are interchangeable.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<(String, String), String>,
}

fn norm(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = "common".to_string();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", no + 1)))?;
                section = norm(name);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = norm(k);
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if values.insert((section.clone(), key.clone()), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {section}.{key}", no + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Value from `section`, falling back to `common`.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        let key = norm(key);
        self.values
            .get(&(section.to_string(), key.clone()))
            .or_else(|| self.values.get(&("common".to_string(), key)))
            .map(String::as_str)
    }
}

/// Resolves parameters for one command: flag, then file, then default.
/// Every resolved value is remembered for the config echo.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    section: &'static str,
    resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile, section: &'static str) -> Self {
        Self {
            file,
            section,
            resolved: BTreeMap::new(),
        }
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.file.get(self.section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("{}.{key} = {raw:?}: {e}", self.section))),
        }
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.resolved.insert(norm(key), v.to_string());
        Ok(v)
    }

    /// A parameter without a default; recorded as empty when unset.
    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.resolved
            .insert(norm(key), v.as_ref().map(ToString::to_string).unwrap_or_default());
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| Error::Config(format!("missing required parameter {}.{key}", self.section)))
    }

    /// A switch is on if the flag is given, else the file decides.
    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.get(key, flag.then_some(true), false)
    }

    /// Records a derived value that has no flag of its own.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(norm(key), value.to_string());
    }

    pub fn section(&self) -> &'static str {
        self.section
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    /// The resolved configuration in config-file syntax.
    pub fn render(&self) -> String {
        let mut out = format!("[{}]\n", self.section);
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.txt"), self.render())?;
        Ok(())
    }
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::Config(format!("bad list item {s:?}: {e}"))))
        .collect()
}
