//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, keys are dotted lowercase
//! identifiers such as `auction.max_iterations`. Command-line flags are
//! merged on top of the file. Every key a command does not know is rejected,
//! so typos surface as validation errors instead of silently using defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{validation, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STRUX_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    /// Directory relative input paths are resolved against.
    base: Option<PathBuf>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|part| {
            !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        })
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return validation(format!("config line {}: expected `key = value`", n + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return validation(format!("config line {}: malformed key '{k}'", n + 1));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return validation(format!("config line {}: duplicate key '{k}'", n + 1));
            }
        }
        Ok(Self { entries, base: None })
    }

    /// Read a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return validation(format!("cannot read config {}: {e}", path.display())),
        };
        let mut c = Self::parse(&text)?;
        c.base = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    /// Set or replace a value (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        if !valid_key(key) {
            return validation(format!("malformed key '{key}'"));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> CliResult<()> {
        for p in pairs {
            let Some((k, v)) = p.split_once('=') else {
                return validation(format!("override '{p}' is not key=value"));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Reject keys outside `known` (exact keys, or prefixes ending in '.').
    pub fn check_known(&self, known: &[&str]) -> CliResult<()> {
        for k in self.entries.keys() {
            let ok = known.iter().any(|p| if p.ends_with('.') { k.starts_with(p) } else { k == p });
            if !ok {
                return validation(format!("unknown config key '{k}'"));
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => match v.parse() {
                Ok(x) => Ok(x),
                Err(_) => validation(format!("{key}: cannot parse '{v}'")),
            },
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T> {
        match self.entries.get(key) {
            None => validation(format!("{key}: required")),
            Some(v) => match v.parse() {
                Ok(x) => Ok(x),
                Err(_) => validation(format!("{key}: cannot parse '{v}'")),
            },
        }
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.require("seed")
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    }

    /// Path of an existing input file.
    pub fn input(&self, key: &str) -> CliResult<PathBuf> {
        let raw: String = self.require(key)?;
        let p = self.resolve(&raw);
        if !p.is_file() {
            return validation(format!("{key}: input file {} does not exist", p.display()));
        }
        Ok(p)
    }

    /// `output.dir`, else the environment default, else `strux-out`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(d) = self.raw("output.dir") {
            return self.resolve(d);
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => PathBuf::from("strux-out"),
        }
    }
}
