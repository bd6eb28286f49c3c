//! Plain-text `key = value` configuration with optional `[section]` headers.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Properties;

pub use ini::Ini;

use crate::error::{bail, Error, Result};

/// One section of a parsed config file, plus the directory relative paths
/// resolve against.
#[derive(Clone, Debug)]
pub struct Section {
    name: String,
    props: Properties,
    base_dir: PathBuf,
}

pub fn parse_str(text: &str) -> Result<Ini> {
    Ini::load_from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))
}

pub fn load_file(path: &Path) -> Result<Ini> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl Section {
    pub fn new(name: &str, props: Properties, base_dir: &Path) -> Self {
        Self {
            name: name.to_string(),
            props,
            base_dir: base_dir.to_path_buf(),
        }
    }

    /// The named section, or the untitled top-level section for `None`. A
    /// missing section yields an empty one.
    pub fn from_ini(ini: &Ini, name: Option<&str>, base_dir: &Path) -> Self {
        let props = ini.section(name).cloned().unwrap_or_default();
        Self::new(name.unwrap_or("general"), props, base_dir)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.props.get(key).map(str::trim)
    }

    pub fn has(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("[{}] {key} = '{v}' is not a valid value", self.name))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => bail!(Config, "[{}] missing required key '{key}'", self.name),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|p| self.base_dir.join(p))
    }

    /// Sorted `key=value` lines; stable input for content hashing.
    pub fn canonical(&self) -> String {
        let mut pairs: Vec<String> = self
            .props
            .iter()
            .map(|(k, v)| format!("{k}={}", v.trim()))
            .collect();
        pairs.sort();
        pairs.join("\n")
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.props.insert(key.to_string(), value.to_string());
    }
}
