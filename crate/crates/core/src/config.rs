//! Line-oriented `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(config_err!("line {}: expected 'key = value', got '{raw}'", n + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(config_err!("line {}: empty key", n + 1));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(config_err!("line {}: duplicate key '{k}'", n + 1));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        ConfigFile {
            values: pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Fail on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(config_err!("unknown key '{k}'")),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| config_err!("invalid value '{v}' for '{key}'")))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list; an empty value gives an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| s.trim().parse::<T>().map_err(|_| config_err!("invalid list item '{s}' for '{key}'")))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn get_array3(&self, key: &str) -> Result<Option<[f64; 3]>> {
        match self.get_list::<f64>(key)? {
            None => Ok(None),
            Some(v) => <[f64; 3]>::try_from(v)
                .map(Some)
                .map_err(|v| config_err!("'{key}' needs 3 values, got {}", v.len())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_typed_access() {
        let c = ConfigFile::parse("# comment\nlr = 1e-4\n\nwidths = 64, 128,256 # trailing\nname=durcan-6_s\nfreeze =\n").unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(1e-4));
        assert_eq!(c.get_list::<usize>("widths").unwrap(), Some(vec![64, 128, 256]));
        assert_eq!(c.get_list::<String>("freeze").unwrap(), Some(vec![]));
        assert_eq!(c.get_or("missing", 7usize).unwrap(), 7);
        assert!(c.get::<usize>("lr").is_err());
        assert!(c.reject_unknown(&["lr", "widths", "name", "freeze"]).is_ok());
        assert!(matches!(c.reject_unknown(&["lr"]), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_lines() {
        assert!(ConfigFile::parse("just words").is_err());
        assert!(ConfigFile::parse("= 3").is_err());
        assert!(ConfigFile::parse("a = 1\na = 2").is_err());
        let c = ConfigFile::parse("g = 1,2").unwrap();
        assert!(c.get_array3("g").is_err());
    }
}
