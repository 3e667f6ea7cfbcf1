//! Flag / config-file resolution. Every value is looked up as flag first, then
//! the `key = value` file, then the default, and the resolved value is
//! recorded so reports can echo the full configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {line:?}", i + 1);
        };
        let key = normalize(key);
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key {key:?}", i + 1);
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                parse_config(&text).with_context(|| format!("in config file {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            ..Default::default()
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key:?}: cannot parse {raw:?}: {e}")),
            None => Ok(None),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.push((key.to_string(), value));
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let value = flag.or(file).unwrap_or(default);
        self.record(key, value.to_string());
        Ok(value)
    }

    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let value = flag.or(file);
        let shown = value.as_ref().map(ToString::to_string).unwrap_or_else(|| "none".into());
        self.record(key, shown);
        Ok(value)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => bail!("--{key} is required (flag or config key)"),
        }
    }

    /// Boolean switch: set by the flag, or by `true`/`false` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let file: Option<bool> = self.file_value(key)?;
        let value = flag || file.unwrap_or(false);
        self.record(key, value.to_string());
        Ok(value)
    }

    /// Repeatable flag, or a comma-separated list in the file.
    pub fn list(&mut self, key: &str, flag: Vec<String>) -> Result<Vec<String>> {
        let file: Option<String> = self.file_value(key)?;
        let value = if flag.is_empty() {
            file.map(|s| {
                s.split(',')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            })
            .unwrap_or_default()
        } else {
            flag
        };
        self.record(key, value.join(","));
        Ok(value)
    }

    /// Rejects config keys the command never asked for.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config key(s) for this command: {}", unknown.join(", "));
        }
        Ok(())
    }

    pub fn resolved(&self) -> &[(String, String)] {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_files() {
        let map = parse_config("# comment\nseed = 7\n\ntrain_frac=0.5\n").unwrap();
        assert_eq!(map["seed"], "7");
        assert_eq!(map["train-frac"], "0.5");
        assert!(parse_config("seed 7").is_err());
        assert!(parse_config("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut s = Settings {
            file: parse_config("seed = 7\nepochs = 3").unwrap(),
            ..Default::default()
        };
        assert_eq!(s.get("seed", Some(9u64), 0).unwrap(), 9);
        assert_eq!(s.get("epochs", None, 10usize).unwrap(), 3);
        assert_eq!(s.get("samples", None, 20usize).unwrap(), 20);
        s.finish().unwrap();
        assert_eq!(s.resolved()[0], ("seed".into(), "9".into()));
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        let mut s = Settings {
            file: parse_config("sed = 7\nepochs = x").unwrap(),
            ..Default::default()
        };
        assert!(s.get("epochs", None, 1usize).is_err());
        assert!(s.finish().is_err());
    }
}
