//! Flat `key = value` run files. Keys are the long flag names; flags given
//! on the command line win over values from the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    source: String,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{source}:{}: expected key = value, got '{line}'", lineno + 1))
            })?;
            let key = key.trim().replace('_', "-");
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("{source}:{}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Ok(Self { values, source: source.to_string() })
    }

    /// Fills `slot` from the file if the flag was not given.
    pub fn fill<T: FromStr>(&mut self, slot: &mut Option<T>, key: &str) -> Result<(), CliError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(raw) = self.values.remove(key) {
            if slot.is_none() {
                let value = raw
                    .parse()
                    .map_err(|e| CliError::Usage(format!("{}: invalid value for '{key}': {e}", self.source)))?;
                *slot = Some(value);
            }
        }
        Ok(())
    }

    /// Boolean switches: the flag wins when set, otherwise `key = true|false`.
    pub fn fill_flag(&mut self, slot: &mut bool, key: &str) -> Result<(), CliError> {
        let mut value = None;
        self.fill::<bool>(&mut value, key)?;
        if !*slot {
            *slot = value.unwrap_or(false);
        }
        Ok(())
    }

    /// Errors on keys no command consumed.
    pub fn finish(self) -> Result<(), CliError> {
        match self.values.keys().next() {
            Some(key) => Err(CliError::Usage(format!("{}: unknown key '{key}' for this command", self.source))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_take_precedence() {
        let mut cfg = ConfigFile::parse("# run\nn = 10\np=4\nmixing = t:5\n", "test").unwrap();
        let (mut n, mut p, mut mixing): (Option<usize>, Option<usize>, Option<String>) = (Some(12), None, None);
        cfg.fill(&mut n, "n").unwrap();
        cfg.fill(&mut p, "p").unwrap();
        cfg.fill(&mut mixing, "mixing").unwrap();
        assert_eq!((n, p, mixing.as_deref()), (Some(12), Some(4), Some("t:5")));
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_garbage() {
        assert!(ConfigFile::parse("n 10", "test").is_err());
        assert!(ConfigFile::parse("n = 1\nn = 2", "test").is_err());
        let mut cfg = ConfigFile::parse("n = ten", "test").unwrap();
        let mut n: Option<usize> = None;
        assert!(cfg.fill(&mut n, "n").is_err());
        assert!(ConfigFile::parse("bogus = 1", "test").unwrap().finish().is_err());
    }

    #[test]
    fn underscores_match_dashes() {
        let mut cfg = ConfigFile::parse("grid_size = 11", "test").unwrap();
        let mut g: Option<usize> = None;
        cfg.fill(&mut g, "grid-size").unwrap();
        assert_eq!(g, Some(11));
    }
}
