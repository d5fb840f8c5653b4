//! Flat key=value run configuration.
//!
//! A config file is plain text: one `key = value` per line, `#` starts a
//! comment. Every key a command understands has a documented default;
//! keys outside that set are rejected so typos fail loudly instead of
//! silently running with a default.

use crate::CliError;
use std::collections::BTreeMap;
use std::path::Path;

/// One documented config key: name, default value, one-line description.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn find<'a>(known: &'a [KeySpec], key: &str) -> Option<&'a KeySpec> {
    known.iter().find(|k| k.key == key)
}

impl Config {
    /// Read an optional config file, then apply `--set key=value`
    /// overrides on top. Unknown keys, unreadable files, and malformed
    /// lines are usage errors.
    pub fn load(
        path: Option<&Path>,
        sets: &[String],
        known: &[KeySpec],
    ) -> Result<Config, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                insert(&mut values, key.trim(), value.trim(), known)?;
            }
        }
        for set in sets {
            let (key, value) = set.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--set expects key=value, got {set:?}"))
            })?;
            insert(&mut values, key.trim(), value.trim(), known)?;
        }
        Ok(Config { values })
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// The configured value, or the documented default.
    pub fn str(&self, key: &str, known: &[KeySpec]) -> String {
        match self.values.get(key) {
            Some(v) => v.clone(),
            None => {
                find(known, key)
                    .unwrap_or_else(|| panic!("key {key} not declared by the command"))
                    .default
                    .to_string()
            }
        }
    }

    pub fn f64(&self, key: &str, known: &[KeySpec]) -> Result<f64, CliError> {
        let raw = self.str(key, known);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("{key}: expected a number, got {raw:?}")))
    }

    pub fn usize(&self, key: &str, known: &[KeySpec]) -> Result<usize, CliError> {
        let raw = self.str(key, known);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("{key}: expected a non-negative integer, got {raw:?}")))
    }

    pub fn u64(&self, key: &str, known: &[KeySpec]) -> Result<u64, CliError> {
        let raw = self.str(key, known);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("{key}: expected a non-negative integer, got {raw:?}")))
    }

    pub fn bool(&self, key: &str, known: &[KeySpec]) -> Result<bool, CliError> {
        let raw = self.str(key, known);
        match raw.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(CliError::Usage(format!("{key}: expected true/false, got {raw:?}"))),
        }
    }

    /// Comma-separated list; empty value means the empty list.
    pub fn list(&self, key: &str, known: &[KeySpec]) -> Vec<String> {
        let raw = self.str(key, known);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn f64_list(&self, key: &str, known: &[KeySpec]) -> Result<Vec<f64>, CliError> {
        self.list(key, known)
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("{key}: expected numbers, got {s:?}")))
            })
            .collect()
    }
}

fn insert(
    values: &mut BTreeMap<String, String>,
    key: &str,
    value: &str,
    known: &[KeySpec],
) -> Result<(), CliError> {
    if find(known, key).is_none() {
        let mut names: Vec<&str> = known.iter().map(|k| k.key).collect();
        names.sort_unstable();
        return Err(CliError::Usage(format!(
            "unknown config key {key:?}; known keys: {}",
            names.join(", ")
        )));
    }
    values.insert(key.to_string(), value.to_string());
    Ok(())
}

/// Print the key table for `--list-keys`.
pub fn print_keys(command: &str, known: &[KeySpec]) {
    println!("config keys for `{command}` (key = default):");
    let width = known.iter().map(|k| k.key.len()).max().unwrap_or(0);
    for k in known {
        println!("  {:width$} = {:12} {}", k.key, k.default, k.doc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const KEYS: &[KeySpec] = &[
        KeySpec { key: "seed", default: "1", doc: "rng seed" },
        KeySpec { key: "kinds", default: "a,b", doc: "list" },
        KeySpec { key: "rate", default: "2.5", doc: "hz" },
    ];

    #[test]
    fn defaults_file_and_sets_layer_in_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nseed = 7\nrate = 5.0 # trailing").unwrap();
        let cfg =
            Config::load(Some(f.path()), &["rate=10".to_string()], KEYS).unwrap();
        assert_eq!(cfg.u64("seed", KEYS).unwrap(), 7);
        assert_eq!(cfg.f64("rate", KEYS).unwrap(), 10.0);
        assert_eq!(cfg.list("kinds", KEYS), vec!["a", "b"]);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_usage_errors() {
        let err = Config::load(None, &["bogus=1".to_string()], KEYS).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(err.to_string().contains("bogus"));

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed").unwrap();
        assert!(matches!(Config::load(Some(f.path()), &[], KEYS), Err(CliError::Usage(_))));

        let cfg = Config::load(None, &["seed=x".to_string()], KEYS);
        assert!(matches!(cfg.unwrap().u64("seed", KEYS), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_config_file_is_reported_as_usage() {
        let err = Config::load(Some(Path::new("/no/such/file.cfg")), &[], KEYS).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }
}
