//! Flag parsing: `--key value` pairs, bare boolean flags, and an optional
//! `key=value` config file merged underneath explicit flags. Unknown keys are
//! rejected, every accepted option lands in the resolved-config echo.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::CliError;

pub struct Opts {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

/// Flags that may appear without a value.
const BARE_FLAGS: &[&str] = &["break-tie-weights", "tune-members", "standardize", "ascend"];

impl Opts {
    pub fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(key) = arg.strip_prefix("--") else {
                return Err(CliError::config(format!("expected a --flag, got '{arg}'")));
            };
            if key.is_empty() {
                return Err(CliError::config("empty flag name"));
            }
            let take_value = match args.get(i + 1) {
                Some(next) if !next.starts_with("--") => true,
                _ => false,
            };
            let value = if take_value {
                i += 1;
                args[i].clone()
            } else if BARE_FLAGS.contains(&key) {
                "true".to_string()
            } else {
                return Err(CliError::config(format!("flag --{key} needs a value")));
            };
            if values.insert(key.to_string(), value).is_some() {
                return Err(CliError::config(format!("flag --{key} given twice")));
            }
            i += 1;
        }
        let mut opts = Opts {
            values,
            consumed: BTreeSet::new(),
            resolved: BTreeMap::new(),
        };
        opts.merge_config_file()?;
        Ok(opts)
    }

    /// Read `--config file` and fill in keys the flags did not set.
    fn merge_config_file(&mut self) -> Result<(), CliError> {
        let Some(path) = self.values.remove("config") else {
            return Ok(());
        };
        self.resolved.insert("config".into(), path.clone());
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::config(format!("cannot read config file {path}: {e}")))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "{path}:{}: expected key=value",
                    lineno + 1
                )));
            };
            let k = k.trim().to_string();
            let v = v.trim().to_string();
            self.values.entry(k).or_insert(v);
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.values.get(key).cloned()
    }

    pub fn str_opt(&mut self, key: &str) -> Option<String> {
        let v = self.take(key);
        if let Some(v) = &v {
            self.resolved.insert(key.into(), v.clone());
        }
        v
    }

    pub fn str_or(&mut self, key: &str, default: &str) -> String {
        let v = self.take(key).unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.into(), v.clone());
        v
    }

    pub fn required(&mut self, key: &str) -> Result<String, CliError> {
        self.str_opt(key)
            .ok_or_else(|| CliError::config(format!("missing required flag --{key}")))
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        let v = self.str_or(key, &default.to_string());
        v.parse()
            .map_err(|_| CliError::config(format!("--{key} must be a non-negative integer, got '{v}'")))
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        let v = self.str_or(key, &default.to_string());
        v.parse()
            .map_err(|_| CliError::config(format!("--{key} must be an integer, got '{v}'")))
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.str_or(key, &default.to_string());
        let parsed: f64 = v
            .parse()
            .map_err(|_| CliError::config(format!("--{key} must be a number, got '{v}'")))?;
        if !parsed.is_finite() {
            return Err(CliError::config(format!("--{key} must be finite")));
        }
        Ok(parsed)
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        let v = self.str_or(key, if default { "true" } else { "false" });
        match v.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::config(format!(
                "--{key} must be true or false, got '{other}'"
            ))),
        }
    }

    /// Error on anything the command did not consume, then print the echo.
    pub fn finish(&self) -> Result<(), CliError> {
        for key in self.values.keys() {
            if !self.consumed.contains(key) {
                return Err(CliError::config(format!("unknown flag --{key}")));
            }
        }
        Ok(())
    }

    pub fn echo(&self, command: &str) {
        println!("command={command}");
        for (k, v) in &self.resolved {
            println!("{k}={v}");
        }
    }
}
