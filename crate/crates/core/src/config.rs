//! Flat `key=value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. The
//! same text form is embedded in checkpoint footers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Parsed `key=value` entries; duplicate keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", i + 1)));
            }
            if kv.map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extend(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Typed value of `key`, or `default` when absent.
    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))?;
        v.parse()
            .map_err(|_| Error::config(format!("invalid value `{v}` for `{key}`")))
    }

    /// Rejects any key outside `accepted`, listing the accepted set.
    pub fn check_keys(&self, accepted: &[&str]) -> Result<()> {
        if let Some(bad) = self.keys().find(|k| !accepted.contains(k)) {
            let mut list = accepted.to_vec();
            list.sort_unstable();
            return Err(Error::config(format!(
                "unknown key `{bad}`; accepted keys: {}",
                list.join(", ")
            )));
        }
        Ok(())
    }

    /// Canonical text: sorted keys, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Whether a run trains the autoregressive teacher or a parallel student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Teacher,
    Student,
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(RunMode::Teacher),
            "nat" => Ok(RunMode::Student),
            other => Err(Error::config(format!("unknown mode `{other}` (expected teacher or nat)"))),
        }
    }
}

/// Everything a `train` invocation needs, read from one config file.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: RunMode,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub vocab: PathBuf,
    pub teacher: Option<PathBuf>,
    pub use_kd: bool,
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub raw: KeyValues,
}

const RUN_KEYS: &[&str] = &["mode", "train", "valid", "vocab", "teacher", "use_kd"];

pub(crate) fn parse_bool(kv: &KeyValues, key: &str, default: bool) -> Result<bool> {
    match kv.get(key) {
        None => Ok(default),
        Some("true") | Some("1") | Some("yes") | Some("on") => Ok(true),
        Some("false") | Some("0") | Some("no") | Some("off") => Ok(false),
        Some(v) => Err(Error::config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

/// Every key `RunConfig` understands.
pub fn accepted_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = RUN_KEYS.to_vec();
    keys.extend_from_slice(ModelConfig::KEYS);
    keys.extend_from_slice(TrainConfig::KEYS);
    keys
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, &base)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_keys(&accepted_keys())?;
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let path_key = |key: &str| -> Result<PathBuf> {
            kv.get(key)
                .map(resolve)
                .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
        };
        let mode = kv.parse_or("mode", RunMode::Student)?;
        let use_kd = parse_bool(&kv, "use_kd", false)?;
        let teacher = kv.get("teacher").map(resolve);
        if use_kd && teacher.is_none() {
            return Err(Error::config("use_kd=true needs a `teacher` checkpoint"));
        }
        let model = ModelConfig::from_key_values(&kv)?;
        let train_config = TrainConfig::from_key_values(&kv)?;
        if mode == RunMode::Teacher && kv.contains("schedule") {
            return Err(Error::config("mode=teacher trains a single causal phase and takes no `schedule`"));
        }
        Ok(RunConfig {
            mode,
            train: path_key("train")?,
            valid: path_key("valid")?,
            vocab: path_key("vocab")?,
            teacher,
            use_kd,
            train_config,
            model,
            raw: kv,
        })
    }
}
