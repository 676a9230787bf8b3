//! Layered settings: flags over `LRK_` environment variables over a TOML
//! config file over built-in defaults.
//!
//! Each layer is a partial JSON object deep-merged onto the one below, and the
//! result is deserialized strictly, so a misspelled key in any layer is an error.

use std::path::{Path, PathBuf};

use lrk_core::merge::MergePolicy;
use lrk_core::perturb::{Clamp, PerturbationConfig};
use lrk_core::reward::{FormatCheck, RewardWeights};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const ENV_CONFIG: &str = "LRK_CONFIG";
pub const ENV_WEIGHTS: &str = "LRK_WEIGHTS";
pub const ENV_SEED: &str = "LRK_SEED";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSettings {
    pub sigma: f64,
    pub n: usize,
    pub clamp: Clamp,
    pub round: bool,
}

impl Default for PerturbSettings {
    fn default() -> Self {
        let d = PerturbationConfig::default();
        Self {
            sigma: d.sigma,
            n: d.n,
            clamp: d.clamp,
            round: d.round,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub workers: usize,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub weights: RewardWeights,
    pub format_check: FormatCheck,
    pub perturb: PerturbSettings,
    pub merge: MergePolicy,
    pub serve: ServeSettings,
}

impl Settings {
    pub fn perturbation(&self) -> PerturbationConfig {
        PerturbationConfig {
            sigma: self.perturb.sigma,
            n: self.perturb.n,
            seed: self.seed,
            clamp: self.perturb.clamp,
            round: self.perturb.round,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.perturbation().validate().map_err(ConfigError)?;
        self.merge.validate().map_err(ConfigError)?;
        if self.serve.workers == 0 {
            return Err(ConfigError("serve.workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `top` onto `base`. Objects merge key by key; anything
/// else in `top` replaces what is in `base`.
pub fn deep_merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Where each layer came from, echoed by `--print-config`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Sources {
    pub config_file: Option<PathBuf>,
    pub env: Vec<String>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub settings: Settings,
    pub sources: Sources,
}

fn file_layer(path: &Path) -> Result<Value, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))
}

fn env_layer(env: &dyn Fn(&str) -> Option<String>, used: &mut Vec<String>) -> Result<Value, ConfigError> {
    let mut layer = Map::new();
    if let Some(raw) = env(ENV_SEED) {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| ConfigError(format!("{ENV_SEED} must be an unsigned integer, got {raw:?}")))?;
        layer.insert("seed".into(), seed.into());
        used.push(ENV_SEED.into());
    }
    if let Some(raw) = env(ENV_WEIGHTS) {
        let weights: Value = serde_json::from_str(&raw)
            .ok()
            .filter(Value::is_object)
            .ok_or_else(|| ConfigError(format!("{ENV_WEIGHTS} must be a JSON object, got {raw:?}")))?;
        layer.insert("weights".into(), weights);
        used.push(ENV_WEIGHTS.into());
    }
    Ok(Value::Object(layer))
}

fn flag_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(m) = v {
        for (k, child) in m {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            if child.is_object() {
                flag_paths(child, &path, out);
            } else {
                out.push(path);
            }
        }
    }
}

/// Resolves settings from every layer. `config_flag` wins over `LRK_CONFIG`
/// for locating the file; `flags` is a partial settings object.
pub fn resolve(
    config_flag: Option<&Path>,
    env: &dyn Fn(&str) -> Option<String>,
    flags: Value,
) -> Result<Resolved, ConfigError> {
    let mut sources = Sources::default();
    let mut merged = serde_json::to_value(Settings::default()).expect("settings serialize");

    let file = config_flag
        .map(Path::to_path_buf)
        .or_else(|| env(ENV_CONFIG).map(PathBuf::from));
    if let Some(path) = &file {
        deep_merge(&mut merged, file_layer(path)?);
        if config_flag.is_none() {
            sources.env.push(ENV_CONFIG.into());
        }
    }
    sources.config_file = file;

    deep_merge(&mut merged, env_layer(env, &mut sources.env)?);
    flag_paths(&flags, "", &mut sources.flags);
    deep_merge(&mut merged, flags);

    let settings: Settings = serde_json::from_value(merged).map_err(|e| ConfigError(format!("settings: {e}")))?;
    settings.validate()?;
    Ok(Resolved { settings, sources })
}

/// Builds a partial settings object from optional flag values. `None`
/// entries are left out so lower layers show through.
#[derive(Default)]
pub struct FlagLayer(Map<String, Value>);

impl FlagLayer {
    pub fn set(&mut self, path: &str, value: Option<impl Serialize>) -> &mut Self {
        let Some(value) = value else { return self };
        let value = serde_json::to_value(value).expect("flag values serialize");
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().expect("non-empty path");
        let mut node = &mut self.0;
        for k in keys {
            node = node
                .entry(k)
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("flag paths do not collide");
        }
        node.insert(last.into(), value);
        self
    }

    /// Merges a JSON object (such as `--weights '{"cap": 2}'`) under `path`.
    pub fn merge_json(&mut self, path: &str, raw: Option<&str>) -> Result<&mut Self, ConfigError> {
        let Some(raw) = raw else { return Ok(self) };
        let v: Value = serde_json::from_str(raw)
            .ok()
            .filter(Value::is_object)
            .ok_or_else(|| ConfigError(format!("--{path} expects a JSON object, got {raw:?}")))?;
        let mut wrapped = Value::Object(Map::new());
        deep_merge(&mut wrapped, Value::Object(Map::from_iter([(path.to_string(), v)])));
        let mut current = Value::Object(std::mem::take(&mut self.0));
        deep_merge(&mut current, wrapped);
        self.0 = match current {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        Ok(self)
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}
