//! Flat `key=value` run configuration covering every module.

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::comm::CommConfig;
use crate::data::{BatchCaps, LoaderConfig};
use crate::numerics::{DType, ModelSpec, WeightPolicy};
use crate::optim::{OptimConfig, SchedulerConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': '{value}' ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: expected key=value, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub world_size: usize,
    pub rank: usize,
    pub backend: String,
    pub master: String,
    pub timeout_secs: u64,
    /// Shard files or directories holding them.
    pub data: Vec<PathBuf>,
    pub model: ModelSpec,
    pub optimizer: OptimConfig,
    pub scheduler: SchedulerConfig,
    pub max_steps: Option<u64>,
    pub max_epochs: Option<u64>,
    pub update_freq: usize,
    pub max_sentences: Option<usize>,
    pub max_tokens: Option<u64>,
    pub weight_policy: WeightPolicy,
    pub checkpoint_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub prefetch_depth: usize,
    pub cache_bytes: usize,
    pub block_bytes: u64,
    pub cache_policy: String,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelSpec::mlp(vec![20, 64, 5]);
        Self {
            seed: 1,
            world_size: 1,
            rank: 0,
            backend: "inproc".into(),
            master: "127.0.0.1:29500".into(),
            timeout_secs: 30,
            data: Vec::new(),
            scheduler: SchedulerConfig { d_model: model.d_model, ..SchedulerConfig::default() },
            model,
            optimizer: OptimConfig::default(),
            max_steps: None,
            max_epochs: None,
            update_freq: 1,
            max_sentences: Some(10),
            max_tokens: None,
            weight_policy: WeightPolicy::Sentences,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            resume: None,
            prefetch_depth: 2,
            cache_bytes: 0,
            block_bytes: 64 * 1024,
            cache_policy: "lru".into(),
            report: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".into(), T::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (value != "none" && !value.is_empty()).then(|| PathBuf::from(value))
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.into() }
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "world_size" => self.world_size = parse_num(key, v)?,
            "rank" => self.rank = parse_num(key, v)?,
            "backend" => self.backend = v.into(),
            "master" => self.master = v.into(),
            "timeout_secs" => self.timeout_secs = parse_num(key, v)?,
            "data" => self.data = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
            "model" => self.model.arch = v.into(),
            "mlp_layers" => {
                self.model.layers = v.split(',').map(|x| parse_num(key, x)).collect::<Result<Vec<usize>, _>>()?;
            }
            "vocab_size" => self.model.vocab_size = parse_num(key, v)?,
            "d_model" => {
                self.model.d_model = parse_num(key, v)?;
                self.scheduler.d_model = self.model.d_model;
            }
            "heads" => self.model.heads = parse_num(key, v)?,
            "max_len" => self.model.max_len = parse_num(key, v)?,
            "ffn_dim" => self.model.ffn_dim = parse_num(key, v)?,
            "num_classes" => self.model.num_classes = parse_num(key, v)?,
            "nsp" => self.model.nsp = parse_num(key, v)?,
            "dropout" => self.model.dropout = parse_num(key, v)?,
            "label_smoothing" => self.model.label_smoothing = parse_num(key, v)?,
            "dtype" => self.model.dtype = DType::parse(v).ok_or_else(|| bad(key, v, "expected f32 or f64"))?,
            "optimizer" => self.optimizer.kind = v.into(),
            "beta1" => self.optimizer.beta1 = parse_num(key, v)?,
            "beta2" => self.optimizer.beta2 = parse_num(key, v)?,
            "eps" => self.optimizer.eps = parse_num(key, v)?,
            "scheduler" => self.scheduler.kind = v.into(),
            "lr" => self.scheduler.lr = parse_num(key, v)?,
            "warmup_steps" => self.scheduler.warmup_steps = parse_num(key, v)?,
            "peak_lr" => self.scheduler.peak_lr = parse_num(key, v)?,
            "total_steps" => self.scheduler.total_steps = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_opt(key, v)?,
            "max_epochs" => self.max_epochs = parse_opt(key, v)?,
            "update_freq" => self.update_freq = parse_num(key, v)?,
            "max_sentences" => self.max_sentences = parse_opt(key, v)?,
            "max_tokens" => self.max_tokens = parse_opt(key, v)?,
            "weight_policy" => {
                self.weight_policy =
                    WeightPolicy::parse(v).ok_or_else(|| bad(key, v, "expected sentences or tokens"))?
            }
            "checkpoint_interval" => self.checkpoint_interval = parse_num(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = parse_path(v),
            "resume" => self.resume = parse_path(v),
            "prefetch_depth" => self.prefetch_depth = parse_num(key, v)?,
            "cache_bytes" => self.cache_bytes = parse_num(key, v)?,
            "block_bytes" => self.block_bytes = parse_num(key, v)?,
            "cache_policy" => self.cache_policy = v.into(),
            "report" => self.report = parse_path(v),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let data = self.data.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let layers = m.layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        [
            ("seed", self.seed.to_string()),
            ("world_size", self.world_size.to_string()),
            ("rank", self.rank.to_string()),
            ("backend", self.backend.clone()),
            ("master", self.master.clone()),
            ("timeout_secs", self.timeout_secs.to_string()),
            ("data", data),
            ("model", m.arch.clone()),
            ("mlp_layers", layers),
            ("vocab_size", m.vocab_size.to_string()),
            ("d_model", m.d_model.to_string()),
            ("heads", m.heads.to_string()),
            ("max_len", m.max_len.to_string()),
            ("ffn_dim", m.ffn_dim.to_string()),
            ("num_classes", m.num_classes.to_string()),
            ("nsp", m.nsp.to_string()),
            ("dropout", format!("{:?}", m.dropout)),
            ("label_smoothing", format!("{:?}", m.label_smoothing)),
            ("dtype", m.dtype.name().into()),
            ("optimizer", self.optimizer.kind.clone()),
            ("beta1", format!("{:?}", self.optimizer.beta1)),
            ("beta2", format!("{:?}", self.optimizer.beta2)),
            ("eps", format!("{:?}", self.optimizer.eps)),
            ("scheduler", self.scheduler.kind.clone()),
            ("lr", format!("{:?}", self.scheduler.lr)),
            ("warmup_steps", self.scheduler.warmup_steps.to_string()),
            ("peak_lr", format!("{:?}", self.scheduler.peak_lr)),
            ("total_steps", self.scheduler.total_steps.to_string()),
            ("max_steps", show_opt(&self.max_steps)),
            ("max_epochs", show_opt(&self.max_epochs)),
            ("update_freq", self.update_freq.to_string()),
            ("max_sentences", show_opt(&self.max_sentences)),
            ("max_tokens", show_opt(&self.max_tokens)),
            ("weight_policy", self.weight_policy.name().into()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("checkpoint_dir", show_path(&self.checkpoint_dir)),
            ("resume", show_path(&self.resume)),
            ("prefetch_depth", self.prefetch_depth.to_string()),
            ("cache_bytes", self.cache_bytes.to_string()),
            ("block_bytes", self.block_bytes.to_string()),
            ("cache_policy", self.cache_policy.clone()),
            ("report", show_path(&self.report)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: line.to_string() })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Cross-field checks that do not need any data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.world_size == 0 {
            return invalid("world_size must be >= 1".into());
        }
        if self.rank >= self.world_size {
            return invalid(format!("rank {} outside world of {}", self.rank, self.world_size));
        }
        if self.update_freq == 0 {
            return invalid("update_freq must be >= 1".into());
        }
        if self.max_sentences == Some(0) {
            return invalid("max_sentences must be >= 1".into());
        }
        if self.max_steps.is_none() && self.max_epochs.is_none() {
            return invalid("set max_steps or max_epochs".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return invalid("dropout must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.model.label_smoothing) {
            return invalid("label_smoothing must be in [0, 1)".into());
        }
        if self.checkpoint_interval > 0 && self.checkpoint_dir.is_none() {
            return invalid("checkpoint_interval needs checkpoint_dir".into());
        }
        Ok(())
    }

    pub fn caps(&self) -> BatchCaps {
        BatchCaps { max_sentences: self.max_sentences, max_tokens: self.max_tokens }
    }

    pub fn loader(&self) -> LoaderConfig {
        LoaderConfig {
            prefetch_depth: self.prefetch_depth,
            cache_bytes: self.cache_bytes,
            block_bytes: self.block_bytes,
            cache_policy: self.cache_policy.clone(),
        }
    }

    pub fn comm(&self) -> CommConfig {
        CommConfig {
            backend: self.backend.clone(),
            world_size: self.world_size,
            rank: self.rank,
            master: Some(self.master.clone()),
            timeout: Duration::from_secs(self.timeout_secs),
            hub: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_is_fixed_point() {
        let mut c = RunConfig::default();
        c.apply_text("seed=9\nworld_size=4\nmodel=attention_classifier\nd_model=32\nmax_steps=50\nresume=/tmp/x.hck\n")
            .unwrap();
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.scheduler.d_model, 32);
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert_eq!(RunConfig::parse("sed=1").unwrap_err(), ConfigError::UnknownKey("sed".into()));
        assert!(matches!(RunConfig::parse("seed=abc"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("seed"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("dtype=f16"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn comments_and_optionals() {
        let c = RunConfig::parse("# run\n\nmax_tokens=none\nmax_sentences=4\nmax_epochs=2\n").unwrap();
        assert_eq!(c.max_tokens, None);
        assert_eq!(c.max_sentences, Some(4));
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let c = RunConfig::default();
        assert!(c.validate().is_err());
        let c = RunConfig { max_steps: Some(1), rank: 2, world_size: 2, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { max_steps: Some(1), checkpoint_interval: 5, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }
}
