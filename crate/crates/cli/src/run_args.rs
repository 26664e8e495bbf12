use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use hetpar::data::{build_index, datagen_registry, mlm_vocab_size, write_dataset, DatagenConfig, DatasetIndex};
use hetpar::RunConfig;

use crate::UsageError;

/// Flags shared by `train` and `bench`. Precedence, lowest first: defaults,
/// task presets, `--config`, `--set`, dedicated flags.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Flat `key=value` config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set d_model=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub world: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_parser = ["inproc", "tcp"])]
    pub backend: Option<String>,
    #[arg(long, value_name = "HOST:PORT")]
    pub master: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub update_freq: Option<usize>,
    #[arg(long)]
    pub max_sentences: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<u64>,
    #[arg(long, value_parser = ["sentences", "tokens"])]
    pub weight_policy: Option<String>,
    #[arg(long, value_parser = ["f32", "f64"])]
    pub dtype: Option<String>,
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub prefetch_depth: Option<usize>,
    #[arg(long)]
    pub cache_bytes: Option<usize>,
    /// Seconds to wait on any collective.
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Shard files to train on.
    #[arg(long, value_name = "PATH", num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Generate a synthetic dataset for this task instead of reading `--data`.
    #[arg(long)]
    pub task: Option<String>,
    /// Instances to generate with `--task`.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    /// Where `--task` writes its shards; a temporary directory by default.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
}

fn preset(cfg: &mut RunConfig, task: &str) -> Result<()> {
    match task {
        "synthetic-classify" => {}
        "synthetic-sequence" => {
            cfg.apply_text("model=attention_classifier\nvocab_size=32\nd_model=16\nheads=2\nmax_len=32\nffn_dim=32\nnum_classes=5\n")?;
        }
        "mlm-nsp" => {
            cfg.apply_text(&format!(
                "model=masked_token_model\nvocab_size={}\nd_model=16\nheads=2\nmax_len=32\nffn_dim=32\nweight_policy=tokens\n",
                mlm_vocab_size()
            ))?;
        }
        other => {
            datagen_registry().get(other).map_err(|e| UsageError(e.to_string()))?;
        }
    }
    Ok(())
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(task) = &self.task {
            preset(&mut cfg, task)?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let flags: [(&str, Option<String>); 20] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("world_size", self.world.map(|v| v.to_string())),
            ("rank", self.rank.map(|v| v.to_string())),
            ("backend", self.backend.clone()),
            ("master", self.master.clone()),
            ("max_steps", self.steps.map(|v| v.to_string())),
            ("max_epochs", self.epochs.map(|v| v.to_string())),
            ("update_freq", self.update_freq.map(|v| v.to_string())),
            ("max_sentences", self.max_sentences.map(|v| v.to_string())),
            ("max_tokens", self.max_tokens.map(|v| v.to_string())),
            ("weight_policy", self.weight_policy.clone()),
            ("dtype", self.dtype.clone()),
            ("checkpoint_interval", self.checkpoint_interval.map(|v| v.to_string())),
            ("checkpoint_dir", self.checkpoint_dir.as_ref().map(|p| p.display().to_string())),
            ("resume", self.resume.as_ref().map(|p| p.display().to_string())),
            ("prefetch_depth", self.prefetch_depth.map(|v| v.to_string())),
            ("cache_bytes", self.cache_bytes.map(|v| v.to_string())),
            ("timeout_secs", self.timeout.map(|v| v.to_string())),
            ("report", self.report.as_ref().map(|p| p.display().to_string())),
            ("data", (!self.data.is_empty()).then(|| join_paths(&self.data))),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.task.is_some() && !self.data.is_empty() {
            return Err(UsageError("give either --task or --data, not both".into()).into());
        }
        if self.task.is_none() && cfg.data.is_empty() {
            return Err(UsageError("no training data: pass --data or --task".into()).into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The dataset `cfg` names, generating it first when `--task` is set.
    pub fn dataset(&self, cfg: &RunConfig) -> Result<Dataset> {
        let Some(task) = &self.task else {
            return Ok(Dataset { index: Arc::new(build_index(&cfg.data)?), scratch: None });
        };
        let gen = DatagenConfig {
            n: self.instances,
            dim: cfg.model.layers.first().copied().unwrap_or(20),
            classes: if cfg.model.arch == "mlp" {
                cfg.model.layers.last().copied().unwrap_or(5)
            } else {
                cfg.model.num_classes
            },
            seed: cfg.seed,
            max_len: cfg.model.max_len,
            vocab_size: cfg.model.vocab_size,
            ..DatagenConfig::default()
        };
        let factory = *datagen_registry().get(task).map_err(|e| UsageError(e.to_string()))?;
        let records = factory(&gen)?;
        let (dir, scratch) = match &self.data_dir {
            Some(d) => (d.clone(), None),
            None => {
                let d = std::env::temp_dir().join(format!("hetpar-{}-r{}", std::process::id(), cfg.rank));
                (d.clone(), Some(d))
            }
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let paths = write_dataset(&records, &dir, 4.min(records.len().max(1)))?;
        Ok(Dataset { index: Arc::new(build_index(&paths)?), scratch })
    }
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

pub struct Dataset {
    pub index: Arc<DatasetIndex>,
    scratch: Option<PathBuf>,
}

impl Drop for Dataset {
    fn drop(&mut self) {
        if let Some(dir) = &self.scratch {
            let _ = std::fs::remove_dir_all(dir);
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
