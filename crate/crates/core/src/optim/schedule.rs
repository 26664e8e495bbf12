use std::collections::BTreeMap;

use super::OptimError;
use crate::registry::Registry;

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn inverse_sqrt_lr(step: u64, d_model: usize, warmup_steps: u64) -> Result<f64, OptimError> {
    if step == 0 || warmup_steps == 0 {
        return Err(OptimError::Config("inverse_sqrt schedule needs step >= 1 and warmup >= 1".into()));
    }
    let s = step as f64;
    let w = warmup_steps as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

/// Linear ramp to `peak` over `warmup` steps, then linear decay to 0 at `total`.
/// Steps past `total` are clamped to 0 with a warning.
pub fn linear_warmup_decay_lr(step: u64, peak: f64, warmup: u64, total: u64) -> Result<f64, OptimError> {
    if warmup >= total {
        return Err(OptimError::Config(format!("warmup {warmup} must be below total {total}")));
    }
    if step > total {
        log::warn!("step {step} is past the schedule end {total}; learning rate clamped to 0");
        return Ok(0.0);
    }
    if warmup > 0 && step <= warmup {
        Ok(peak * step as f64 / warmup as f64)
    } else {
        Ok(peak * (total - step) as f64 / (total - warmup) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub kind: String,
    pub d_model: usize,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub total_steps: u64,
    /// Rate used by the constant schedule.
    pub lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            kind: "constant".into(),
            d_model: 512,
            warmup_steps: 4000,
            peak_lr: 1e-4,
            total_steps: 1_000_000,
            lr: 0.1,
        }
    }
}

impl SchedulerConfig {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("scheduler".into(), self.kind.clone()),
            ("d_model_lr".into(), self.d_model.to_string()),
            ("warmup_steps".into(), self.warmup_steps.to_string()),
            ("peak_lr".into(), format!("{:?}", self.peak_lr)),
            ("total_steps".into(), self.total_steps.to_string()),
            ("lr".into(), format!("{:?}", self.lr)),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, OptimError> {
        let mut c = Self::default();
        if let Some(v) = pairs.get("scheduler") {
            c.kind = v.clone();
        }
        c.d_model = parse(pairs, "d_model_lr", c.d_model)?;
        c.warmup_steps = parse(pairs, "warmup_steps", c.warmup_steps)?;
        c.peak_lr = parse(pairs, "peak_lr", c.peak_lr)?;
        c.total_steps = parse(pairs, "total_steps", c.total_steps)?;
        c.lr = parse(pairs, "lr", c.lr)?;
        Ok(c)
    }
}

pub(crate) fn parse<T: std::str::FromStr>(
    pairs: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, OptimError> {
    match pairs.get(key) {
        Some(v) => v.parse().map_err(|_| OptimError::Config(format!("bad value for {key}: '{v}'"))),
        None => Ok(default),
    }
}

/// Maps an optimizer update count (starting at 1) to a learning rate.
pub trait Scheduler: Send + Sync {
    fn name(&self) -> &'static str;
    fn lr(&self, step: u64) -> Result<f64, OptimError>;
}

pub struct InverseSqrt {
    pub d_model: usize,
    pub warmup_steps: u64,
}

impl Scheduler for InverseSqrt {
    fn name(&self) -> &'static str {
        "inverse_sqrt"
    }

    fn lr(&self, step: u64) -> Result<f64, OptimError> {
        inverse_sqrt_lr(step, self.d_model, self.warmup_steps)
    }
}

pub struct Linear {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl Scheduler for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn lr(&self, step: u64) -> Result<f64, OptimError> {
        linear_warmup_decay_lr(step, self.peak, self.warmup, self.total)
    }
}

pub struct Constant(pub f64);

impl Scheduler for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn lr(&self, _step: u64) -> Result<f64, OptimError> {
        Ok(self.0)
    }
}

pub type SchedulerFactory = fn(&SchedulerConfig) -> Result<Box<dyn Scheduler>, OptimError>;

pub fn scheduler_registry() -> Registry<SchedulerFactory> {
    Registry::<SchedulerFactory>::new("scheduler")
        .with("inverse_sqrt", |c| {
            if c.warmup_steps == 0 {
                return Err(OptimError::Config("inverse_sqrt needs warmup_steps >= 1".into()));
            }
            Ok(Box::new(InverseSqrt { d_model: c.d_model, warmup_steps: c.warmup_steps }))
        })
        .with("linear", |c| {
            if c.warmup_steps >= c.total_steps {
                return Err(OptimError::Config("linear needs warmup_steps < total_steps".into()));
            }
            Ok(Box::new(Linear { peak: c.peak_lr, warmup: c.warmup_steps, total: c.total_steps }))
        })
        .with("constant", |c| Ok(Box::new(Constant(c.lr))))
}

pub fn build_scheduler(config: &SchedulerConfig) -> Result<Box<dyn Scheduler>, OptimError> {
    let factory = *scheduler_registry().get(&config.kind).map_err(|e| OptimError::Config(e.to_string()))?;
    factory(config)
}
