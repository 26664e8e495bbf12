use std::fmt::Write as _;

use super::EngineError;

/// One optimizer update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Global update count after this step (1-based).
    pub step: u64,
    pub epoch: u64,
    /// ΣL / Σw over every rank and micro-step of the update.
    pub loss: f64,
    pub weight: f64,
    pub lr: f64,
    pub micro_steps: usize,
    pub duration_s: f64,
    /// Master only: each rank's own duration, in rank order.
    pub rank_durations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub world_size: usize,
    pub update_freq: usize,
    pub start_step: u64,
    pub final_step: u64,
    pub final_epoch: u64,
    pub steps: Vec<StepReport>,
    pub total_time_s: f64,
    pub param_digest: u64,
    pub checkpoints: Vec<String>,
    /// Resolved run configuration.
    pub config: Vec<(String, String)>,
}

impl RunReport {
    pub fn avg_step_s(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.steps.iter().map(|s| s.duration_s).sum::<f64>() / self.steps.len() as f64
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// `key=value` lines; losses keep full precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "world_size={}", self.world_size);
        let _ = writeln!(out, "update_freq={}", self.update_freq);
        let _ = writeln!(out, "start_step={}", self.start_step);
        let _ = writeln!(out, "final_step={}", self.final_step);
        let _ = writeln!(out, "final_epoch={}", self.final_epoch);
        let _ = writeln!(out, "steps_run={}", self.steps.len());
        let _ = writeln!(out, "total_time_s={:.6}", self.total_time_s);
        let _ = writeln!(out, "avg_step_s={:.6}", self.avg_step_s());
        match self.final_loss() {
            Some(l) => {
                let _ = writeln!(out, "final_loss={l:?}");
            }
            None => {
                let _ = writeln!(out, "final_loss=none");
            }
        }
        let _ = writeln!(out, "param_digest={:016x}", self.param_digest);
        for c in &self.checkpoints {
            let _ = writeln!(out, "checkpoint={c}");
        }
        for s in &self.steps {
            let _ = writeln!(out, "loss.{}={:?}", s.step, s.loss);
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        out
    }

    /// Losses keyed by step from a report written by [`to_text`](Self::to_text).
    pub fn parse_losses(text: &str) -> Vec<(u64, f64)> {
        text.lines()
            .filter_map(|l| {
                let (k, v) = l.strip_prefix("loss.")?.split_once('=')?;
                Some((k.parse().ok()?, v.parse().ok()?))
            })
            .collect()
    }

    /// The embedded `config.*` pairs of a written report.
    pub fn parse_config(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter_map(|l| {
                let (k, v) = l.strip_prefix("config.")?.split_once('=')?;
                Some((k.to_string(), v.to_string()))
            })
            .collect()
    }
}

/// `speedup = baseline / candidate`, `expansion = speedup / node_ratio`.
pub fn scaling_metrics(baseline_time: f64, candidate_time: f64, node_ratio: f64) -> Result<(f64, f64), EngineError> {
    if candidate_time <= 0.0 || !candidate_time.is_finite() {
        return Err(EngineError::Config(format!("candidate time {candidate_time} must be positive")));
    }
    if node_ratio <= 0.0 {
        return Err(EngineError::Config(format!("node ratio {node_ratio} must be positive")));
    }
    let speedup = baseline_time / candidate_time;
    Ok((speedup, speedup / node_ratio))
}

pub fn compute_scaling_metrics(
    baseline: &RunReport,
    candidate: &RunReport,
    node_ratio: f64,
) -> Result<(f64, f64), EngineError> {
    scaling_metrics(baseline.total_time_s, candidate.total_time_s, node_ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub nodes: usize,
    pub ranks: usize,
    pub epochs: u64,
    pub steps: u64,
    pub avg_step_s: f64,
    pub total_time_s: f64,
    pub loss: Option<f64>,
    pub expansion: f64,
    pub speedup: f64,
}

impl ScalingRow {
    /// Row for `candidate`, with metrics relative to `baseline`.
    pub fn from_reports(baseline: &RunReport, candidate: &RunReport) -> Result<Self, EngineError> {
        let ratio = candidate.world_size as f64 / baseline.world_size as f64;
        let (speedup, expansion) = compute_scaling_metrics(baseline, candidate, ratio)?;
        Ok(Self {
            nodes: 1,
            ranks: candidate.world_size,
            epochs: candidate.final_epoch,
            steps: candidate.steps.len() as u64,
            avg_step_s: candidate.avg_step_s(),
            total_time_s: candidate.total_time_s,
            loss: candidate.final_loss(),
            expansion,
            speedup,
        })
    }
}

pub fn format_scaling_table(rows: &[ScalingRow]) -> String {
    let mut out = format!(
        "{:>5} {:>5} {:>6} {:>7} {:>10} {:>12} {:>10} {:>9} {:>8}\n",
        "nodes", "ranks", "epochs", "steps", "avg step", "train time", "loss", "expansion", "speedup"
    );
    for r in rows {
        let loss = r.loss.map_or_else(|| "-".to_string(), |l| format!("{l:.4}"));
        let _ = writeln!(
            out,
            "{:>5} {:>5} {:>6} {:>7} {:>9.4}s {:>11.3}s {:>10} {:>9.2} {:>8.2}",
            r.nodes, r.ranks, r.epochs, r.steps, r.avg_step_s, r.total_time_s, loss, r.expansion, r.speedup
        );
    }
    out
}
