use anyhow::Result;
use clap::Args;
use hetpar::engine::{format_scaling_table, train_inproc, RunReport, ScalingRow};
use hetpar::RunConfig;

use crate::run_args::{write_text, RunArgs};
use crate::UsageError;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// World sizes to compare; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub worlds: Vec<usize>,
    /// Rank-steps held constant across rows: each row runs `total / world` updates.
    #[arg(long, default_value_t = 64)]
    pub total_steps: u64,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let mut base = args.run.clone();
    base.steps.get_or_insert(args.total_steps);
    let cfg = base.resolve()?;
    if cfg.backend != "inproc" {
        return Err(UsageError("bench runs in-process worlds only".into()).into());
    }
    if args.worlds.is_empty() || args.worlds.contains(&0) {
        return Err(UsageError("--worlds needs positive sizes".into()).into());
    }
    let data = args.run.dataset(&cfg)?;
    let mut reports: Vec<RunReport> = Vec::new();
    for &w in &args.worlds {
        if !args.total_steps.is_multiple_of(w as u64) {
            return Err(UsageError(format!("total steps {} not divisible by world {w}", args.total_steps)).into());
        }
        let row = RunConfig {
            world_size: w,
            rank: 0,
            max_steps: Some(args.total_steps / w as u64),
            max_epochs: None,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            resume: None,
            ..cfg.clone()
        };
        log::info!("bench: world {w}, {} steps", args.total_steps / w as u64);
        reports.push(train_inproc(&row, data.index.clone())?.swap_remove(0));
    }
    let rows = reports.iter().map(|r| ScalingRow::from_reports(&reports[0], r)).collect::<Result<Vec<_>, _>>()?;
    let table = format_scaling_table(&rows);
    print!("{table}");
    if let Some(path) = &cfg.report {
        write_text(path, &table)?;
    }
    Ok(())
}
