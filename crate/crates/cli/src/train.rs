use anyhow::Result;
use clap::Args;
use hetpar::comm::init_process_group;
use hetpar::engine::{train_inproc, train_run, RunReport};

use crate::run_args::{write_text, RunArgs};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Suppress per-step output.
    #[arg(long, short)]
    pub quiet: bool,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let data = args.run.dataset(&cfg)?;
    log::info!("training on {} instances, world {} via {}", data.index.total(), cfg.world_size, cfg.backend);
    let report = match cfg.backend.as_str() {
        "inproc" => train_inproc(&cfg, data.index.clone())?.swap_remove(0),
        _ => {
            let mut group = init_process_group(&cfg.comm())?;
            let report = train_run(&cfg, &mut group, data.index.clone())?;
            group.shutdown()?;
            report
        }
    };
    if cfg.rank != 0 && cfg.backend != "inproc" {
        return Ok(());
    }
    if !args.quiet {
        print_steps(&report);
    }
    println!(
        "final_step={} final_epoch={} param_digest={:016x} time={:.3}s",
        report.final_step, report.final_epoch, report.param_digest, report.total_time_s
    );
    for c in &report.checkpoints {
        println!("checkpoint {c}");
    }
    if let Some(path) = &cfg.report {
        write_text(path, &report.to_text())?;
    }
    Ok(())
}

fn print_steps(report: &RunReport) {
    for s in &report.steps {
        println!("step {:>6} epoch {:>3} loss {:.6} lr {:.3e} weight {}", s.step, s.epoch, s.loss, s.lr, s.weight);
    }
}
