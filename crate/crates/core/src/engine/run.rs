use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::report::{RunReport, StepReport};
use super::state::{apply_update, check_consistency, micro_step, TrainState};
use super::EngineError;
use crate::checkpoint::{decode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use crate::comm::{init_process_group, CommConfig, CommError, InprocHub, ProcessGroup};
use crate::config::RunConfig;
use crate::data::{
    build_epoch_batches, partition_for_rank, rounds_per_epoch, BatchCaps, BatchPlan, DatasetIndex, Loader, LoaderConfig,
};
use crate::numerics::Parameters;

/// Per-epoch limits and side effects.
#[derive(Debug, Clone)]
pub struct EpochOptions {
    pub loader: LoaderConfig,
    pub max_steps: Option<u64>,
    pub checkpoint_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct EpochOutcome {
    pub steps: Vec<StepReport>,
    pub checkpoints: Vec<String>,
    /// False when the step limit stopped the epoch early.
    pub completed: bool,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.hck"))
}

/// Master writes, every rank waits on both sides of the write.
pub fn write_checkpoint(state: &TrainState, group: &mut ProcessGroup, dir: &Path) -> Result<String, EngineError> {
    let path = checkpoint_path(dir, state.step);
    group.barrier()?;
    let outcome = if group.is_master() {
        std::fs::create_dir_all(dir)
            .map_err(Into::into)
            .and_then(|_| save_checkpoint(&state.to_checkpoint(group.world_size()), &path, true))
            .map_err(|e| e.to_string())
    } else {
        Ok(())
    };
    let status = group.broadcast(outcome.as_ref().err().map_or(&[][..], |m| m.as_bytes()), 0)?;
    if !status.is_empty() {
        return Err(EngineError::Config(format!("checkpoint write failed: {}", String::from_utf8_lossy(&status))));
    }
    log::info!("checkpoint at step {} -> {}", state.step, path.display());
    Ok(path.display().to_string())
}

/// Every rank reads the file; ranks that cannot receive the master's bytes.
pub fn load_checkpoint_collective(path: &Path, group: &mut ProcessGroup) -> Result<Checkpoint, EngineError> {
    let local = load_checkpoint(path);
    let ok = [u8::from(local.is_ok())];
    let flags = group.all_gather_bytes(&ok)?;
    if flags.iter().all(|f| f == &[1]) {
        return Ok(local?);
    }
    if flags[0] != [1] {
        return Err(local
            .err()
            .map_or_else(|| EngineError::Config("master could not read checkpoint".into()), Into::into));
    }
    log::info!("some ranks cannot read {}; broadcasting from master", path.display());
    let bytes = if group.is_master() {
        std::fs::read(path).map_err(crate::checkpoint::CheckpointError::from)?
    } else {
        Vec::new()
    };
    let shared = group.broadcast(&bytes, 0)?;
    match local {
        Ok(c) => Ok(c),
        Err(_) => Ok(decode_checkpoint(&shared)?),
    }
}

/// Replaces every rank's parameters with the master's.
pub fn broadcast_parameters(state: &mut TrainState, group: &mut ProcessGroup) -> Result<(), EngineError> {
    let bytes = group.broadcast(&state.params.export_state(), 0)?;
    if !group.is_master() {
        state.params = Parameters::import_state(&bytes)?;
    }
    Ok(())
}

/// Optimizer updates produced by epoch `epoch` for a given world and update frequency.
pub fn updates_in_epoch(plan: &BatchPlan, world: usize, update_freq: usize) -> u64 {
    rounds_per_epoch(plan.len(), world).div_ceil(update_freq) as u64
}

fn updates_before(
    lengths: &[u32],
    caps: BatchCaps,
    seed: u64,
    epoch: u64,
    world: usize,
    k: usize,
) -> Result<u64, EngineError> {
    let mut total = 0;
    for e in 0..epoch {
        total += updates_in_epoch(&build_epoch_batches(lengths, caps, seed, e)?, world, k);
    }
    Ok(total)
}

/// Runs the rounds of one epoch that remain after `skip_rounds`, applying an
/// update every `update_freq` rounds and once more for a partial tail.
pub fn train_epoch(
    state: &mut TrainState,
    group: &mut ProcessGroup,
    index: &Arc<DatasetIndex>,
    plan: &BatchPlan,
    skip_rounds: usize,
    opts: &EpochOptions,
) -> Result<EpochOutcome, EngineError> {
    let world = group.world_size();
    let rounds = rounds_per_epoch(plan.len(), world);
    let mine = partition_for_rank(plan, world, group.rank())?;
    let skip = skip_rounds.min(mine.len());
    let mut loader = Loader::new(index.clone(), plan, mine[skip..].to_vec(), &opts.loader)?;
    let mut out = EpochOutcome::default();
    let mut round = skip;
    if round == rounds {
        state.epoch += 1;
        out.completed = true;
        return Ok(out);
    }
    while opts.max_steps.is_none_or(|m| state.step < m) {
        state.begin_update_clock();
        let Some(batch) = loader.next_batch()? else { break };
        round += 1;
        let full = micro_step(state, group, &batch)?;
        if full || round == rounds {
            let report = apply_update(state, group)?;
            log::debug!("step {} loss {:.6} weight {}", report.step, report.loss, report.weight);
            out.steps.push(report);
            if round == rounds {
                state.epoch += 1;
                out.completed = true;
            }
            if let Some(dir) = &opts.checkpoint_dir {
                if opts.checkpoint_interval > 0 && state.step.is_multiple_of(opts.checkpoint_interval) {
                    out.checkpoints.push(write_checkpoint(state, group, dir)?);
                }
            }
        }
    }
    Ok(out)
}

/// Settings every rank must agree on, as `key=value` lines. Paths that may
/// legitimately differ per host are reduced to whether they are set.
fn launch_fingerprint(cfg: &RunConfig, instances: u64) -> String {
    let mut out = format!("instances={instances}\n");
    for (k, v) in cfg.to_pairs() {
        match k.as_str() {
            "rank" | "data" | "report" | "timeout_secs" => {}
            "checkpoint_dir" => out.push_str(&format!("{k}={}\n", cfg.checkpoint_dir.is_some())),
            "resume" => out.push_str(&format!("{k}={}\n", cfg.resume.is_some())),
            _ => out.push_str(&format!("{k}={v}\n")),
        }
    }
    out
}

/// Fails on every rank when any rank was launched with a different configuration.
pub fn check_launch(cfg: &RunConfig, instances: u64, group: &mut ProcessGroup) -> Result<(), EngineError> {
    let mine = launch_fingerprint(cfg, instances);
    let all = group.all_gather_bytes(mine.as_bytes())?;
    let base = String::from_utf8_lossy(&all[0]).into_owned();
    for (rank, other) in all.iter().enumerate().skip(1) {
        let other = String::from_utf8_lossy(other);
        if let Some(line) = other.lines().find(|l| !base.lines().any(|b| b == *l)) {
            return Err(EngineError::Config(format!("rank launch mismatch: rank {rank} has {line}, unlike rank 0")));
        }
    }
    Ok(())
}

/// Trains until the step or epoch limit, starting from scratch or `cfg.resume`.
pub fn train_run(
    cfg: &RunConfig,
    group: &mut ProcessGroup,
    index: Arc<DatasetIndex>,
) -> Result<RunReport, EngineError> {
    cfg.validate()?;
    if group.world_size() != cfg.world_size {
        return Err(EngineError::Config(format!(
            "config world_size {} but the process group has {} ranks",
            cfg.world_size,
            group.world_size()
        )));
    }
    if index.total() == 0 {
        return Err(EngineError::Config("dataset is empty".into()));
    }
    let world = group.world_size();
    check_launch(cfg, index.total(), group)?;
    let mut state = match &cfg.resume {
        Some(path) => TrainState::from_checkpoint(load_checkpoint_collective(path, group)?, cfg)?,
        None => TrainState::new(cfg)?,
    };
    broadcast_parameters(&mut state, group)?;
    check_consistency(&state, group)?;

    let lengths = index.token_lengths();
    let caps = cfg.caps();
    let opts = EpochOptions {
        loader: cfg.loader(),
        max_steps: cfg.max_steps,
        checkpoint_interval: cfg.checkpoint_interval,
        checkpoint_dir: cfg.checkpoint_dir.clone(),
    };
    let start_step = state.step;
    let clock = Instant::now();
    let mut steps = Vec::new();
    let mut checkpoints: Vec<String> = Vec::new();
    let mut last_saved = None;
    let done =
        |s: &TrainState| cfg.max_steps.is_some_and(|m| s.step >= m) || cfg.max_epochs.is_some_and(|e| s.epoch >= e);
    while !done(&state) {
        let plan = build_epoch_batches(&lengths, caps, state.seed, state.epoch)?;
        let before = updates_before(&lengths, caps, state.seed, state.epoch, world, cfg.update_freq)?;
        let within = state.step.checked_sub(before).ok_or_else(|| {
            EngineError::Config(format!("step {} precedes the start of epoch {}", state.step, state.epoch))
        })?;
        let skip = (within as usize).saturating_mul(cfg.update_freq);
        log::info!("epoch {} ({} batches), resuming after {} rounds", state.epoch, plan.len(), skip);
        let outcome = train_epoch(&mut state, group, &index, &plan, skip, &opts)?;
        if let Some(s) = outcome.steps.last() {
            log::info!("epoch {} done at step {}, loss {:.6}", s.epoch, s.step, s.loss);
        }
        steps.extend(outcome.steps);
        if !outcome.checkpoints.is_empty() {
            last_saved = Some(state.step);
            checkpoints.extend(outcome.checkpoints);
        }
        if !outcome.completed {
            break;
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        if last_saved != Some(state.step) {
            checkpoints.push(write_checkpoint(&state, group, dir)?);
        }
    }
    let total_time_s = clock.elapsed().as_secs_f64();
    Ok(RunReport {
        world_size: world,
        update_freq: cfg.update_freq,
        start_step,
        final_step: state.step,
        final_epoch: state.epoch,
        steps,
        total_time_s,
        param_digest: state.params.digest(),
        checkpoints,
        config: cfg.to_pairs(),
    })
}

/// Runs every rank of an in-process world on its own thread; reports by rank.
pub fn train_inproc(cfg: &RunConfig, index: Arc<DatasetIndex>) -> Result<Vec<RunReport>, EngineError> {
    cfg.validate()?;
    let hub = InprocHub::new(cfg.world_size, std::time::Duration::from_secs(cfg.timeout_secs));
    let handles: Vec<_> = (0..cfg.world_size)
        .map(|rank| {
            let cfg = RunConfig { rank, ..cfg.clone() };
            let (hub, index) = (hub.clone(), index.clone());
            std::thread::Builder::new()
                .name(format!("rank-{rank}"))
                .spawn(move || -> Result<RunReport, EngineError> {
                    let mut comm = CommConfig::inproc(&hub, rank);
                    comm.timeout = std::time::Duration::from_secs(cfg.timeout_secs);
                    let mut group = init_process_group(&comm)?;
                    let report = train_run(&cfg, &mut group, index)?;
                    group.shutdown()?;
                    Ok(report)
                })
                .map_err(|e| EngineError::Config(format!("cannot spawn rank thread: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let results: Vec<Result<RunReport, EngineError>> = handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| Err(EngineError::Config("rank thread panicked".into()))))
        .collect();
    // Report the root cause rather than the timeouts it induced elsewhere.
    if results.iter().any(Result::is_err) {
        let mut errors: Vec<EngineError> = results.into_iter().filter_map(Result::err).collect();
        let pos = errors
            .iter()
            .position(|e| {
                !matches!(e, EngineError::Comm(CommError::Timeout(_)) | EngineError::Comm(CommError::Remote(_)))
            })
            .unwrap_or(0);
        return Err(errors.swap_remove(pos));
    }
    Ok(results.into_iter().map(|r| r.expect("errors handled above")).collect())
}
