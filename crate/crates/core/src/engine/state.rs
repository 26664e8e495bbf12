use std::time::Instant;

use super::EngineError;
use crate::checkpoint::{derived_rng, Checkpoint, SeededRng};
use crate::comm::ProcessGroup;
use crate::config::RunConfig;
use crate::data::Batch;
use crate::numerics::{
    backward, build_model, flatten_gradients, init_parameters, model_forward, unflatten_gradients, ForwardCtx,
    Gradients, Model, Parameters, Tensor, WeightPolicy,
};
use crate::optim::{build_optimizer, build_scheduler, Accumulator, OptimConfig, Optimizer, Scheduler, SchedulerConfig};

use super::report::StepReport;

/// Everything one rank needs to train; identical across ranks after every update.
pub struct TrainState {
    pub model: Box<dyn Model>,
    pub params: Parameters,
    pub optimizer: Box<dyn Optimizer>,
    pub scheduler: Box<dyn Scheduler>,
    pub optim_config: OptimConfig,
    pub sched_config: SchedulerConfig,
    pub epoch: u64,
    /// Optimizer updates applied so far.
    pub step: u64,
    pub seed: u64,
    pub policy: WeightPolicy,
    pub accumulator: Accumulator,
    /// Normalized gradient of the most recent update.
    pub last_gradient: Option<Gradients>,
    started: Option<Instant>,
}

impl std::fmt::Debug for TrainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainState")
            .field("model", &self.model.spec().arch)
            .field("epoch", &self.epoch)
            .field("step", &self.step)
            .field("seed", &self.seed)
            .finish()
    }
}

/// Dropout stream for one batch of one update.
pub fn dropout_rng(seed: u64, epoch: u64, step: u64, batch: usize) -> SeededRng {
    let base = derived_rng(seed, epoch.wrapping_add(step)).next_u64();
    derived_rng(base, batch as u64)
}

impl TrainState {
    /// Fresh state with parameters drawn from `SeededRng::new(seed)`.
    pub fn new(cfg: &RunConfig) -> Result<Self, EngineError> {
        let model = build_model(&cfg.model)?;
        let params = init_parameters(&model.parameter_shapes(), cfg.model.dtype, &mut SeededRng::new(cfg.seed));
        Ok(Self {
            params,
            optimizer: build_optimizer(&cfg.optimizer)?,
            scheduler: build_scheduler(&cfg.scheduler)?,
            optim_config: cfg.optimizer.clone(),
            sched_config: cfg.scheduler.clone(),
            epoch: 0,
            step: 0,
            seed: cfg.seed,
            policy: cfg.weight_policy,
            accumulator: Accumulator::new(cfg.update_freq)?,
            last_gradient: None,
            started: None,
            model,
        })
    }

    /// Restores a saved state after checking it is compatible with `cfg`.
    pub fn from_checkpoint(ckpt: Checkpoint, cfg: &RunConfig) -> Result<Self, EngineError> {
        let mismatch = |what: &str| Err(EngineError::Config(format!("checkpoint {what} differs from the run config")));
        if ckpt.model != cfg.model {
            return mismatch("model spec");
        }
        if ckpt.optimizer != cfg.optimizer {
            return mismatch("optimizer");
        }
        if ckpt.scheduler != cfg.scheduler {
            return mismatch("scheduler");
        }
        if ckpt.seed != cfg.seed {
            return mismatch("seed");
        }
        if ckpt.weight_policy != cfg.weight_policy {
            return mismatch("weight policy");
        }
        if ckpt.world_size * ckpt.update_freq != cfg.world_size * cfg.update_freq {
            return Err(EngineError::Config(format!(
                "checkpoint was written with world {} x update_freq {}; resuming with world {} x update_freq {} \
                 would change the batches per update",
                ckpt.world_size, ckpt.update_freq, cfg.world_size, cfg.update_freq
            )));
        }
        let mut state = Self::new(cfg)?;
        let expected: Vec<(&String, &[usize])> = state.params.iter().map(|(k, t)| (k, t.shape())).collect();
        let found: Vec<(&String, &[usize])> = ckpt.params.iter().map(|(k, t)| (k, t.shape())).collect();
        if expected != found {
            return mismatch("parameter inventory");
        }
        state.params = ckpt.params;
        state.optimizer.load_state(ckpt.optim_state)?;
        state.epoch = ckpt.epoch;
        state.step = ckpt.step;
        Ok(state)
    }

    pub fn to_checkpoint(&self, world_size: usize) -> Checkpoint {
        Checkpoint {
            epoch: self.epoch,
            step: self.step,
            seed: self.seed,
            weight_policy: self.policy,
            model: self.model.spec().clone(),
            optimizer: self.optim_config.clone(),
            scheduler: self.sched_config.clone(),
            world_size,
            update_freq: self.accumulator.update_freq(),
            params: self.params.clone(),
            optim_state: self.optimizer.state(),
        }
    }

    /// Marks the start of the current update's wall-clock window.
    pub fn begin_update_clock(&mut self) {
        self.started.get_or_insert_with(Instant::now);
    }
}

/// One lockstep round: forward, backward, then (loss, weight) and gradients
/// reduced onto the running sums. Returns true once the accumulator is full.
pub fn micro_step(state: &mut TrainState, group: &mut ProcessGroup, batch: &Batch) -> Result<bool, EngineError> {
    state.begin_update_clock();
    let mut rng = dropout_rng(state.seed, state.epoch, state.step, batch.batch);
    let mut ctx = ForwardCtx { policy: state.policy, rng: Some(&mut rng) };
    let forward = model_forward(state.model.as_ref(), &state.params, &batch.records, &mut ctx)?;
    let (loss, weight) = if batch.dummy { (0.0, 0.0) } else { (forward.loss_sum, forward.weight) };
    let (run_loss, run_weight, run_grads) = state.accumulator.running();
    let base = run_grads.map(flatten_gradients).unwrap_or_default();
    let totals = group.all_reduce_sum_onto(&[run_loss, run_weight], &[loss, weight])?;
    if !totals[0].is_finite() {
        return Err(EngineError::NonFinite(format!("aggregated loss at step {}", state.step + 1)));
    }
    let local = if batch.dummy {
        vec![0.0; state.params.element_count()]
    } else {
        flatten_gradients(&backward(&forward, &state.params)?)
    };
    let summed = group.all_reduce_sum_onto(&base, &local)?;
    let grads = unflatten_gradients(&summed, &state.params)?;
    Ok(state.accumulator.advance(totals[0], totals[1], grads)?)
}

/// Flushes the accumulator and applies `θ ← opt(θ, Σg/Σw, lr(P+1))`.
pub fn apply_update(state: &mut TrainState, group: &mut ProcessGroup) -> Result<StepReport, EngineError> {
    let micro_steps = state.accumulator.micro_steps();
    let (loss_sum, weight, grads) = state.accumulator.flush()?;
    if weight == 0.0 {
        return Err(EngineError::AllDummy { step: state.step + 1 });
    }
    let normalized = grads
        .iter()
        .map(|(k, g)| {
            let data = g.data().iter().map(|x| x / weight).collect();
            Ok((k.clone(), Tensor::with_dtype(g.shape().to_vec(), data, g.dtype())?))
        })
        .collect::<Result<Gradients, EngineError>>()?;
    let lr = state.scheduler.lr(state.step + 1)?;
    state.optimizer.step(&mut state.params, &normalized, lr)?;
    state.step += 1;
    state.last_gradient = Some(normalized);
    let duration_s = state.started.take().map_or(0.0, |t| t.elapsed().as_secs_f64());
    let rank_durations = group.gather_scalars(duration_s)?;
    let check_every = if cfg!(debug_assertions) { 1 } else { 100 };
    if state.step.is_multiple_of(check_every) {
        check_consistency(state, group)?;
    }
    Ok(StepReport {
        step: state.step,
        epoch: state.epoch,
        loss: loss_sum / weight,
        weight,
        lr,
        micro_steps,
        duration_s,
        rank_durations,
    })
}

/// A full update from a single round (update_freq 1), or one micro-step of a
/// longer accumulation.
pub fn train_step(
    state: &mut TrainState,
    group: &mut ProcessGroup,
    batch: &Batch,
) -> Result<Option<StepReport>, EngineError> {
    if micro_step(state, group, batch)? {
        apply_update(state, group).map(Some)
    } else {
        Ok(None)
    }
}

/// Fails on every rank if parameter digests differ anywhere.
pub fn check_consistency(state: &TrainState, group: &mut ProcessGroup) -> Result<(), EngineError> {
    let digest = state.params.digest();
    let all = group.all_gather_bytes(&digest.to_le_bytes())?;
    let digests: Vec<u64> = all.iter().map(|b| u64::from_le_bytes(b.as_slice().try_into().unwrap_or([0; 8]))).collect();
    if digests.iter().any(|&d| d != digests[0]) {
        return Err(EngineError::Divergence { step: state.step, digests });
    }
    Ok(())
}
