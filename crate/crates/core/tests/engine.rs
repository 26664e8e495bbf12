use std::path::Path;
use std::sync::Arc;
use std::thread;

use hetpar::checkpoint::{load_checkpoint, SeededRng};
use hetpar::comm::{init_process_group, CommConfig, InprocHub};
use hetpar::data::{
    build_epoch_batches, build_index, partition_for_rank, synthetic_classify, write_dataset, Batch, DatagenConfig,
    DatasetIndex,
};
use hetpar::engine::{apply_update, micro_step, train_inproc, EngineError, RunReport, TrainState};
use hetpar::numerics::{backward, init_parameters, model_forward, ForwardCtx, Gradients, Parameters, WeightPolicy};
use hetpar::RunConfig;

fn dataset(dir: &Path, n: usize) -> Arc<DatasetIndex> {
    let recs = synthetic_classify(&DatagenConfig { n, dim: 6, classes: 3, seed: 5, ..Default::default() }).unwrap();
    Arc::new(build_index(&write_dataset(&recs, dir, 3).unwrap()).unwrap())
}

fn base_cfg() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.layers = vec![6, 8, 3];
    c.max_sentences = Some(4);
    c.prefetch_depth = 1;
    c.timeout_secs = 60;
    c
}

fn run(cfg: &RunConfig, index: &Arc<DatasetIndex>) -> Vec<RunReport> {
    train_inproc(cfg, index.clone()).unwrap()
}

#[test]
fn update_counts() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 16);
    // 16 instances at 4 per batch: 4 batches per epoch.
    let cfg = RunConfig { world_size: 2, max_epochs: Some(1), ..base_cfg() };
    assert_eq!(run(&cfg, &index)[0].steps.len(), 2);
    let cfg = RunConfig { world_size: 1, update_freq: 2, max_epochs: Some(1), ..base_cfg() };
    let r = run(&cfg, &index);
    assert_eq!(r[0].steps.len(), 2);
    assert!(r[0].steps.iter().all(|s| s.micro_steps == 2));
    let cfg = RunConfig { world_size: 1, update_freq: 3, max_epochs: Some(1), ..base_cfg() };
    let micro: Vec<usize> = run(&cfg, &index)[0].steps.iter().map(|s| s.micro_steps).collect();
    assert_eq!(micro, vec![3, 1]);
}

#[test]
fn world_equals_accumulation_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 64);
    let wide = RunConfig { world_size: 4, max_steps: Some(30), ..base_cfg() };
    let deep = RunConfig { world_size: 1, update_freq: 4, max_steps: Some(30), ..base_cfg() };
    let a = run(&wide, &index);
    let b = run(&deep, &index);
    assert!(a.iter().all(|r| r.param_digest == a[0].param_digest));
    assert_eq!(a[0].param_digest, b[0].param_digest);
    let la: Vec<u64> = a[0].losses().iter().map(|x| x.to_bits()).collect();
    let lb: Vec<u64> = b[0].losses().iter().map(|x| x.to_bits()).collect();
    assert_eq!(la, lb);
}

fn serial_gradient(cfg: &RunConfig, index: &DatasetIndex, params: &Parameters) -> Gradients {
    let model = hetpar::numerics::build_model(&cfg.model).unwrap();
    let records: Vec<_> = (0..index.total()).map(|g| index.read(g).unwrap()).collect();
    let fwd = model_forward(model.as_ref(), params, &records, &mut ForwardCtx::plain(WeightPolicy::Sentences)).unwrap();
    backward(&fwd, params).unwrap().into_iter().map(|(k, g)| (k, g.scale(1.0 / fwd.weight).unwrap())).collect()
}

/// One update on every rank of a world; returns each rank's applied gradient.
fn one_update(cfg: &RunConfig, index: &Arc<DatasetIndex>) -> Vec<(Gradients, f64)> {
    let hub = InprocHub::new(cfg.world_size, std::time::Duration::from_secs(30));
    let plan = build_epoch_batches(&index.token_lengths(), cfg.caps(), cfg.seed, 0).unwrap();
    let handles: Vec<_> = (0..cfg.world_size)
        .map(|rank| {
            let (hub, index, plan, cfg) = (hub.clone(), index.clone(), plan.clone(), cfg.clone());
            thread::spawn(move || {
                let mut group = init_process_group(&CommConfig::inproc(&hub, rank)).unwrap();
                let mut state = TrainState::new(&cfg).unwrap();
                let rb = partition_for_rank(&plan, cfg.world_size, rank).unwrap()[0];
                let records = plan.batches[rb.batch].iter().map(|&g| index.read(g).unwrap()).collect();
                let batch = Batch { round: 0, batch: rb.batch, dummy: rb.dummy, records };
                assert!(micro_step(&mut state, &mut group, &batch).unwrap());
                let rep = apply_update(&mut state, &mut group).unwrap();
                (state.last_gradient.unwrap(), rep.weight)
            })
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

#[test]
fn empty_rank_example_matches_serial_mean() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 5);
    let cfg = RunConfig { world_size: 4, max_sentences: Some(2), max_steps: Some(1), ..base_cfg() };
    let plan = build_epoch_batches(&index.token_lengths(), cfg.caps(), cfg.seed, 0).unwrap();
    assert_eq!(plan.batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
    let out = one_update(&cfg, &index);
    let init = init_parameters(
        &hetpar::numerics::build_model(&cfg.model).unwrap().parameter_shapes(),
        cfg.model.dtype,
        &mut SeededRng::new(cfg.seed),
    );
    let oracle = serial_gradient(&cfg, &index, &init);
    for (g, w) in &out {
        assert_eq!(*w, 5.0);
        for (k, t) in g {
            for (a, b) in t.data().iter().zip(oracle[k].data()) {
                assert!((a - b).abs() <= 1e-12, "{k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn dummy_ranks_are_neutral() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 12);
    // Three batches of four: world 3 has no dummies, world 5 adds two.
    let three = one_update(&RunConfig { world_size: 3, max_steps: Some(1), ..base_cfg() }, &index);
    let five = one_update(&RunConfig { world_size: 5, max_steps: Some(1), ..base_cfg() }, &index);
    assert_eq!(three[0].1, five[0].1);
    assert_eq!(three[0].0, five[0].0);
    assert!(five.iter().all(|r| r.0 == five[0].0));
}

#[test]
fn equal_batches_report_mean_of_means() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 8);
    let cfg = RunConfig { world_size: 2, max_steps: Some(1), ..base_cfg() };
    let report = &run(&cfg, &index)[0];
    let plan = build_epoch_batches(&index.token_lengths(), cfg.caps(), cfg.seed, 0).unwrap();
    let model = hetpar::numerics::build_model(&cfg.model).unwrap();
    let init = init_parameters(&model.parameter_shapes(), cfg.model.dtype, &mut SeededRng::new(cfg.seed));
    let means: Vec<f64> = plan
        .batches
        .iter()
        .map(|b| {
            let recs: Vec<_> = b.iter().map(|&g| index.read(g).unwrap()).collect();
            let f =
                model_forward(model.as_ref(), &init, &recs, &mut ForwardCtx::plain(WeightPolicy::Sentences)).unwrap();
            f.loss_sum / f.weight
        })
        .collect();
    assert!((report.steps[0].loss - (means[0] + means[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn loss_falls_on_separable_data() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 200);
    let cfg = RunConfig { world_size: 2, max_steps: Some(200), ..base_cfg() };
    let losses = run(&cfg, &index)[0].losses();
    assert!(losses[199] < 0.5 * losses[0], "{} vs {}", losses[199], losses[0]);
}

#[test]
fn zero_steps_saves_initial_parameters_once() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(&dir.path().join("data"), 10);
    let ck = dir.path().join("ck");
    let cfg = RunConfig { max_steps: Some(0), checkpoint_dir: Some(ck.clone()), ..base_cfg() };
    let r = run(&cfg, &index);
    assert!(r[0].steps.is_empty());
    assert_eq!(r[0].checkpoints.len(), 1);
    let c = load_checkpoint(&r[0].checkpoints[0]).unwrap();
    assert_eq!((c.epoch, c.step, c.seed), (0, 0, cfg.seed));
    let model = hetpar::numerics::build_model(&cfg.model).unwrap();
    assert_eq!(c.params, init_parameters(&model.parameter_shapes(), cfg.model.dtype, &mut SeededRng::new(cfg.seed)));
}

#[test]
fn resume_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(&dir.path().join("data"), 40);
    let full_dir = dir.path().join("full");
    let mut cfg = base_cfg();
    cfg.world_size = 2;
    cfg.optimizer = hetpar::optim::OptimConfig::adam(0.9, 0.98, 1e-9);
    cfg.scheduler.kind = "inverse_sqrt".into();
    cfg.scheduler.warmup_steps = 5;
    cfg.model.dropout = 0.1;
    cfg.max_steps = Some(20);
    cfg.checkpoint_interval = 7;
    cfg.checkpoint_dir = Some(full_dir.clone());
    let full = run(&cfg, &index);
    assert_eq!(full[0].checkpoints.len(), 3);

    let resumed_dir = dir.path().join("resumed");
    let resumed_cfg = RunConfig {
        resume: Some(full_dir.join("ckpt_000007.hck")),
        checkpoint_dir: Some(resumed_dir.clone()),
        ..cfg.clone()
    };
    let resumed = run(&resumed_cfg, &index);
    assert_eq!(resumed[0].start_step, 7);
    let bits = |r: &RunReport| r.losses().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&resumed[0]), bits(&full[0])[7..].to_vec());
    let a = std::fs::read(full_dir.join("ckpt_000020.hck")).unwrap();
    let b = std::fs::read(resumed_dir.join("ckpt_000020.hck")).unwrap();
    assert_eq!(a, b);

    // Same global batches per update with a different world is allowed.
    let regrouped = RunConfig {
        world_size: 1,
        update_freq: 2,
        checkpoint_dir: None,
        checkpoint_interval: 0,
        ..resumed_cfg.clone()
    };
    assert_eq!(bits(&run(&regrouped, &index)[0]), bits(&full[0])[7..].to_vec());
    let bad = RunConfig { world_size: 4, ..regrouped };
    assert!(matches!(train_inproc(&bad, index.clone()), Err(EngineError::Config(_))));
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(&dir.path().join("data"), 30);
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let cfg =
            RunConfig { world_size: 3, max_steps: Some(9), checkpoint_dir: Some(dir.path().join(name)), ..base_cfg() };
        run(&cfg, &index);
        outs.push(std::fs::read(dir.path().join(name).join("ckpt_000009.hck")).ok());
    }
    assert!(outs[0].is_some());
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn float32_training_runs() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 24);
    let mut cfg = RunConfig { world_size: 2, max_steps: Some(5), ..base_cfg() };
    cfg.model.dtype = hetpar::numerics::DType::F32;
    let r = run(&cfg, &index);
    assert_eq!(r[0].steps.len(), 5);
    assert_eq!(r[0].param_digest, r[1].param_digest);
}

#[test]
fn world_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 8);
    let cfg = RunConfig { world_size: 2, max_steps: Some(1), ..base_cfg() };
    let mut group = init_process_group(&CommConfig::single()).unwrap();
    assert!(matches!(hetpar::engine::train_run(&cfg, &mut group, index), Err(EngineError::Config(_))));
}

#[test]
fn mismatched_launch_fails_on_every_rank() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 8);
    let hub = InprocHub::new(2, std::time::Duration::from_secs(30));
    let handles: Vec<_> = (0..2)
        .map(|rank| {
            let (hub, index) = (hub.clone(), index.clone());
            let checkpoint_dir = (rank == 1).then(|| dir.path().join("ck"));
            let cfg = RunConfig { world_size: 2, rank, max_steps: Some(2), checkpoint_dir, ..base_cfg() };
            thread::spawn(move || {
                let mut group = init_process_group(&CommConfig::inproc(&hub, rank)).unwrap();
                hetpar::engine::train_run(&cfg, &mut group, index)
            })
        })
        .collect();
    for h in handles {
        match h.join().unwrap() {
            Err(EngineError::Config(m)) => assert!(m.contains("checkpoint_dir=true"), "{m}"),
            other => panic!("expected a launch mismatch, got {:?}", other.map(|r| r.final_step)),
        }
    }
}

#[test]
fn every_factorization_of_the_global_batch_agrees_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let index = dataset(dir.path(), 70);
    let runs: Vec<(u64, Vec<u64>)> = [(1, 8), (2, 4), (4, 2), (8, 1)]
        .into_iter()
        .map(|(world_size, update_freq)| {
            let cfg = RunConfig { world_size, update_freq, max_steps: Some(12), ..base_cfg() };
            let r = run(&cfg, &index).swap_remove(0);
            (r.param_digest, r.losses().iter().map(|l| l.to_bits()).collect())
        })
        .collect();
    assert!(runs.iter().all(|r| *r == runs[0]));
}
