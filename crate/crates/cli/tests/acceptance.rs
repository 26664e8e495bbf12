//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per criterion
//! and exits non-zero if any required criterion fails.

use std::error::Error;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use hetpar::checkpoint::{load_checkpoint, SeededRng};
use hetpar::comm::{init_process_group, CommConfig, InprocHub};
use hetpar::data::mlm::{make_nsp_pair, mask_tokens, MaskConfig, FIRST_WORD_ID};
use hetpar::data::{
    build_epoch_batches, build_index, mlm_nsp, mlm_vocab_size, partition_for_rank, synthetic_classify,
    synthetic_corpus, synthetic_sequence, write_dataset, Batch, DatagenConfig, DatasetIndex, Record,
};
use hetpar::engine::{apply_update, micro_step, scaling_metrics, train_inproc, RunReport, TrainState};
use hetpar::numerics::{
    backward, build_model, init_parameters, max_relative_error, model_forward, sample_coordinates, DType, ForwardCtx,
    Gradients, ModelSpec, Parameters, WeightPolicy,
};
use hetpar::optim::{inverse_sqrt_lr, linear_warmup_decay_lr};
use hetpar::RunConfig;

type Outcome = Result<(Verdict, String), Box<dyn Error>>;
/// Name, check, and whether a failure fails the suite.
type Criterion = (&'static str, fn() -> Outcome, bool);

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn classify_data(dir: &Path, n: usize) -> Result<Arc<DatasetIndex>, Box<dyn Error>> {
    let recs = synthetic_classify(&DatagenConfig { n, dim: 20, classes: 5, seed: 7, ..Default::default() })?;
    Ok(Arc::new(build_index(&write_dataset(&recs, dir, 4)?)?))
}

fn classify_cfg(steps: u64) -> RunConfig {
    let mut c = RunConfig {
        model: ModelSpec::mlp(vec![20, 64, 5]),
        max_sentences: Some(10),
        max_steps: Some(steps),
        timeout_secs: 120,
        ..RunConfig::default()
    };
    c.scheduler.lr = 0.1;
    c
}

fn final_params(report: &RunReport) -> Result<Parameters, Box<dyn Error>> {
    let last = report.checkpoints.last().ok_or("run wrote no checkpoint")?;
    Ok(load_checkpoint(last)?.params)
}

fn max_abs_diff(a: &Parameters, b: &Parameters) -> f64 {
    a.iter()
        .map(|(name, t)| {
            let u = b.get(name).map(|u| u.data().to_vec()).unwrap_or_default();
            if u.len() != t.len() {
                return f64::INFINITY;
            }
            t.data().iter().zip(&u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn loss_bits(r: &RunReport) -> Vec<u64> {
    r.losses().iter().map(|l| l.to_bits()).collect()
}

/// Plain big-batch SGD: every update pools the instances of `world` consecutive
/// batches into one forward pass and steps on the mean gradient.
fn serial_sgd(cfg: &RunConfig, index: &DatasetIndex, world: usize, steps: u64) -> Result<Parameters, Box<dyn Error>> {
    let model = build_model(&cfg.model)?;
    let mut params = init_parameters(&model.parameter_shapes(), DType::F64, &mut SeededRng::new(cfg.seed));
    let lengths = index.token_lengths();
    let (mut done, mut epoch) = (0u64, 0u64);
    while done < steps {
        let plan = build_epoch_batches(&lengths, cfg.caps(), cfg.seed, epoch)?;
        for group in plan.batches.chunks(world) {
            if done == steps {
                break;
            }
            let records: Vec<Record> = group.iter().flatten().map(|&g| index.read(g)).collect::<Result<_, _>>()?;
            let fwd = model_forward(model.as_ref(), &params, &records, &mut ForwardCtx::plain(cfg.weight_policy))?;
            let grads = backward(&fwd, &params)?;
            for (name, t) in params.iter_mut() {
                let g = &grads[name];
                let next: Vec<f64> =
                    t.data().iter().zip(g.data()).map(|(p, g)| p - cfg.scheduler.lr * (g / fwd.weight)).collect();
                t.assign(next)?;
            }
            done += 1;
        }
        epoch += 1;
    }
    Ok(params)
}

fn serial_equivalence() -> Outcome {
    let dir = tempfile::tempdir()?;
    let index = classify_data(&dir.path().join("data"), 1000)?;
    let clock = Instant::now();
    let wide = RunConfig { world_size: 4, checkpoint_dir: Some(dir.path().join("w4")), ..classify_cfg(200) };
    let w4 = train_inproc(&wide, index.clone())?.swap_remove(0);
    let deep = RunConfig { update_freq: 4, checkpoint_dir: Some(dir.path().join("k4")), ..classify_cfg(200) };
    let k4 = train_inproc(&deep, index.clone())?.swap_remove(0);
    let secs = clock.elapsed().as_secs_f64();
    let oracle = serial_sgd(&wide, &index, 4, 200)?;
    let diff = max_abs_diff(&final_params(&w4)?, &oracle);
    let bitwise = w4.param_digest == k4.param_digest && final_params(&w4)? == final_params(&k4)?;
    Ok((
        verdict(diff <= 1e-12 && bitwise && secs < 60.0),
        format!("max |world4 - big-batch oracle| = {diff:.3e}, world4 == world1 x K4 bitwise: {bitwise}, {secs:.1}s"),
    ))
}

fn delayed_update_equivalence() -> Outcome {
    let dir = tempfile::tempdir()?;
    let index = classify_data(dir.path(), 1000)?;
    let clock = Instant::now();
    let wide = RunConfig { world_size: 8, checkpoint_dir: Some(dir.path().join("w8")), ..classify_cfg(100) };
    let deep = RunConfig { update_freq: 8, checkpoint_dir: Some(dir.path().join("k8")), ..classify_cfg(100) };
    let a = train_inproc(&wide, index.clone())?.swap_remove(0);
    let b = train_inproc(&deep, index)?.swap_remove(0);
    let secs = clock.elapsed().as_secs_f64();
    let same = final_params(&a)? == final_params(&b)? && loss_bits(&a) == loss_bits(&b);
    Ok((verdict(same && secs < 60.0), format!("parameters and losses bit-identical: {same}, {secs:.1}s")))
}

fn empty_batch_example() -> Outcome {
    let dir = tempfile::tempdir()?;
    let index = classify_data(dir.path(), 5)?;
    let cfg = RunConfig { world_size: 4, max_sentences: Some(2), ..classify_cfg(1) };
    let plan = build_epoch_batches(&index.token_lengths(), cfg.caps(), cfg.seed, 0)?;
    let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
    let hub = InprocHub::new(4, std::time::Duration::from_secs(60));
    let handles: Vec<_> = (0..4)
        .map(|rank| {
            let (hub, index, plan, cfg) = (hub.clone(), index.clone(), plan.clone(), cfg.clone());
            thread::spawn(move || -> Result<Gradients, String> {
                let mut group = init_process_group(&CommConfig::inproc(&hub, rank)).map_err(|e| e.to_string())?;
                let mut state = TrainState::new(&cfg).map_err(|e| e.to_string())?;
                let rb = partition_for_rank(&plan, 4, rank).map_err(|e| e.to_string())?[0];
                let records = plan.batches[rb.batch]
                    .iter()
                    .map(|&g| index.read(g))
                    .collect::<Result<_, _>>()
                    .map_err(|e| e.to_string())?;
                let batch = Batch { round: 0, batch: rb.batch, dummy: rb.dummy, records };
                micro_step(&mut state, &mut group, &batch).map_err(|e| e.to_string())?;
                apply_update(&mut state, &mut group).map_err(|e| e.to_string())?;
                state.last_gradient.ok_or_else(|| "no gradient applied".to_string())
            })
        })
        .collect();
    let applied: Vec<Gradients> =
        handles.into_iter().map(|h| h.join().map_err(|_| "rank panicked".to_string())?).collect::<Result<_, _>>()?;

    let model = build_model(&cfg.model)?;
    let params = init_parameters(&model.parameter_shapes(), DType::F64, &mut SeededRng::new(cfg.seed));
    let all: Vec<Record> = (0..5).map(|g| index.read(g)).collect::<Result<_, _>>()?;
    let fwd = model_forward(model.as_ref(), &params, &all, &mut ForwardCtx::plain(WeightPolicy::Sentences))?;
    let serial = backward(&fwd, &params)?;
    let mut diff = 0.0f64;
    for g in &applied {
        for (name, t) in &serial {
            let a = g.get(name).ok_or("missing gradient")?;
            for (x, y) in a.data().iter().zip(t.data()) {
                diff = diff.max((x - y / fwd.weight).abs());
            }
        }
    }
    Ok((
        verdict(sizes == [2, 2, 1] && diff <= 1e-12),
        format!("batches {sizes:?}, max |applied - serial mean| = {diff:.3e}"),
    ))
}

fn resume_determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let index = classify_data(&dir.path().join("data"), 1000)?;
    let mut cfg = RunConfig { world_size: 2, max_sentences: Some(8), checkpoint_interval: 50, ..classify_cfg(100) };
    cfg.apply_text("optimizer=adam\nscheduler=linear\npeak_lr=0.01\nwarmup_steps=10\ntotal_steps=200\n")?;
    let full = RunConfig { checkpoint_dir: Some(dir.path().join("full")), ..cfg.clone() };
    let a = train_inproc(&full, index.clone())?.swap_remove(0);
    let mid = dir.path().join("full").join("ckpt_000050.hck");
    let resumed = RunConfig { checkpoint_dir: Some(dir.path().join("resumed")), resume: Some(mid), ..cfg };
    let b = train_inproc(&resumed, index)?.swap_remove(0);
    let tail: Vec<u64> = a.steps.iter().filter(|s| s.step > 50).map(|s| s.loss.to_bits()).collect();
    let losses = tail.len() == 50 && tail == loss_bits(&b);
    let bytes = |d: &str| std::fs::read(dir.path().join(d).join("ckpt_000100.hck"));
    let files = bytes("full")? == bytes("resumed")?;
    Ok((
        verdict(losses && files),
        format!("losses 51-100 bit-identical: {losses}, final checkpoints byte-identical: {files}"),
    ))
}

fn scheduler_values() -> Outcome {
    let peak = inverse_sqrt_lr(4000, 512, 4000)?;
    let first = inverse_sqrt_lr(1, 512, 4000)?;
    let linear = linear_warmup_decay_lr(10000, 1e-4, 10000, 1_000_000)?;
    let ok = (peak - 6.9877e-4).abs() <= 1e-8 && (first - 1.7469e-7).abs() <= 1e-11 && linear == 1e-4;
    Ok((
        verdict(ok),
        format!("inverse_sqrt(4000) = {peak:.6e}, inverse_sqrt(1) = {first:.6e}, linear peak = {linear:e}"),
    ))
}

fn gradient_check(spec: &ModelSpec, batch: &[Record], policy: WeightPolicy) -> Result<f64, Box<dyn Error>> {
    let model = build_model(spec)?;
    let params = init_parameters(&model.parameter_shapes(), DType::F64, &mut SeededRng::new(21));
    let fwd = model_forward(model.as_ref(), &params, batch, &mut ForwardCtx::plain(policy))?;
    let grads = backward(&fwd, &params)?;
    let coords = sample_coordinates(&params, 64, &mut SeededRng::new(22));
    let loss = |p: &Parameters| Ok(model_forward(model.as_ref(), p, batch, &mut ForwardCtx::plain(policy))?.loss_sum);
    Ok(max_relative_error(loss, &grads, &params, &coords, 1e-6)?)
}

fn gradient_correctness() -> Outcome {
    let classify = synthetic_classify(&DatagenConfig { n: 6, dim: 20, classes: 5, seed: 3, ..Default::default() })?;
    let seq = synthetic_sequence(&DatagenConfig {
        n: 4,
        vocab_size: 24,
        max_len: 12,
        classes: 3,
        seed: 3,
        ..Default::default()
    })?;
    let mlm = mlm_nsp(&DatagenConfig { n: 4, max_len: 16, p_select: 0.3, seed: 3, ..Default::default() })?;
    let errs = [
        gradient_check(&ModelSpec::mlp(vec![20, 64, 5]), &classify, WeightPolicy::Sentences)?,
        gradient_check(&ModelSpec::attention_classifier(24, 8, 2, 12, 3), &seq, WeightPolicy::Sentences)?,
        gradient_check(&ModelSpec::masked_token_model(mlm_vocab_size(), 8, 2, 16), &mlm, WeightPolicy::Tokens)?,
    ];
    Ok((
        verdict(errs.iter().all(|&e| e <= 1e-6)),
        format!(
            "max relative error mlp {:.2e}, attention {:.2e}, masked-token {:.2e} (64 coords each)",
            errs[0], errs[1], errs[2]
        ),
    ))
}

fn mlm_statistics() -> Outcome {
    let cfg = MaskConfig::standard(mlm_vocab_size() as u32);
    let mut rng = SeededRng::new(77);
    let words = mlm_vocab_size() as u64 - FIRST_WORD_ID as u64;
    let (mut seen, mut counts) = (0usize, [0usize; 3]);
    while seen < 100_000 {
        let sentence: Vec<u32> = (0..50).map(|_| FIRST_WORD_ID + rng.bounded(words) as u32).collect();
        // Masked, Random, Kept.
        for b in mask_tokens(&sentence, &mut rng, &cfg).branches {
            counts[b as usize] += 1;
        }
        seen += sentence.len();
    }
    let selected: usize = counts.iter().sum();
    let frac = selected as f64 / seen as f64;
    let shares: Vec<f64> = counts.iter().map(|&c| c as f64 / selected as f64).collect();
    let corpus = synthetic_corpus(64, &mut rng);
    let mut positives = 0;
    for _ in 0..20_000 {
        positives += make_nsp_pair(&corpus, &mut rng, None)?.is_next as usize;
    }
    let nsp = positives as f64 / 20_000.0;
    let ok = (0.14..=0.16).contains(&frac)
        && shares.iter().zip([0.8, 0.1, 0.1]).all(|(s, t)| (s - t).abs() <= 0.02)
        && (0.48..=0.52).contains(&nsp);
    Ok((
        verdict(ok),
        format!("selected {frac:.4}, split {:.3}/{:.3}/{:.3}, next-sentence {nsp:.4}", shares[0], shares[1], shares[2]),
    ))
}

fn hetpar(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hetpar"));
    c.args(args);
    c
}

fn free_port() -> Result<u16, Box<dyn Error>> {
    Ok(TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

fn backend_equivalence() -> Outcome {
    let dir = tempfile::tempdir()?;
    let root = dir.path().to_str().ok_or("non-UTF-8 temp dir")?;
    let data = format!("{root}/data");
    let st = hetpar(&["datagen", "--task", "synthetic-classify", "--out", &data, "--n", "1000", "--shards", "4"])
        .output()?;
    if !st.status.success() {
        return Err(format!("datagen failed: {}", String::from_utf8_lossy(&st.stderr)).into());
    }
    let shards: Vec<String> = (0..4).map(|i| format!("{data}/shard-{i:04}.hsd")).collect();
    let common = |backend: &str, out: &str| -> Vec<String> {
        let mut a: Vec<String> =
            ["train", "-q", "--backend", backend, "--world", "4", "--steps", "50", "--max-sentences", "10"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        a.extend(["--timeout".into(), "120".into(), "--checkpoint-dir".into(), format!("{root}/{out}")]);
        a.extend(["--report".into(), format!("{root}/{out}/report.txt"), "--data".into()]);
        a.extend(shards.iter().cloned());
        a
    };
    let inproc = hetpar(&[]).args(common("inproc", "inproc")).output()?;
    if !inproc.status.success() {
        return Err(format!("inproc run failed: {}", String::from_utf8_lossy(&inproc.stderr)).into());
    }
    let master = format!("127.0.0.1:{}", free_port()?);
    let mut children: Vec<Child> = Vec::new();
    for rank in 0..4 {
        let rank_s = rank.to_string();
        children.push(
            hetpar(&[])
                .args(common("tcp", "tcp"))
                .args(["--rank", &rank_s, "--master", &master])
                .stdout(Stdio::null())
                .spawn()?,
        );
    }
    let mut ok_exit = true;
    for mut c in children {
        ok_exit &= c.wait()?.success();
    }
    if !ok_exit {
        return Err("a tcp rank failed".into());
    }
    let losses = |d: &str| -> Result<Vec<(u64, u64)>, Box<dyn Error>> {
        let text = std::fs::read_to_string(format!("{root}/{d}/report.txt"))?;
        Ok(RunReport::parse_losses(&text).into_iter().map(|(s, l)| (s, l.to_bits())).collect())
    };
    let (a, b) = (losses("inproc")?, losses("tcp")?);
    let same_losses = a.len() == 50 && a == b;
    let ckpt = |d: &str| std::fs::read(PathBuf::from(format!("{root}/{d}/ckpt_000050.hck")));
    let same_ckpt = ckpt("inproc")? == ckpt("tcp")?;
    Ok((
        verdict(same_losses && same_ckpt),
        format!("50 per-step losses bit-identical: {same_losses}, final checkpoints byte-identical: {same_ckpt}"),
    ))
}

fn metrics_arithmetic() -> Outcome {
    let (s2, e2) = scaling_metrics(49.5, 34.8, 2.0)?;
    let (s8, e8) = scaling_metrics(49.5, 10.3, 8.0)?;
    let ok = (s2 - 1.42).abs() <= 0.01
        && (e2 - 0.71).abs() <= 0.01
        && (s8 - 4.81).abs() <= 0.02
        && (e8 - 0.60).abs() <= 0.01;
    Ok((
        verdict(ok),
        format!("ratio 2: speedup {s2:.3}, expansion {e2:.3}; ratio 8: speedup {s8:.3}, expansion {e8:.3}"),
    ))
}

fn throughput() -> Outcome {
    let cores = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cores < 4 {
        return Ok((Verdict::Skip, format!("needs a host with at least 4 cores, found {cores}")));
    }
    let dir = tempfile::tempdir()?;
    let recs =
        synthetic_sequence(&DatagenConfig { n: 256, vocab_size: 64, max_len: 32, classes: 4, ..Default::default() })?;
    let index = Arc::new(build_index(&write_dataset(&recs, dir.path(), 4)?)?);
    let mut cfg = RunConfig::default();
    cfg.apply_text("model=attention_classifier\nvocab_size=64\nd_model=256\nheads=4\nmax_len=32\nffn_dim=512\nnum_classes=4\nmax_sentences=8\n")?;
    cfg.timeout_secs = 600;
    let one = train_inproc(&RunConfig { max_steps: Some(16), ..cfg.clone() }, index.clone())?.swap_remove(0);
    let two = train_inproc(&RunConfig { world_size: 2, max_steps: Some(8), ..cfg }, index)?.swap_remove(0);
    let ratio = two.total_time_s / one.total_time_s;
    Ok((verdict(ratio <= 0.8), format!("world 2 / world 1 time = {ratio:.3} on {cores} cores")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("serial equivalence", serial_equivalence, true),
        ("delayed-update equivalence", delayed_update_equivalence, true),
        ("empty-batch example", empty_batch_example, true),
        ("resume determinism", resume_determinism, true),
        ("scheduler values", scheduler_values, true),
        ("gradient correctness", gradient_correctness, true),
        ("masking and next-sentence statistics", mlm_statistics, true),
        ("backend equivalence", backend_equivalence, true),
        ("metrics arithmetic", metrics_arithmetic, true),
        ("throughput sanity (informational)", throughput, false),
    ];
    let mut failed = 0;
    for (i, (name, check, required)) in criteria.into_iter().enumerate() {
        let (v, detail) = check().unwrap_or_else(|e| (Verdict::Fail, format!("error: {e}")));
        let tag = match v {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
        if v == Verdict::Fail && required {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
