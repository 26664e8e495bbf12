use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use hetpar::checkpoint::{load_checkpoint, read_checkpoint_header, CHECKPOINT_MAGIC};
use hetpar::data::{FieldData, Shard, SHARD_MAGIC};
use hetpar::numerics::{build_model, ModelSpec};

use crate::UsageError;

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// Also decode payloads: every record, or every parameter tensor.
    #[arg(long)]
    pub full: bool,
}

pub fn run(a: InspectArgs) -> Result<()> {
    let mut magic = [0u8; 4];
    let n = std::fs::File::open(&a.path)
        .and_then(|mut f| f.read(&mut magic))
        .with_context(|| format!("opening {}", a.path.display()))?;
    if n == 4 && &magic == SHARD_MAGIC {
        shard(&a.path, a.full)
    } else if n == 4 && &magic == CHECKPOINT_MAGIC {
        checkpoint(&a.path, a.full)
    } else {
        Err(UsageError(format!("unrecognized format: {} is neither a shard nor a checkpoint", a.path.display())).into())
    }
}

fn shard(path: &Path, full: bool) -> Result<()> {
    let s = Shard::open(path)?;
    println!("shard {}", path.display());
    println!("bytes {}", s.file_len());
    println!("records {}", s.len());
    for f in s.schema() {
        println!("field {} {} rank {}", f.name, f.ty.name(), f.rank);
    }
    let lens = s.token_lens();
    if let (Some(lo), Some(hi)) = (lens.iter().min(), lens.iter().max()) {
        let total: u64 = lens.iter().map(|&x| x as u64).sum();
        println!("token_len min {lo} max {hi} total {total}");
    }
    if full {
        let bytes = std::fs::read(path)?;
        println!("digest {:016x}", hetpar::codec::fnv1a64(&bytes));
        for i in 0..s.len() {
            let r = s.read_record(i)?;
            let fields: Vec<String> = r.fields.iter().map(|f| format!("{}={}", f.name, preview(&f.data))).collect();
            println!("record {i} token_len {} {}", r.token_len, fields.join(" "));
        }
    }
    Ok(())
}

fn preview(d: &FieldData) -> String {
    const MAX: usize = 8;
    let (items, n): (Vec<String>, usize) = match d {
        FieldData::F32(v) => (v.iter().take(MAX).map(|x| format!("{x:.4}")).collect(), v.len()),
        FieldData::F64(v) => (v.iter().take(MAX).map(|x| format!("{x:.4}")).collect(), v.len()),
        FieldData::I64(v) => (v.iter().take(MAX).map(|x| x.to_string()).collect(), v.len()),
    };
    let more = if n > MAX { ",…" } else { "" };
    format!("[{}{more}]", items.join(","))
}

fn checkpoint(path: &Path, full: bool) -> Result<()> {
    let h = read_checkpoint_header(path)?;
    println!("checkpoint {}", path.display());
    println!("version {}", h.version);
    println!("bytes {}", h.file_len);
    println!("epoch {}", h.epoch);
    println!("step {}", h.step);
    println!("seed {}", h.seed);
    println!("weight_policy {}", h.weight_policy.name());
    println!("digest {:016x}", h.digest);
    for (k, v) in &h.spec {
        println!("spec {k}={v}");
    }
    let spec = ModelSpec::from_pairs(&h.spec)?;
    for p in build_model(&spec)?.parameter_shapes() {
        let shape: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        println!("param {} [{}]", p.name, shape.join("x"));
    }
    if full {
        let c = load_checkpoint(path)?;
        println!("param_digest {:016x}", c.params.digest());
        for (name, t) in c.params.iter() {
            let norm = t.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            println!("tensor {name} {} l2 {norm:.6e}", t.dtype().name());
        }
        println!("optimizer_t {}", c.optim_state.t);
        for (name, (m, _)) in &c.optim_state.moments {
            println!("moments {name} {}", m.len());
        }
    }
    Ok(())
}
