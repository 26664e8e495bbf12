use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hetpar::data::{datagen_registry, write_dataset, DatagenConfig};

use crate::UsageError;

#[derive(Args, Debug)]
pub struct DatagenArgs {
    /// synthetic-classify, synthetic-sequence or mlm-nsp.
    #[arg(long)]
    pub task: String,
    /// Output directory for `shard-XXXX.hsd` files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Feature dimension (synthetic-classify).
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Corpus documents (mlm-nsp).
    #[arg(long, default_value_t = 64)]
    pub docs: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    /// Vocabulary size (synthetic-sequence).
    #[arg(long, default_value_t = 32)]
    pub vocab_size: usize,
    /// Masking probability (mlm-nsp).
    #[arg(long, default_value_t = 0.15)]
    pub p_select: f64,
    #[arg(long, default_value_t = 4)]
    pub shards: usize,
}

pub fn run(a: DatagenArgs) -> Result<()> {
    let factory = *datagen_registry().get(&a.task).map_err(|e| UsageError(e.to_string()))?;
    let cfg = DatagenConfig {
        n: a.n,
        dim: a.dim,
        classes: a.classes,
        seed: a.seed,
        docs: a.docs,
        max_len: a.max_len,
        vocab_size: a.vocab_size,
        p_select: a.p_select,
    };
    let records = factory(&cfg)?;
    let paths = write_dataset(&records, &a.out, a.shards)?;
    println!("{} records in {} shards", records.len(), paths.len());
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}
