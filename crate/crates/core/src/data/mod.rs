//! Sharded datasets, global indexing, epoch batching and data generators.

mod batching;
mod cache;
mod index;
mod loader;
pub mod mlm;
mod record;
mod shard;
pub mod subword;
mod synth;

use thiserror::Error;

use crate::codec::Truncated;

pub use batching::{build_epoch_batches, partition_for_rank, rounds_per_epoch, BatchCaps, BatchPlan, RankBatch};
pub use cache::{cache_policy_registry, BlockCache, BlockKey, EvictionPolicy, Lfu, Lru, PolicyFactory};
pub use index::{build_index, DatasetIndex};
pub use loader::{Batch, Loader, LoaderConfig};
pub use mlm::MaskedInstance;
pub use record::{Field, FieldData, FieldSpec, FieldType, Record};
pub use shard::{encode_shard, write_shard, write_shard_with_schema, Shard, ShardReader, SHARD_MAGIC, SHARD_VERSION};
pub use subword::{greedy_subword_tokenize, SubwordVocab};
pub use synth::{
    corpus_vocab, datagen_registry, mlm_nsp, mlm_vocab_size, synthetic_classify, synthetic_corpus, synthetic_sequence,
    write_dataset, DatagenConfig, Generator,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized format: {0}")]
    Format(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: u64, len: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing field '{0}'")]
    MissingField(String),
    #[error("corpus too small: {0}")]
    Corpus(String),
}

impl From<Truncated> for DataError {
    fn from(t: Truncated) -> Self {
        DataError::Format(t.to_string())
    }
}
