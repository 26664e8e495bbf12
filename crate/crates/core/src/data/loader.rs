//! Per-rank batch loader with optional background prefetch and block cache.

use std::fs::File;
use std::io::{Seek, SeekFrom};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::batching::{BatchPlan, RankBatch};
use super::cache::{cache_policy_registry, BlockCache, BlockKey};
use super::index::DatasetIndex;
use super::record::Record;
use super::shard::read_vec;
use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoaderConfig {
    /// Batches kept ready by the background thread; 0 loads on demand.
    pub prefetch_depth: usize,
    /// Total cache capacity; 0 disables the cache.
    pub cache_bytes: usize,
    pub block_bytes: u64,
    pub cache_policy: String,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self { prefetch_depth: 2, cache_bytes: 0, block_bytes: 64 * 1024, cache_policy: "lru".into() }
    }
}

/// Records of one round, ready for the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub round: usize,
    pub batch: usize,
    pub dummy: bool,
    pub records: Vec<Record>,
}

/// Reads records for batches. Owns the file handles it opens, so it must be
/// created (or moved) on the thread that uses it.
struct Fetcher {
    index: Arc<DatasetIndex>,
    batches: Arc<Vec<Vec<u64>>>,
    cache: Option<Arc<BlockCache>>,
    files: Vec<Option<File>>,
}

impl Fetcher {
    fn file(&mut self, shard: usize) -> Result<&mut File, DataError> {
        match &mut self.files[shard] {
            Some(f) => Ok(f),
            slot => Ok(slot.insert(File::open(self.index.shards()[shard].path())?)),
        }
    }

    fn read_range(&mut self, shard: usize, start: u64, end: u64) -> Result<Vec<u8>, DataError> {
        let file = self.file(shard)?;
        file.seek(SeekFrom::Start(start))?;
        read_vec(file, (end - start) as usize)
    }

    fn read_record(&mut self, g: u64) -> Result<Record, DataError> {
        let (s, off) = self.index.locate(g)?;
        let shard = Arc::clone(&self.index.shards()[s]);
        let (start, end) = shard.record_range(off)?;
        let bytes = match self.cache.clone() {
            None => self.read_range(s, start, end)?,
            Some(cache) => {
                let bs = cache.block_bytes();
                let mut out = Vec::with_capacity((end - start) as usize);
                if end > start {
                    for block in start / bs..=(end - 1) / bs {
                        let lo = block * bs;
                        let hi = ((block + 1) * bs).min(shard.file_len());
                        let data = cache.get_or_load(BlockKey { shard: s, block }, || self.read_range(s, lo, hi))?;
                        let from = start.max(lo) - lo;
                        let to = end.min(hi) - lo;
                        out.extend_from_slice(&data[from as usize..to as usize]);
                    }
                }
                out
            }
        };
        shard.decode_record(&bytes, shard.token_lens()[off])
    }

    fn fetch(&mut self, rb: RankBatch) -> Result<Batch, DataError> {
        let ids = self
            .batches
            .get(rb.batch)
            .ok_or(DataError::OutOfRange { index: rb.batch as u64, len: self.batches.len() as u64 })?
            .clone();
        let records = ids.iter().map(|&g| self.read_record(g)).collect::<Result<Vec<_>, _>>()?;
        Ok(Batch { round: rb.round, batch: rb.batch, dummy: rb.dummy, records })
    }
}

enum Mode {
    Direct { fetcher: Fetcher, pending: std::vec::IntoIter<RankBatch> },
    Prefetch { rx: Option<Receiver<Result<Batch, DataError>>>, worker: Option<JoinHandle<()>> },
}

/// Iterates a rank's assigned batches in order. `next_batch` returns
/// `Ok(None)` at the end of the epoch.
pub struct Loader {
    mode: Mode,
    cache: Option<Arc<BlockCache>>,
}

impl Loader {
    pub fn new(
        index: Arc<DatasetIndex>,
        plan: &BatchPlan,
        assignments: Vec<RankBatch>,
        config: &LoaderConfig,
    ) -> Result<Self, DataError> {
        let cache = if config.cache_bytes > 0 {
            let factory =
                *cache_policy_registry().get(&config.cache_policy).map_err(|e| DataError::Config(e.to_string()))?;
            Some(Arc::new(BlockCache::new(config.cache_bytes, config.block_bytes, factory())))
        } else {
            None
        };
        let fetcher = Fetcher {
            files: (0..index.shards().len()).map(|_| None).collect(),
            index,
            batches: Arc::new(plan.batches.clone()),
            cache: cache.clone(),
        };
        let mode = if config.prefetch_depth == 0 {
            Mode::Direct { fetcher, pending: assignments.into_iter() }
        } else {
            let (tx, rx) = sync_channel(config.prefetch_depth);
            let worker = std::thread::Builder::new().name("prefetch".into()).spawn(move || {
                let mut fetcher = fetcher;
                for rb in assignments {
                    let item = fetcher.fetch(rb);
                    let failed = item.is_err();
                    if tx.send(item).is_err() || failed {
                        break;
                    }
                }
            })?;
            Mode::Prefetch { rx: Some(rx), worker: Some(worker) }
        };
        Ok(Self { mode, cache })
    }

    pub fn next_batch(&mut self) -> Result<Option<Batch>, DataError> {
        match &mut self.mode {
            Mode::Direct { fetcher, pending } => pending.next().map(|rb| fetcher.fetch(rb)).transpose(),
            Mode::Prefetch { rx, .. } => match rx.as_ref().map(|r| r.recv()) {
                Some(Ok(item)) => item.map(Some),
                _ => Ok(None),
            },
        }
    }

    pub fn cache(&self) -> Option<&BlockCache> {
        self.cache.as_deref()
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        if let Mode::Prefetch { rx, worker } = &mut self.mode {
            drop(rx.take());
            if let Some(w) = worker.take() {
                let _ = w.join();
            }
        }
    }
}
