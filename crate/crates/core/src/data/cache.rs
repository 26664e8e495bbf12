//! Byte-block cache over shard files with pluggable eviction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::registry::Registry;

/// A block of `block_bytes` bytes of one shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockKey {
    pub shard: usize,
    pub block: u64,
}

/// Chooses which resident block to drop.
pub trait EvictionPolicy: Send {
    fn on_insert(&mut self, key: BlockKey);
    fn on_hit(&mut self, key: BlockKey);
    /// Removes and returns the victim, if any block is tracked.
    fn evict(&mut self) -> Option<BlockKey>;
}

/// Least recently used.
#[derive(Default)]
pub struct Lru {
    tick: u64,
    by_tick: BTreeMap<u64, BlockKey>,
    last: HashMap<BlockKey, u64>,
}

impl Lru {
    fn touch(&mut self, key: BlockKey) {
        self.tick += 1;
        if let Some(old) = self.last.insert(key, self.tick) {
            self.by_tick.remove(&old);
        }
        self.by_tick.insert(self.tick, key);
    }
}

impl EvictionPolicy for Lru {
    fn on_insert(&mut self, key: BlockKey) {
        self.touch(key);
    }

    fn on_hit(&mut self, key: BlockKey) {
        self.touch(key);
    }

    fn evict(&mut self) -> Option<BlockKey> {
        let (_, key) = self.by_tick.pop_first()?;
        self.last.remove(&key);
        Some(key)
    }
}

/// Least frequently used; ties go to the least recently used.
#[derive(Default)]
pub struct Lfu {
    tick: u64,
    order: BTreeSet<(u64, u64, BlockKey)>,
    state: HashMap<BlockKey, (u64, u64)>,
}

impl EvictionPolicy for Lfu {
    fn on_insert(&mut self, key: BlockKey) {
        self.tick += 1;
        self.state.insert(key, (1, self.tick));
        self.order.insert((1, self.tick, key));
    }

    fn on_hit(&mut self, key: BlockKey) {
        self.tick += 1;
        if let Some((count, tick)) = self.state.get_mut(&key) {
            self.order.remove(&(*count, *tick, key));
            *count += 1;
            *tick = self.tick;
            self.order.insert((*count, *tick, key));
        }
    }

    fn evict(&mut self) -> Option<BlockKey> {
        let (_, _, key) = self.order.pop_first()?;
        self.state.remove(&key);
        Some(key)
    }
}

pub type PolicyFactory = fn() -> Box<dyn EvictionPolicy>;

pub fn cache_policy_registry() -> Registry<PolicyFactory> {
    Registry::<PolicyFactory>::new("cache policy")
        .with("lru", || Box::new(Lru::default()))
        .with("lfu", || Box::new(Lfu::default()))
}

struct Inner {
    blocks: HashMap<BlockKey, Arc<Vec<u8>>>,
    policy: Box<dyn EvictionPolicy>,
    used: usize,
}

/// Thread-safe cache of shard blocks bounded by total bytes.
pub struct BlockCache {
    inner: Mutex<Inner>,
    capacity: usize,
    block_bytes: u64,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl BlockCache {
    pub fn new(capacity_bytes: usize, block_bytes: u64, policy: Box<dyn EvictionPolicy>) -> Self {
        Self {
            inner: Mutex::new(Inner { blocks: HashMap::new(), policy, used: 0 }),
            capacity: capacity_bytes,
            block_bytes: block_bytes.max(1),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn block_bytes(&self) -> u64 {
        self.block_bytes
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn resident_bytes(&self) -> usize {
        self.inner.lock().expect("cache lock").used
    }

    /// Returns the cached block or loads it with `load` (outside the lock).
    pub fn get_or_load<E>(&self, key: BlockKey, load: impl FnOnce() -> Result<Vec<u8>, E>) -> Result<Arc<Vec<u8>>, E> {
        {
            let mut inner = self.inner.lock().expect("cache lock");
            if let Some(block) = inner.blocks.get(&key).cloned() {
                inner.policy.on_hit(key);
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(block);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let block = Arc::new(load()?);
        if block.len() > self.capacity {
            return Ok(block);
        }
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.blocks.contains_key(&key) {
            return Ok(block);
        }
        while inner.used + block.len() > self.capacity {
            let Some(victim) = inner.policy.evict() else { break };
            if let Some(old) = inner.blocks.remove(&victim) {
                inner.used -= old.len();
            }
        }
        inner.used += block.len();
        inner.blocks.insert(key, Arc::clone(&block));
        inner.policy.on_insert(key);
        Ok(block)
    }
}
