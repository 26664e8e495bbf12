//! Per-epoch batch construction and round-robin assignment of batches to ranks.

use super::DataError;
use crate::checkpoint::derived_rng;
use crate::codec::{fnv1a64, put_u32, put_u64};

/// Caps a batch must respect; `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchCaps {
    pub max_sentences: Option<usize>,
    pub max_tokens: Option<u64>,
}

/// The batches of one epoch, each a list of global instance indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch: u64,
    pub batches: Vec<Vec<u64>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_u64(&mut out, self.epoch);
        put_u32(&mut out, self.batches.len() as u32);
        for b in &self.batches {
            put_u32(&mut out, b.len() as u32);
            b.iter().for_each(|&g| put_u64(&mut out, g));
        }
        out
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

/// Shuffles all instances with the generator seeded `seed + epoch`, then packs
/// them greedily in shuffled order: a batch closes when the next instance
/// would exceed either cap.
pub fn build_epoch_batches(lengths: &[u32], caps: BatchCaps, seed: u64, epoch: u64) -> Result<BatchPlan, DataError> {
    if caps.max_sentences == Some(0) {
        return Err(DataError::Config("max_sentences must be at least 1".into()));
    }
    if let Some(max_tokens) = caps.max_tokens {
        if let Some((i, &len)) = lengths.iter().enumerate().find(|(_, &l)| l as u64 > max_tokens) {
            return Err(DataError::Config(format!("instance {i} has {len} tokens, more than max_tokens {max_tokens}")));
        }
    }
    let mut order: Vec<u64> = (0..lengths.len() as u64).collect();
    derived_rng(seed, epoch).shuffle(&mut order);

    let mut batches = Vec::new();
    let mut current: Vec<u64> = Vec::new();
    let mut tokens = 0u64;
    for g in order {
        let len = lengths[g as usize] as u64;
        let over_sentences = caps.max_sentences.is_some_and(|m| current.len() + 1 > m);
        let over_tokens = caps.max_tokens.is_some_and(|m| tokens + len > m);
        if !current.is_empty() && (over_sentences || over_tokens) {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(g);
        tokens += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(BatchPlan { epoch, batches })
}

/// One lockstep round of a rank: a real batch, or a dummy standing in for one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankBatch {
    pub round: usize,
    /// Index into [`BatchPlan::batches`]; for a dummy, the batch whose data
    /// feeds the (zero-weight) forward pass.
    pub batch: usize,
    pub dummy: bool,
}

/// Number of lockstep rounds every rank runs in an epoch.
pub fn rounds_per_epoch(batches: usize, world_size: usize) -> usize {
    batches.div_ceil(world_size)
}

/// Batches of `rank`: indices `≡ rank (mod world_size)`, padded with dummies
/// so every rank runs the same number of rounds.
///
/// A dummy reuses the rank's first real batch. A rank that has no real batch
/// in the whole epoch borrows batch 0, which keeps a world larger than the
/// batch count usable.
pub fn partition_for_rank(plan: &BatchPlan, world_size: usize, rank: usize) -> Result<Vec<RankBatch>, DataError> {
    if world_size == 0 || rank >= world_size {
        return Err(DataError::Config(format!("rank {rank} outside world of {world_size}")));
    }
    if plan.is_empty() {
        return Err(DataError::Config("epoch has no batches; every rank would be a dummy".into()));
    }
    let first_real = if rank < plan.len() { rank } else { 0 };
    Ok((0..rounds_per_epoch(plan.len(), world_size))
        .map(|round| {
            let idx = round * world_size + rank;
            if idx < plan.len() {
                RankBatch { round, batch: idx, dummy: false }
            } else {
                RankBatch { round, batch: first_real, dummy: true }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(plan: &BatchPlan) -> Vec<usize> {
        plan.batches.iter().map(Vec::len).collect()
    }

    #[test]
    fn five_instances_two_per_batch() {
        let caps = BatchCaps { max_sentences: Some(2), max_tokens: None };
        let plan = build_epoch_batches(&[1; 5], caps, 1, 0).unwrap();
        assert_eq!(sizes(&plan), vec![2, 2, 1]);
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let caps = BatchCaps { max_sentences: Some(3), max_tokens: Some(40) };
        let lengths: Vec<u32> = (0..50).map(|i| (i % 13 + 1) as u32).collect();
        let a = build_epoch_batches(&lengths, caps, 9, 4).unwrap();
        let b = build_epoch_batches(&lengths, caps, 9, 4).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = build_epoch_batches(&lengths, caps, 9, 5).unwrap();
        assert_ne!(a.digest(), c.digest());
        // seed S, epoch N uses the same stream as seed S+1, epoch N-1
        let d = build_epoch_batches(&lengths, caps, 10, 3).unwrap();
        assert_eq!(a.batches, d.batches);
    }

    #[test]
    fn token_cap_packing() {
        let caps = BatchCaps { max_sentences: Some(10), max_tokens: Some(10) };
        let plan = build_epoch_batches(&[5, 5, 5], caps, 3, 0).unwrap();
        assert_eq!(sizes(&plan), vec![2, 1]);
    }

    #[test]
    fn oversized_instance_rejected() {
        let caps = BatchCaps { max_sentences: None, max_tokens: Some(4) };
        assert!(matches!(build_epoch_batches(&[3, 5], caps, 0, 0), Err(DataError::Config(_))));
    }

    #[test]
    fn three_batches_world_four() {
        let plan = BatchPlan { epoch: 0, batches: vec![vec![0, 1], vec![2, 3], vec![4]] };
        for r in 0..3 {
            assert_eq!(partition_for_rank(&plan, 4, r).unwrap(), vec![RankBatch { round: 0, batch: r, dummy: false }]);
        }
        let d = partition_for_rank(&plan, 4, 3).unwrap();
        assert_eq!(d, vec![RankBatch { round: 0, batch: 0, dummy: true }]);
    }

    #[test]
    fn single_rank_gets_everything() {
        let plan = BatchPlan { epoch: 0, batches: (0..5).map(|i| vec![i]).collect() };
        let mine = partition_for_rank(&plan, 1, 0).unwrap();
        assert_eq!(mine.len(), 5);
        assert!(mine.iter().all(|b| !b.dummy));
    }

    #[test]
    fn ten_batches_world_four() {
        let plan = BatchPlan { epoch: 0, batches: (0..10).map(|i| vec![i]).collect() };
        let real: Vec<usize> =
            (0..4).map(|r| partition_for_rank(&plan, 4, r).unwrap().iter().filter(|b| !b.dummy).count()).collect();
        assert_eq!(real, vec![3, 3, 2, 2]);
        for r in 2..4 {
            let mine = partition_for_rank(&plan, 4, r).unwrap();
            assert_eq!(mine.len(), 3);
            assert_eq!(mine[2], RankBatch { round: 2, batch: r, dummy: true });
        }
    }

    #[test]
    fn empty_plan_is_unsupported() {
        let plan = BatchPlan { epoch: 0, batches: vec![] };
        assert!(partition_for_rank(&plan, 2, 0).is_err());
        let plan = BatchPlan { epoch: 0, batches: vec![vec![0]] };
        assert!(partition_for_rank(&plan, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_complete(world in 1usize..=64, batches in 1usize..=1000) {
            let plan = BatchPlan { epoch: 0, batches: (0..batches as u64).map(|i| vec![i]).collect() };
            let mut seen = vec![0u32; batches];
            let rounds = rounds_per_epoch(batches, world);
            for r in 0..world {
                let mine = partition_for_rank(&plan, world, r).unwrap();
                prop_assert_eq!(mine.len(), rounds);
                for b in mine.iter().filter(|b| !b.dummy) {
                    seen[b.batch] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn caps_hold_and_every_instance_appears_once(
            lengths in proptest::collection::vec(1u32..20, 0..300),
            max_sentences in 1usize..12,
            max_tokens in 20u64..100,
            seed in any::<u64>(),
        ) {
            let caps = BatchCaps { max_sentences: Some(max_sentences), max_tokens: Some(max_tokens) };
            let plan = build_epoch_batches(&lengths, caps, seed, 0).unwrap();
            let mut seen = vec![false; lengths.len()];
            for b in &plan.batches {
                prop_assert!(!b.is_empty() && b.len() <= max_sentences);
                prop_assert!(b.iter().map(|&g| lengths[g as usize] as u64).sum::<u64>() <= max_tokens);
                for &g in b {
                    prop_assert!(!seen[g as usize]);
                    seen[g as usize] = true;
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
