//! Ranks as threads of one process meeting at a shared hub.

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::wire::Opcode;
use super::{Backend, CombineFn, CommError};

struct Round {
    op: Opcode,
    contribs: Vec<Option<Vec<u8>>>,
    result: Option<Result<Arc<Vec<u8>>, CommError>>,
    collected: usize,
}

#[derive(Default)]
struct HubState {
    joined: Vec<bool>,
    duplicate: Vec<bool>,
    rounds: HashMap<u32, Round>,
}

struct Shared {
    world: usize,
    timeout: Duration,
    state: Mutex<HubState>,
    cv: Condvar,
}

/// Rendezvous point shared by all in-process ranks of one world.
#[derive(Clone)]
pub struct InprocHub(Arc<Shared>);

impl std::fmt::Debug for InprocHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InprocHub").field("world", &self.0.world).finish()
    }
}

impl InprocHub {
    pub fn new(world: usize, timeout: Duration) -> Self {
        let state = HubState { joined: vec![false; world], duplicate: vec![false; world], rounds: HashMap::new() };
        InprocHub(Arc::new(Shared { world, timeout, state: Mutex::new(state), cv: Condvar::new() }))
    }

    pub fn world_size(&self) -> usize {
        self.0.world
    }

    fn lock(&self) -> MutexGuard<'_, HubState> {
        self.0.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Registers `rank` and blocks until every rank has joined.
    pub fn join(&self, rank: usize) -> Result<InprocBackend, CommError> {
        let shared = &self.0;
        if rank >= shared.world {
            return Err(CommError::Config(format!("rank {rank} outside world of {}", shared.world)));
        }
        let deadline = Instant::now() + shared.timeout;
        let mut st = self.lock();
        if st.joined[rank] {
            st.duplicate[rank] = true;
            shared.cv.notify_all();
            return Err(CommError::DuplicateRank(rank));
        }
        st.joined[rank] = true;
        loop {
            if st.duplicate[rank] {
                return Err(CommError::DuplicateRank(rank));
            }
            if st.joined.iter().all(|&j| j) {
                shared.cv.notify_all();
                return Ok(InprocBackend { hub: self.clone(), rank });
            }
            let now = Instant::now();
            if now >= deadline {
                let missing: Vec<usize> = (0..shared.world).filter(|&r| !st.joined[r]).collect();
                return Err(CommError::Timeout(format!("rendezvous: ranks {missing:?} never joined")));
            }
            st = shared.cv.wait_timeout(st, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
    }
}

pub struct InprocBackend {
    hub: InprocHub,
    rank: usize,
}

impl Backend for InprocBackend {
    fn name(&self) -> &'static str {
        "inproc"
    }

    fn world_size(&self) -> usize {
        self.hub.0.world
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn exchange(
        &mut self,
        op: Opcode,
        seq: u32,
        payload: Vec<u8>,
        combine: &CombineFn<'_>,
    ) -> Result<Vec<u8>, CommError> {
        let shared = &self.hub.0;
        let world = shared.world;
        let deadline = Instant::now() + shared.timeout;
        let mut st = self.hub.lock();
        let round = st.rounds.entry(seq).or_insert_with(|| Round {
            op,
            contribs: vec![None; world],
            result: None,
            collected: 0,
        });
        if round.op != op {
            let err = CommError::SequenceMismatch(format!(
                "collective {seq}: rank {} issued {op:?} but another rank issued {:?}",
                self.rank, round.op
            ));
            round.result = Some(Err(err.clone()));
            shared.cv.notify_all();
            return Err(err);
        }
        if round.contribs[self.rank].is_some() {
            return Err(CommError::SequenceMismatch(format!("rank {} reused collective {seq}", self.rank)));
        }
        round.contribs[self.rank] = Some(payload);
        if round.result.is_none() && round.contribs.iter().all(Option::is_some) {
            let parts: Vec<Vec<u8>> = round.contribs.iter_mut().map(|c| c.take().unwrap_or_default()).collect();
            round.result = Some(combine(&parts).map(Arc::new));
            shared.cv.notify_all();
        }
        loop {
            let round = st.rounds.get_mut(&seq).expect("round stays until collected by every rank");
            if let Some(result) = &round.result {
                let out = result.clone();
                round.collected += 1;
                if round.collected == world {
                    st.rounds.remove(&seq);
                }
                return out.map(|bytes| bytes.as_ref().clone());
            }
            let now = Instant::now();
            if now >= deadline {
                let missing: Vec<usize> = (0..world).filter(|&r| round.contribs[r].is_none()).collect();
                return Err(CommError::Timeout(format!("collective {seq} ({op:?}): waiting for ranks {missing:?}")));
            }
            st = shared.cv.wait_timeout(st, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
    }

    fn shutdown(&mut self) -> Result<(), CommError> {
        Ok(())
    }
}
