use super::wire::Opcode;
use super::{backend_registry, Backend, CommConfig, CommError};
use crate::codec::{f64s_to_le, le_to_f64s, put_u32, Reader};

/// One rank's handle on the world. Collectives are blocking and must be
/// issued in the same order on every rank.
pub struct ProcessGroup {
    backend: Box<dyn Backend>,
    seq: u32,
}

impl std::fmt::Debug for ProcessGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessGroup")
            .field("backend", &self.backend.name())
            .field("world_size", &self.world_size())
            .field("rank", &self.rank())
            .field("seq", &self.seq)
            .finish()
    }
}

/// Joins the world described by `config`; returns once every rank has joined.
pub fn init_process_group(config: &CommConfig) -> Result<ProcessGroup, CommError> {
    if config.world_size == 0 || config.world_size > u16::MAX as usize {
        return Err(CommError::Config(format!("world size {} out of range", config.world_size)));
    }
    if config.rank >= config.world_size {
        return Err(CommError::Config(format!("rank {} outside world of {}", config.rank, config.world_size)));
    }
    let factory = *backend_registry().get(&config.backend).map_err(|e| CommError::Config(e.to_string()))?;
    let backend = factory(config)?;
    log::debug!("rank {}/{} joined via {}", config.rank, config.world_size, backend.name());
    Ok(ProcessGroup::from_backend(backend))
}

fn encode_parts(parts: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, parts.len() as u32);
    for p in parts {
        put_u32(&mut out, p.len() as u32);
        out.extend_from_slice(p);
    }
    out
}

fn decode_parts(bytes: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    (0..n)
        .map(|_| {
            let len = r.u32()? as usize;
            Ok(r.take(len)?.to_vec())
        })
        .collect()
}

fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>, CommError> {
    le_to_f64s(bytes).ok_or_else(|| CommError::Protocol("payload is not a whole number of f64 values".into()))
}

/// Sum in rank order starting from `init`, or from zeros when `init` is empty.
fn fold_sum(init: &[f64], parts: &[Vec<u8>]) -> Result<Vec<u8>, CommError> {
    let vectors = parts.iter().map(|p| decode_f64s(p)).collect::<Result<Vec<_>, _>>()?;
    let len = vectors[0].len();
    if let Some(r) = vectors.iter().position(|v| v.len() != len) {
        return Err(CommError::LengthMismatch(format!("rank 0 sent {len} values, rank {r} sent {}", vectors[r].len())));
    }
    if !init.is_empty() && init.len() != len {
        return Err(CommError::LengthMismatch(format!("fold starts from {} values, ranks sent {len}", init.len())));
    }
    let mut acc = if init.is_empty() { vec![0.0; len] } else { init.to_vec() };
    for v in &vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    Ok(f64s_to_le(&acc))
}

impl ProcessGroup {
    pub fn from_backend(backend: Box<dyn Backend>) -> Self {
        Self { backend, seq: 0 }
    }

    pub fn world_size(&self) -> usize {
        self.backend.world_size()
    }

    pub fn rank(&self) -> usize {
        self.backend.rank()
    }

    pub fn is_master(&self) -> bool {
        self.rank() == 0
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    /// Number of collectives issued so far.
    pub fn sequence(&self) -> u32 {
        self.seq
    }

    fn round(&mut self, op: Opcode, payload: Vec<u8>, combine: &super::CombineFn<'_>) -> Result<Vec<u8>, CommError> {
        self.seq += 1;
        self.backend.exchange(op, self.seq, payload, combine)
    }

    /// Every rank returns `root`'s bytes; other ranks' payloads are ignored.
    pub fn broadcast(&mut self, payload: &[u8], root: usize) -> Result<Vec<u8>, CommError> {
        if root >= self.world_size() {
            return Err(CommError::Config(format!("broadcast root {root} outside world of {}", self.world_size())));
        }
        let mine = if self.rank() == root { payload.to_vec() } else { Vec::new() };
        self.round(Opcode::Broadcast, mine, &move |parts: &[Vec<u8>]| Ok(parts[root].clone()))
    }

    /// Elementwise sum over ranks, folded in rank order from zeros.
    pub fn all_reduce_sum(&mut self, values: &[f64]) -> Result<Vec<f64>, CommError> {
        self.all_reduce_sum_onto(&[], values)
    }

    /// `init + v_0 + v_1 + …`, added one rank at a time in rank order. Every
    /// rank must pass the same `init`. Folding a running total this way gives
    /// the same bits however the contributions are split across ranks and calls.
    pub fn all_reduce_sum_onto(&mut self, init: &[f64], values: &[f64]) -> Result<Vec<f64>, CommError> {
        let out = self.round(Opcode::ReduceContrib, f64s_to_le(values), &|parts: &[Vec<u8>]| fold_sum(init, parts))?;
        decode_f64s(&out)
    }

    /// Master receives one value per rank in rank order; other ranks get nothing.
    pub fn gather_scalars(&mut self, value: f64) -> Result<Vec<f64>, CommError> {
        let parts = self.gather_bytes(&value.to_le_bytes())?;
        parts
            .iter()
            .map(|p| {
                <[u8; 8]>::try_from(p.as_slice())
                    .map(f64::from_le_bytes)
                    .map_err(|_| CommError::Protocol("gathered scalar is not 8 bytes".into()))
            })
            .collect()
    }

    /// Master receives every rank's bytes in rank order; other ranks get nothing.
    pub fn gather_bytes(&mut self, payload: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
        let out = self.round(Opcode::Gather, payload.to_vec(), &|parts: &[Vec<u8>]| Ok(encode_parts(parts)))?;
        if self.is_master() {
            decode_parts(&out)
        } else {
            Ok(Vec::new())
        }
    }

    /// Every rank sees every rank's bytes in rank order.
    pub fn all_gather_bytes(&mut self, payload: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
        let out = self.round(Opcode::Gather, payload.to_vec(), &|parts: &[Vec<u8>]| Ok(encode_parts(parts)))?;
        decode_parts(&out)
    }

    pub fn barrier(&mut self) -> Result<(), CommError> {
        self.round(Opcode::Barrier, Vec::new(), &|_: &[Vec<u8>]| Ok(Vec::new())).map(|_| ())
    }

    /// Final synchronized round, then releases the transport.
    pub fn shutdown(mut self) -> Result<(), CommError> {
        self.round(Opcode::Bye, Vec::new(), &|_: &[Vec<u8>]| Ok(Vec::new()))?;
        self.backend.shutdown()
    }
}
