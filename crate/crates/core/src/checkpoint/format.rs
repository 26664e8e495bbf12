use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::CheckpointError;
use crate::codec::{fnv1a64, put_u16, put_u32, put_u64, Reader};
use crate::numerics::{ModelSpec, Parameters, WeightPolicy};
use crate::optim::{OptimConfig, OptimState, SchedulerConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCK1";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    pub weight_policy: WeightPolicy,
    pub model: ModelSpec,
    pub optimizer: OptimConfig,
    pub scheduler: SchedulerConfig,
    pub world_size: usize,
    pub update_freq: usize,
    pub params: Parameters,
    pub optim_state: OptimState,
}

/// Header fields readable without touching the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u16,
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    pub weight_policy: WeightPolicy,
    pub spec: BTreeMap<String, String>,
    pub digest: u64,
    pub file_len: u64,
}

fn spec_block(c: &Checkpoint) -> String {
    let mut pairs = c.model.to_pairs();
    pairs.extend(c.optimizer.to_pairs());
    pairs.extend(c.scheduler.to_pairs());
    pairs.push(("world_size".into(), c.world_size.to_string()));
    pairs.push(("update_freq".into(), c.update_freq.to_string()));
    pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_spec_block(text: &str) -> Result<BTreeMap<String, String>, CheckpointError> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CheckpointError::Format(format!("bad spec line '{l}'")))
        })
        .collect()
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    put_u64(&mut out, c.epoch);
    put_u64(&mut out, c.step);
    put_u64(&mut out, c.seed);
    out.push(c.weight_policy.code());
    let spec = spec_block(c);
    put_u32(&mut out, spec.len() as u32);
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&c.params.export_state());
    put_u32(&mut out, c.optim_state.moments.len() as u32);
    for (name, (m, v)) in &c.optim_state.moments {
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, m.len() as u32);
        for x in m.iter().chain(v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    put_u64(&mut out, c.optim_state.t);
    let digest = fnv1a64(&out);
    put_u64(&mut out, digest);
    out
}

/// Validates magic, version and digest; returns the body reader positioned
/// after the fixed header fields.
fn verified(bytes: &[u8]) -> Result<(CheckpointHeader, Reader<'_>), CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("missing HCK1 magic".into()));
    }
    if bytes.len() < 4 + 2 + 24 + 1 + 4 + 8 {
        return Err(CheckpointError::Digest("file too short".into()));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(footer.try_into().expect("8-byte footer"));
    let mut r = Reader::new(&body[4..]);
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let actual = fnv1a64(body);
    if actual != stored {
        return Err(CheckpointError::Digest(format!("stored {stored:016x}, computed {actual:016x}")));
    }
    let epoch = r.u64()?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let code = r.u8()?;
    let weight_policy =
        WeightPolicy::from_code(code).ok_or_else(|| CheckpointError::Format(format!("weight policy code {code}")))?;
    let spec_len = r.u32()? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len)?)
        .map_err(|_| CheckpointError::Format("spec block is not UTF-8".into()))?;
    let spec = parse_spec_block(spec_text)?;
    let header = CheckpointHeader {
        version,
        epoch,
        step,
        seed,
        weight_policy,
        spec,
        digest: stored,
        file_len: bytes.len() as u64,
    };
    Ok((header, r))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let (h, mut r) = verified(bytes)?;
    let params = Parameters::read_state(&mut r).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let blocks = r.u32()?;
    let mut moments = BTreeMap::new();
    for _ in 0..blocks {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Format("optimizer block name is not UTF-8".into()))?;
        let n = r.u32()? as usize;
        let read = |r: &mut Reader<'_>| -> Result<Vec<f64>, CheckpointError> {
            Ok(r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let m = read(&mut r)?;
        let v = read(&mut r)?;
        moments.insert(name, (m, v));
    }
    let t = r.u64()?;
    if r.remaining() != 0 {
        return Err(CheckpointError::Format(format!("{} trailing bytes", r.remaining())));
    }
    let field = |k: &str| h.spec.get(k).ok_or_else(|| CheckpointError::Format(format!("spec block lacks {k}")));
    let num = |k: &str| -> Result<usize, CheckpointError> {
        field(k)?.parse().map_err(|_| CheckpointError::Format(format!("bad {k}")))
    };
    Ok(Checkpoint {
        epoch: h.epoch,
        step: h.step,
        seed: h.seed,
        weight_policy: h.weight_policy,
        model: ModelSpec::from_pairs(&h.spec).map_err(|e| CheckpointError::Format(e.to_string()))?,
        optimizer: OptimConfig::from_pairs(&h.spec).map_err(|e| CheckpointError::Format(e.to_string()))?,
        scheduler: SchedulerConfig::from_pairs(&h.spec).map_err(|e| CheckpointError::Format(e.to_string()))?,
        world_size: num("world_size")?,
        update_freq: num("update_freq")?,
        params,
        optim_state: OptimState { t, moments },
    })
}

/// Reads only the header and spec block, after verifying the digest.
pub fn read_checkpoint_header(path: impl AsRef<Path>) -> Result<CheckpointHeader, CheckpointError> {
    let bytes = fs::read(path)?;
    Ok(verified(&bytes)?.0)
}

/// Writes atomically (temp file, then rename). Only the master may save.
pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>, is_master: bool) -> Result<(), CheckpointError> {
    if !is_master {
        return Err(CheckpointError::NotMaster);
    }
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(c))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}
