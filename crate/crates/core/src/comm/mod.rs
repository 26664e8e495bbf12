//! Process groups and collective operations over interchangeable backends.

mod group;
mod inproc;
mod tcp;
mod wire;

use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::registry::Registry;

pub use group::{init_process_group, ProcessGroup};
pub use inproc::{InprocBackend, InprocHub};
pub use tcp::{bind_master, TcpBackend};
pub use wire::{read_frame, write_frame, Frame, Opcode, PROTOCOL_VERSION};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("rank {0} was claimed by more than one participant")]
    DuplicateRank(usize),
    #[error("handshake refused: {0}")]
    Handshake(String),
    #[error("collective sequence mismatch: {0}")]
    SequenceMismatch(String),
    #[error("all_reduce length mismatch: {0}")]
    LengthMismatch(String),
    #[error("peer disconnected: {0}")]
    Disconnected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote failure: {0}")]
    Remote(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for CommError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => CommError::Timeout(e.to_string()),
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe => CommError::Disconnected(e.to_string()),
            _ => CommError::Io(e.to_string()),
        }
    }
}

impl From<crate::codec::Truncated> for CommError {
    fn from(e: crate::codec::Truncated) -> Self {
        CommError::Protocol(e.to_string())
    }
}

impl CommError {
    pub(crate) fn with_context(self, ctx: &str) -> Self {
        match self {
            CommError::Timeout(m) => CommError::Timeout(format!("{ctx}: {m}")),
            CommError::Disconnected(m) => CommError::Disconnected(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

/// Combines rank-ordered contributions into the reply every rank receives.
pub type CombineFn<'a> = dyn Fn(&[Vec<u8>]) -> Result<Vec<u8>, CommError> + 'a;

/// Transport for one rank. Every collective is a single round: each rank
/// contributes a payload, the contributions are combined in rank order, and
/// all ranks receive the combined bytes.
pub trait Backend: Send {
    fn name(&self) -> &'static str;
    fn world_size(&self) -> usize;
    fn rank(&self) -> usize;
    fn exchange(
        &mut self,
        op: Opcode,
        seq: u32,
        payload: Vec<u8>,
        combine: &CombineFn<'_>,
    ) -> Result<Vec<u8>, CommError>;
    fn shutdown(&mut self) -> Result<(), CommError>;
}

#[derive(Debug, Clone)]
pub struct CommConfig {
    pub backend: String,
    pub world_size: usize,
    pub rank: usize,
    /// `host:port` of rank 0 (tcp).
    pub master: Option<String>,
    pub timeout: Duration,
    /// Shared rendezvous for in-process worlds larger than one.
    pub hub: Option<InprocHub>,
}

impl CommConfig {
    pub fn inproc(hub: &InprocHub, rank: usize) -> Self {
        Self {
            backend: "inproc".into(),
            world_size: hub.world_size(),
            rank,
            master: None,
            timeout: DEFAULT_TIMEOUT,
            hub: Some(hub.clone()),
        }
    }

    pub fn single() -> Self {
        Self { backend: "inproc".into(), world_size: 1, rank: 0, master: None, timeout: DEFAULT_TIMEOUT, hub: None }
    }

    pub fn tcp(master: &str, world_size: usize, rank: usize) -> Self {
        Self {
            backend: "tcp".into(),
            world_size,
            rank,
            master: Some(master.to_string()),
            timeout: DEFAULT_TIMEOUT,
            hub: None,
        }
    }
}

pub type BackendFactory = fn(&CommConfig) -> Result<Box<dyn Backend>, CommError>;

pub fn backend_registry() -> Registry<BackendFactory> {
    Registry::<BackendFactory>::new("backend")
        .with("inproc", |c| {
            let hub = match &c.hub {
                Some(h) if h.world_size() == c.world_size => h.clone(),
                Some(h) => {
                    return Err(CommError::Config(format!(
                        "hub is for world {} but config says {}",
                        h.world_size(),
                        c.world_size
                    )))
                }
                None if c.world_size == 1 => InprocHub::new(1, c.timeout),
                None => return Err(CommError::Config("inproc world > 1 needs a shared hub".into())),
            };
            Ok(Box::new(hub.join(c.rank)?))
        })
        .with("tcp", |c| {
            let master = c.master.as_deref().ok_or_else(|| CommError::Config("tcp backend needs --master".into()))?;
            if c.rank == 0 {
                let listener = bind_master(master)?;
                Ok(Box::new(TcpBackend::accept_peers(listener, c.world_size, c.timeout)?))
            } else {
                Ok(Box::new(TcpBackend::connect(master, c.world_size, c.rank, c.timeout)?))
            }
        })
}
