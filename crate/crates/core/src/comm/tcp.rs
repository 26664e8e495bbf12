//! Ranks as OS processes connected in a star around rank 0.

use std::io::{ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{hello_payload, parse_hello, read_frame, write_frame, Frame, Opcode, PROTOCOL_VERSION};
use super::{Backend, CombineFn, CommError};

const POLL: Duration = Duration::from_millis(10);

pub struct TcpBackend {
    world: usize,
    rank: usize,
    /// Master: one stream per peer rank (index 0 unused). Peer: the master link.
    links: Vec<Option<TcpStream>>,
}

fn configure(stream: &TcpStream, timeout: Duration) -> Result<(), CommError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    Ok(())
}

fn resolve(addr: &str) -> Result<SocketAddr, CommError> {
    addr.to_socket_addrs()
        .map_err(|e| CommError::Config(format!("bad master address '{addr}': {e}")))?
        .next()
        .ok_or_else(|| CommError::Config(format!("master address '{addr}' did not resolve")))
}

pub fn bind_master(addr: &str) -> Result<TcpListener, CommError> {
    Ok(TcpListener::bind(resolve(addr)?)?)
}

impl TcpBackend {
    /// Waits for `world - 1` peers on `listener`, then acknowledges all of them.
    pub fn accept_peers(listener: TcpListener, world: usize, timeout: Duration) -> Result<Self, CommError> {
        let deadline = Instant::now() + timeout;
        listener.set_nonblocking(true)?;
        let mut links: Vec<Option<TcpStream>> = (0..world).map(|_| None).collect();
        let mut joined = 1;
        while joined < world {
            let (mut stream, peer) = match listener.accept() {
                Ok(conn) => conn,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let missing: Vec<usize> = (1..world).filter(|&r| links[r].is_none()).collect();
                        return Err(CommError::Timeout(format!("rendezvous: ranks {missing:?} never connected")));
                    }
                    thread::sleep(POLL);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            configure(&stream, timeout)?;
            let hello = match read_frame(&mut stream) {
                Ok(f) if f.op == Opcode::Hello => f,
                Ok(f) => {
                    let _ = write_frame(&mut stream, &Frame::error(0, 0, "expected HELLO"));
                    log::warn!("peer {peer} opened with {:?}", f.op);
                    continue;
                }
                Err(e) => {
                    log::warn!("peer {peer} failed handshake: {e}");
                    continue;
                }
            };
            let (version, peer_world, rank) = parse_hello(&hello.payload)?;
            let refuse = if version != PROTOCOL_VERSION {
                Some(format!("protocol version {version} not supported (expected {PROTOCOL_VERSION})"))
            } else if peer_world as usize != world {
                Some(format!("world size {peer_world} does not match master's {world}"))
            } else if rank == 0 || rank as usize >= world || rank != hello.rank {
                Some(format!("invalid rank {rank}"))
            } else {
                None
            };
            if let Some(msg) = refuse {
                log::warn!("refusing peer {peer}: {msg}");
                let _ = write_frame(&mut stream, &Frame::error(0, 0, &msg));
                continue;
            }
            let r = rank as usize;
            if let Some(mut first) = links[r].take() {
                let msg = format!("duplicate rank {r}");
                let _ = write_frame(&mut first, &Frame::error(0, 0, &msg));
                let _ = write_frame(&mut stream, &Frame::error(0, 0, &msg));
                return Err(CommError::DuplicateRank(r));
            }
            links[r] = Some(stream);
            joined += 1;
        }
        let ack = Frame::new(Opcode::Hello, 0, 0, hello_payload(PROTOCOL_VERSION, world as u16, 0));
        for link in links.iter_mut().flatten() {
            write_frame(link, &ack)?;
        }
        Ok(Self { world, rank: 0, links })
    }

    /// Connects to the master, retrying until it is reachable or time runs out.
    pub fn connect(master: &str, world: usize, rank: usize, timeout: Duration) -> Result<Self, CommError> {
        Self::connect_with_version(master, world, rank, timeout, PROTOCOL_VERSION)
    }

    pub(crate) fn connect_with_version(
        master: &str,
        world: usize,
        rank: usize,
        timeout: Duration,
        version: u16,
    ) -> Result<Self, CommError> {
        let addr = resolve(master)?;
        let deadline = Instant::now() + timeout;
        let mut stream = loop {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => break s,
                Err(e) if Instant::now() < deadline => {
                    log::debug!("rank {rank}: master not reachable yet ({e})");
                    thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(CommError::Timeout(format!("could not reach master {master}: {e}"))),
            }
        };
        configure(&stream, timeout)?;
        let hello = Frame::new(Opcode::Hello, 0, rank as u16, hello_payload(version, world as u16, rank as u16));
        write_frame(&mut stream, &hello)?;
        let reply = read_frame(&mut stream)?;
        match reply.op {
            Opcode::Hello => {}
            Opcode::Error => {
                let msg = String::from_utf8_lossy(&reply.payload).into_owned();
                if msg.starts_with("duplicate rank") {
                    return Err(CommError::DuplicateRank(rank));
                }
                return Err(CommError::Handshake(msg));
            }
            other => return Err(CommError::Protocol(format!("unexpected {other:?} during handshake"))),
        }
        Ok(Self { world, rank, links: vec![Some(stream)] })
    }

    fn master_round(
        &mut self,
        op: Opcode,
        seq: u32,
        payload: Vec<u8>,
        combine: &CombineFn<'_>,
    ) -> Result<Vec<u8>, CommError> {
        let mut parts = Vec::with_capacity(self.world);
        parts.push(payload);
        let mut failure = None;
        for r in 1..self.world {
            let link = self.links[r].as_mut().expect("master holds a link to every peer");
            match read_frame(link) {
                Ok(f) if f.op == op && f.seq == seq && f.rank as usize == r => parts.push(f.payload),
                Ok(f) if f.op == Opcode::Error => {
                    failure = Some(CommError::Remote(String::from_utf8_lossy(&f.payload).into_owned()));
                    break;
                }
                Ok(f) => {
                    failure = Some(CommError::SequenceMismatch(format!(
                        "collective {seq} ({op:?}): rank {r} sent {:?} #{}",
                        f.op, f.seq
                    )));
                    break;
                }
                Err(e) => {
                    failure = Some(e.with_context(&format!("collective {seq} ({op:?}) from rank {r}")));
                    break;
                }
            }
        }
        let result = match failure {
            Some(e) => Err(e),
            None => combine(&parts),
        };
        match &result {
            Ok(bytes) => {
                let reply = Frame::new(op.reply(), seq, 0, bytes.clone());
                let encoded = reply.encode();
                for link in self.links.iter_mut().flatten() {
                    link.write_all(&encoded)?;
                }
            }
            Err(e) => {
                let frame = Frame::error(seq, 0, &e.to_string());
                for link in self.links.iter_mut().flatten() {
                    let _ = write_frame(link, &frame);
                }
            }
        }
        result
    }

    fn peer_round(&mut self, op: Opcode, seq: u32, payload: Vec<u8>) -> Result<Vec<u8>, CommError> {
        let link = self.links[0].as_mut().expect("peer holds the master link");
        write_frame(link, &Frame::new(op, seq, self.rank as u16, payload))?;
        let reply = read_frame(link).map_err(|e| e.with_context(&format!("collective {seq} ({op:?}) reply")))?;
        match reply.op {
            Opcode::Error => Err(CommError::Remote(String::from_utf8_lossy(&reply.payload).into_owned())),
            got if got == op.reply() && reply.seq == seq => Ok(reply.payload),
            got => Err(CommError::SequenceMismatch(format!(
                "collective {seq} ({op:?}): master answered {got:?} #{}",
                reply.seq
            ))),
        }
    }
}

impl Backend for TcpBackend {
    fn name(&self) -> &'static str {
        "tcp"
    }

    fn world_size(&self) -> usize {
        self.world
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
        if self.rank == 0 {
            self.master_round(op, seq, payload, combine)
        } else {
            self.peer_round(op, seq, payload)
        }
    }

    fn shutdown(&mut self) -> Result<(), CommError> {
        for link in self.links.iter_mut().flatten() {
            let _ = link.shutdown(std::net::Shutdown::Both);
        }
        self.links.iter_mut().for_each(|l| *l = None);
        Ok(())
    }
}

impl Drop for TcpBackend {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
