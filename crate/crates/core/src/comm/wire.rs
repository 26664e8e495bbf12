//! Length-prefixed frames exchanged by the tcp backend.

use std::io::{Read, Write};

use super::CommError;
use crate::codec::{put_u16, put_u32, Reader};

pub const PROTOCOL_VERSION: u16 = 1;
const HEADER_LEN: usize = 11;
const MAX_PAYLOAD: u32 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Hello = 1,
    Broadcast = 2,
    ReduceContrib = 3,
    ReduceResult = 4,
    Gather = 5,
    Barrier = 6,
    Bye = 7,
    Error = 8,
}

impl Opcode {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Opcode::Hello,
            2 => Opcode::Broadcast,
            3 => Opcode::ReduceContrib,
            4 => Opcode::ReduceResult,
            5 => Opcode::Gather,
            6 => Opcode::Barrier,
            7 => Opcode::Bye,
            8 => Opcode::Error,
            _ => return None,
        })
    }

    /// Opcode the master uses when answering a contribution.
    pub fn reply(self) -> Self {
        match self {
            Opcode::ReduceContrib => Opcode::ReduceResult,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub op: Opcode,
    pub seq: u32,
    pub rank: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(op: Opcode, seq: u32, rank: u16, payload: Vec<u8>) -> Self {
        Self { op, seq, rank, payload }
    }

    pub fn error(seq: u32, rank: u16, message: &str) -> Self {
        Self::new(Opcode::Error, seq, rank, message.as_bytes().to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        put_u32(&mut out, self.payload.len() as u32);
        out.push(self.op as u8);
        put_u32(&mut out, self.seq);
        put_u16(&mut out, self.rank);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), CommError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, CommError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let mut h = Reader::new(&header);
    let len = h.u32()?;
    let code = h.u8()?;
    let seq = h.u32()?;
    let rank = h.u16()?;
    let op = Opcode::from_code(code).ok_or_else(|| CommError::Protocol(format!("unknown opcode {code}")))?;
    if len > MAX_PAYLOAD {
        return Err(CommError::Protocol(format!("frame payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Frame { op, seq, rank, payload })
}

/// HELLO payload: protocol version, world size, rank.
pub fn hello_payload(version: u16, world: u16, rank: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(6);
    put_u16(&mut out, version);
    put_u16(&mut out, world);
    put_u16(&mut out, rank);
    out
}

pub fn parse_hello(payload: &[u8]) -> Result<(u16, u16, u16), CommError> {
    let mut r = Reader::new(payload);
    Ok((r.u16()?, r.u16()?, r.u16()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip_and_layout() {
        let f = Frame::new(Opcode::Gather, 0x01020304, 3, vec![9, 8, 7]);
        let bytes = f.encode();
        assert_eq!(&bytes[..11], &[3, 0, 0, 0, 5, 4, 3, 2, 1, 3, 0]);
        assert_eq!(read_frame(&mut bytes.as_slice()).unwrap(), f);
    }

    #[test]
    fn bad_opcode_and_truncation() {
        let mut bytes = Frame::new(Opcode::Bye, 1, 0, vec![]).encode();
        bytes[4] = 42;
        assert!(matches!(read_frame(&mut bytes.as_slice()), Err(CommError::Protocol(_))));
        let bytes = Frame::new(Opcode::Bye, 1, 0, vec![1, 2]).encode();
        assert!(read_frame(&mut &bytes[..12]).is_err());
    }

    #[test]
    fn hello_roundtrip() {
        assert_eq!(parse_hello(&hello_payload(1, 4, 2)).unwrap(), (1, 4, 2));
        assert_eq!(Opcode::ReduceContrib.reply(), Opcode::ReduceResult);
    }
}
