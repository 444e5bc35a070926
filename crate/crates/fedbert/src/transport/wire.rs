//! Byte-level protocol: framing, checksums, and the weight wire format.
//!
//! Frame layout, all multi-byte integers little-endian:
//!
//! ```text
//! magic "FLB1" (4) | msg_type (1) | payload_length u32 (4) | payload | crc32 u32 (4)
//! ```
//!
//! The CRC (polynomial 0xEDB88320, reflected) covers the payload only.
//! Weights travel as single-precision floats; the f64 training values are
//! truncated on encode, and both transports round-trip through this format at
//! the same points, which is what makes socket and loopback runs comparable
//! bit for bit.

use std::io::Read;

use thiserror::Error;

use crate::model::{ParameterSet, Tensor};

pub const MAGIC: [u8; 4] = *b"FLB1";
pub const DEFAULT_PORT: u16 = 7171;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Join = 1,
    Global = 2,
    Update = 3,
    Done = 4,
    Error = 5,
}

impl MsgType {
    fn from_byte(b: u8) -> Option<MsgType> {
        match b {
            1 => Some(MsgType::Join),
            2 => Some(MsgType::Global),
            3 => Some(MsgType::Update),
            4 => Some(MsgType::Done),
            5 => Some(MsgType::Error),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("crc mismatch: computed {computed:08x}, frame says {stated:08x}")]
    CrcMismatch { computed: u32, stated: u32 },
    #[error("truncated stream")]
    Truncated,
    #[error("{0} trailing bytes after a complete payload")]
    TrailingBytes(usize),
    #[error("tensor name is not valid UTF-8")]
    NameNotUtf8,
    #[error("{0} does not fit the wire format")]
    Overflow(&'static str),
    #[error("duplicate tensor name `{0}`")]
    DuplicateTensor(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(e)
        }
    }
}

/// Wraps a payload in a checksummed frame.
pub fn frame(msg_type: MsgType, payload: &[u8]) -> Vec<u8> {
    assert!(payload.len() <= u32::MAX as usize, "payload too large for a frame");
    let mut out = Vec::with_capacity(13 + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(msg_type as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Reads one frame, blocking until it is complete. Validates in order: magic,
/// message type, length (the payload is read through `take`, so a hostile
/// length cannot force a huge allocation), then CRC. End of stream anywhere
/// before the last CRC byte is a truncation.
pub fn deframe<R: Read>(reader: &mut R) -> Result<(MsgType, Vec<u8>), WireError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let mut type_byte = [0u8; 1];
    reader.read_exact(&mut type_byte)?;
    let msg_type = MsgType::from_byte(type_byte[0])
        .ok_or(WireError::UnknownMsgType(type_byte[0]))?;
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let len = u32::from_le_bytes(len_bytes) as u64;
    let mut payload = Vec::new();
    reader.take(len).read_to_end(&mut payload)?;
    if (payload.len() as u64) < len {
        return Err(WireError::Truncated);
    }
    let mut crc_bytes = [0u8; 4];
    reader.read_exact(&mut crc_bytes)?;
    let stated = u32::from_le_bytes(crc_bytes);
    let computed = crc32fast::hash(&payload);
    if computed != stated {
        return Err(WireError::CrcMismatch { computed, stated });
    }
    Ok((msg_type, payload))
}

/// Serializes weights: tensor count u32, then per tensor a u16-length UTF-8
/// name, rank u8, u32 dims, and the values as little-endian f32.
pub fn encode_weights(params: &ParameterSet) -> Result<Vec<u8>, WireError> {
    let count =
        u32::try_from(params.len()).map_err(|_| WireError::Overflow("tensor count"))?;
    let mut out = Vec::with_capacity(4 + params.total_values() * 4);
    out.extend_from_slice(&count.to_le_bytes());
    for tensor in params.tensors() {
        let name = tensor.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| WireError::Overflow("tensor name length"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let rank =
            u8::try_from(tensor.shape.len()).map_err(|_| WireError::Overflow("tensor rank"))?;
        out.push(rank);
        for &dim in &tensor.shape {
            let dim = u32::try_from(dim).map_err(|_| WireError::Overflow("tensor dimension"))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for &v in &tensor.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Overflow("payload offset"))?;
        if end > self.bytes.len() {
            return Err(WireError::Truncated);
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(self) -> Result<(), WireError> {
        let left = self.bytes.len() - self.pos;
        if left > 0 {
            return Err(WireError::TrailingBytes(left));
        }
        Ok(())
    }
}

fn read_tensors(cursor: &mut Cursor) -> Result<ParameterSet, WireError> {
    let count = cursor.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cursor.u16()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|_| WireError::NameNotUtf8)?
            .to_string();
        if tensors.iter().any(|t: &Tensor| t.name == name) {
            return Err(WireError::DuplicateTensor(name));
        }
        let rank = cursor.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut total = 1usize;
        for _ in 0..rank {
            let dim = cursor.u32()? as usize;
            total = total.checked_mul(dim).ok_or(WireError::Overflow("tensor size"))?;
            shape.push(dim);
        }
        let mut values = Vec::with_capacity(total.min(cursor.bytes.len() / 4 + 1));
        for _ in 0..total {
            values.push(cursor.f32()? as f64);
        }
        tensors.push(Tensor::new(name, shape, values));
    }
    Ok(ParameterSet::from_tensors(tensors))
}

/// Inverse of [`encode_weights`]. Rejects any byte left over after the last
/// tensor.
pub fn decode_weights(bytes: &[u8]) -> Result<ParameterSet, WireError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let params = read_tensors(&mut cursor)?;
    cursor.finish()?;
    Ok(params)
}

pub fn join_payload(client_id: u32) -> Vec<u8> {
    client_id.to_le_bytes().to_vec()
}

pub fn parse_join(payload: &[u8]) -> Result<u32, WireError> {
    let mut cursor = Cursor { bytes: payload, pos: 0 };
    let client_id = cursor.u32()?;
    cursor.finish()?;
    Ok(client_id)
}

pub fn global_payload(round: u32, params: &ParameterSet) -> Result<Vec<u8>, WireError> {
    let mut out = round.to_le_bytes().to_vec();
    out.extend_from_slice(&encode_weights(params)?);
    Ok(out)
}

pub fn parse_global(payload: &[u8]) -> Result<(u32, ParameterSet), WireError> {
    let mut cursor = Cursor { bytes: payload, pos: 0 };
    let round = cursor.u32()?;
    let params = read_tensors(&mut cursor)?;
    cursor.finish()?;
    Ok((round, params))
}

pub fn update_payload(
    round: u32,
    n_examples: u64,
    params: &ParameterSet,
) -> Result<Vec<u8>, WireError> {
    let mut out = round.to_le_bytes().to_vec();
    out.extend_from_slice(&n_examples.to_le_bytes());
    out.extend_from_slice(&encode_weights(params)?);
    Ok(out)
}

pub fn parse_update(payload: &[u8]) -> Result<(u32, u64, ParameterSet), WireError> {
    let mut cursor = Cursor { bytes: payload, pos: 0 };
    let round = cursor.u32()?;
    let n_examples = cursor.u64()?;
    let params = read_tensors(&mut cursor)?;
    cursor.finish()?;
    Ok((round, n_examples, params))
}

/// DONE carries the number of rounds the session completed.
pub fn done_payload(rounds: u32) -> Vec<u8> {
    rounds.to_le_bytes().to_vec()
}

pub fn parse_done(payload: &[u8]) -> Result<u32, WireError> {
    let mut cursor = Cursor { bytes: payload, pos: 0 };
    let rounds = cursor.u32()?;
    cursor.finish()?;
    Ok(rounds)
}

pub fn error_payload(message: &str) -> Vec<u8> {
    message.as_bytes().to_vec()
}

pub fn parse_error(payload: &[u8]) -> String {
    String::from_utf8_lossy(payload).into_owned()
}
