//! Small helpers shared by the binary frame formats (context frames and
//! replica updates). Integers are unsigned LEB128, strings and byte blobs
//! are prefixed with their length as a varint.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame truncated at byte {0}")]
    Truncated(usize),
    #[error("varint overflow at byte {0}")]
    Overflow(usize),
    #[error("invalid utf-8 in string field at byte {0}")]
    Utf8(usize),
    #[error("invalid {field} value {value}")]
    Invalid { field: &'static str, value: u64 },
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("non-canonical varint at byte {0}")]
    NonCanonical(usize),
}

/// Size of the big-endian u32 length prefix carried by every frame on the
/// wire, for both node-to-node sync and the node API.
pub const LENGTH_PREFIX: usize = 4;

pub fn length_prefixed(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(LENGTH_PREFIX + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Splits one length-prefixed frame off the front of `buf`.
pub fn split_frame(buf: &[u8]) -> Option<(&[u8], &[u8])> {
    let len = u32::from_be_bytes(buf.get(..LENGTH_PREFIX)?.try_into().ok()?) as usize;
    let body = buf.get(LENGTH_PREFIX..LENGTH_PREFIX + len)?;
    Some((body, &buf[LENGTH_PREFIX + len..]))
}

pub fn put_varint(out: &mut Vec<u8>, value: u64) {
    leb128::write::unsigned(out, value).expect("writing to a Vec cannot fail");
}

pub fn varint_len(value: u64) -> usize {
    let bits = 64 - value.leading_zeros() as usize;
    bits.max(1).div_ceil(7)
}

pub fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_varint(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

pub fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

/// Cursor over a received frame.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        let b = *self.buf.get(self.pos).ok_or(DecodeError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn varint(&mut self) -> Result<u64, DecodeError> {
        let start = self.pos;
        let mut rest = &self.buf[self.pos..];
        let before = rest.len();
        match leb128::read::unsigned(&mut rest) {
            Ok(v) => {
                let used = before - rest.len();
                if used != varint_len(v) {
                    return Err(DecodeError::NonCanonical(start));
                }
                self.pos += used;
                Ok(v)
            }
            Err(leb128::read::Error::Overflow) => Err(DecodeError::Overflow(start)),
            Err(leb128::read::Error::IoError(_)) => Err(DecodeError::Truncated(self.buf.len())),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.varint()?;
        let len = usize::try_from(len).map_err(|_| DecodeError::Truncated(self.pos))?;
        let end = self
            .pos
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .ok_or(DecodeError::Truncated(self.buf.len()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::Utf8(at))
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
