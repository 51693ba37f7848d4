//! Binary frame codec for [`DataChunk`].
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TFCK"
//! 4       2     version (u16) = 1
//! 6       4     header length H (u32)
//! 10      H     header
//! 10+H    4*N   payload, f32 LE, row-major (channel, time)
//! 10+H+4N 4     CRC-32 (IEEE) over header and payload
//! ```
//!
//! Header fields in order:
//!
//! ```text
//! u16 + bytes   producer name (UTF-8)
//! u16 + bytes   feature name (UTF-8)
//! u64           chunk number
//! i8            continuity code
//! u32 x 4       p, d, l, s
//! u8            dtype tag (1 = f32)
//! u8            ndim (1 or 2)
//! u32 x ndim    shape; N is the product
//! f64           sample rate
//! u8            1 if channel frequencies follow, else 0
//! [u32 + f64 x count]  channel frequencies
//! ```

use ndarray::{Array1, Array2};
use tfstream_core::{AlignmentParams, Continuity, DataChunk, Payload, SourceKey};

use crate::error::WireError;

pub const MAGIC: [u8; 4] = *b"TFCK";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
const PRELUDE: usize = 10;

pub fn encode(chunk: &DataChunk) -> Vec<u8> {
    let mut h = Vec::with_capacity(64);
    put_str(&mut h, &chunk.key.producer);
    put_str(&mut h, &chunk.key.feature);
    h.extend_from_slice(&chunk.number.to_le_bytes());
    h.push(chunk.continuity.code() as u8);
    for c in chunk.alignment.as_array() {
        h.extend_from_slice(&c.to_le_bytes());
    }
    h.push(DTYPE_F32);
    let shape = chunk.payload.shape();
    h.push(shape.len() as u8);
    for d in &shape {
        h.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    h.extend_from_slice(&chunk.sample_rate.to_le_bytes());
    match &chunk.channel_freqs {
        Some(f) => {
            h.push(1);
            h.extend_from_slice(&(f.len() as u32).to_le_bytes());
            for v in f {
                h.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => h.push(0),
    }

    let n = chunk.payload.len();
    let mut out = Vec::with_capacity(PRELUDE + h.len() + 4 * n + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for v in chunk.payload.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[PRELUDE..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<DataChunk, WireError> {
    if bytes.len() < PRELUDE {
        return Err(WireError::Truncated {
            needed: PRELUDE,
            available: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(WireError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let body_start = PRELUDE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(WireError::Truncated {
            needed: PRELUDE.saturating_add(header_len),
            available: bytes.len(),
        })?;
    if bytes.len() < body_start + 4 {
        return Err(WireError::Truncated {
            needed: body_start + 4,
            available: bytes.len(),
        });
    }
    let crc_at = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[PRELUDE..crc_at]);
    if stored != computed {
        return Err(WireError::Checksum { stored, computed });
    }

    let mut r = Cursor::new(&bytes[PRELUDE..body_start]);
    let producer = r.string()?;
    let feature = r.string()?;
    let number = r.u64()?;
    let continuity = Continuity::from_code(r.u8()? as i8 as i64)
        .map_err(|e| WireError::Malformed(e.to_string()))?;
    let alignment = AlignmentParams::from_array([r.u32()?, r.u32()?, r.u32()?, r.u32()?]);
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(WireError::Malformed(format!("unknown dtype tag {dtype}")));
    }
    let ndim = r.u8()? as usize;
    if !(1..=2).contains(&ndim) {
        return Err(WireError::Malformed(format!("ndim {ndim}")));
    }
    let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
    let sample_rate = r.f64()?;
    let channel_freqs = match r.u8()? {
        0 => None,
        1 => {
            let count = r.u32()? as usize;
            if count > r.remaining() / 8 {
                return Err(WireError::Malformed(format!(
                    "{count} channel frequencies in a {}-byte remainder",
                    r.remaining()
                )));
            }
            Some((0..count).map(|_| r.f64()).collect::<Result<_, _>>()?)
        }
        other => return Err(WireError::Malformed(format!("frequency flag {other}"))),
    };
    if r.remaining() != 0 {
        return Err(WireError::Malformed(format!(
            "{} trailing header bytes",
            r.remaining()
        )));
    }

    let payload_bytes = crc_at - body_start;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| WireError::Malformed("shape overflows".into()))?;
    if n.checked_mul(4) != Some(payload_bytes) {
        return Err(WireError::Malformed(format!(
            "shape {shape:?} needs {} payload bytes, frame has {payload_bytes}",
            n.saturating_mul(4)
        )));
    }
    let values: Vec<f32> = bytes[body_start..crc_at]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let payload = match shape[..] {
        [_] => Payload::Series(Array1::from(values)),
        [rows, cols] => Payload::Grid(
            Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| WireError::Malformed(e.to_string()))?,
        ),
        _ => unreachable!("ndim checked"),
    };
    Ok(DataChunk {
        number,
        key: SourceKey::new(producer, feature),
        payload,
        sample_rate,
        channel_freqs,
        alignment,
        continuity,
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    let len = u16::try_from(b.len()).expect("names shorter than 64 KiB");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(b);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if n > self.remaining() {
            return Err(WireError::Malformed(format!(
                "header field of {n} bytes overruns header"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, WireError> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| WireError::Malformed(format!("name is not UTF-8: {e}")))
    }
}

/// Bit-level equality, so NaN payloads compare equal to themselves.
pub fn bit_identical(a: &DataChunk, b: &DataChunk) -> bool {
    a.number == b.number
        && a.key == b.key
        && a.continuity == b.continuity
        && a.alignment == b.alignment
        && a.sample_rate.to_bits() == b.sample_rate.to_bits()
        && a.payload.shape() == b.payload.shape()
        && a.payload.values().map(f32::to_bits).eq(b.payload.values().map(f32::to_bits))
        && match (&a.channel_freqs, &b.channel_freqs) {
            (None, None) => true,
            (Some(x), Some(y)) => x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits())),
            _ => false,
        }
}
