//! Length-prefixed framing over a reliable byte stream.
//!
//! Each message is a `u32` little-endian byte count followed by one encoded
//! frame. A clean end of stream between messages reads as `None`.

use std::io::{self, Read, Write};

use tfstream_core::DataChunk;

use crate::error::WireError;
use crate::frame::{decode, encode};

/// Upper bound on one frame, checked before allocating.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug)]
pub struct FrameWriter<W> {
    inner: W,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn send_bytes(&mut self, frame: &[u8]) -> Result<(), WireError> {
        if frame.len() > MAX_FRAME {
            return Err(WireError::TooLarge {
                len: frame.len(),
                max: MAX_FRAME,
            });
        }
        self.inner.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.inner.write_all(frame)?;
        Ok(())
    }

    pub fn send(&mut self, chunk: &DataChunk) -> Result<(), WireError> {
        self.send_bytes(&encode(chunk))
    }

    pub fn flush(&mut self) -> Result<(), WireError> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

#[derive(Debug)]
pub struct FrameReader<R> {
    inner: R,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    /// Next raw frame, `None` at a clean end of stream.
    pub fn recv_bytes(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        let mut len = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.inner.read(&mut len[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => {
                    return Err(WireError::Truncated {
                        needed: 4,
                        available: got,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let len = u32::from_le_bytes(len) as usize;
        if len > MAX_FRAME {
            return Err(WireError::TooLarge { len, max: MAX_FRAME });
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Truncated {
                needed: len,
                available: 0,
            },
            _ => e.into(),
        })?;
        Ok(Some(buf))
    }

    /// Next frame decoded. A frame that fails to decode is returned as
    /// `Some(Err(_))` so the caller can count it as lost and keep reading.
    pub fn recv(&mut self) -> Result<Option<Result<DataChunk, WireError>>, WireError> {
        Ok(self.recv_bytes()?.map(|b| decode(&b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use tfstream_core::{AlignmentParams, Continuity, Payload, SourceKey};

    fn chunk(n: u64) -> DataChunk {
        DataChunk {
            number: n,
            key: SourceKey::new("a", "snd"),
            payload: Payload::Series(Array1::from(vec![n as f32; 5])),
            sample_rate: 100.0,
            channel_freqs: None,
            alignment: AlignmentParams::ZERO,
            continuity: Continuity::WithPrevious,
        }
    }

    #[test]
    fn stream_of_frames() {
        let mut w = FrameWriter::new(Vec::new());
        for n in 0..3 {
            w.send(&chunk(n)).unwrap();
        }
        let bytes = w.into_inner();
        let mut r = FrameReader::new(&bytes[..]);
        for n in 0..3 {
            assert_eq!(r.recv().unwrap().unwrap().unwrap(), chunk(n));
        }
        assert!(r.recv().unwrap().is_none());
    }

    #[test]
    fn corrupt_frame_is_skippable() {
        let mut w = FrameWriter::new(Vec::new());
        let mut bad = encode(&chunk(0));
        let last = bad.len() - 1;
        bad[last] ^= 1;
        w.send_bytes(&bad).unwrap();
        w.send(&chunk(1)).unwrap();
        let bytes = w.into_inner();
        let mut r = FrameReader::new(&bytes[..]);
        assert!(r.recv().unwrap().unwrap().is_err());
        assert_eq!(r.recv().unwrap().unwrap().unwrap().number, 1);
    }

    #[test]
    fn cut_stream_is_truncated() {
        let mut w = FrameWriter::new(Vec::new());
        w.send(&chunk(0)).unwrap();
        let bytes = w.into_inner();
        for cut in [2, 10, bytes.len() - 1] {
            let mut r = FrameReader::new(&bytes[..cut]);
            assert!(matches!(r.recv_bytes(), Err(WireError::Truncated { .. })));
        }
    }

    #[test]
    fn oversized_length_is_refused_before_allocating() {
        let bytes = (u32::MAX).to_le_bytes();
        let mut r = FrameReader::new(&bytes[..]);
        assert!(matches!(r.recv_bytes(), Err(WireError::TooLarge { .. })));
    }
}
