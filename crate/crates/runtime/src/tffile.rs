//! TF output files: one per published key, `<producer>.<feature>.tf`.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `TFSTREAM`                        |
//! | 8      | 2    | version, u16 LE (1)                     |
//! | 10     | 4    | header length `H`, u32 LE               |
//! | 14     | H    | UTF-8 JSON [`TfHeader`]                 |
//!
//! followed by records until end of file:
//!
//! | size    | field                                           |
//! |---------|-------------------------------------------------|
//! | 1       | tag `R`                                         |
//! | 8       | chunk number, u64 LE                            |
//! | 1       | continuity code, i8                             |
//! | 16      | p, d, l, s as u32 LE                            |
//! | 1       | ndim (1 = time series, 2 = channels x time)     |
//! | 4*ndim  | dims, u32 LE                                    |
//! | 4*N     | values, f32 LE, row-major                       |
//!
//! Calibration chunks are not written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use tfstream_core::{AlignmentParams, Continuity, DataChunk, Payload, SourceKey};

use crate::error::RuntimeError;

pub const TF_MAGIC: &[u8; 8] = b"TFSTREAM";
pub const TF_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfHeader {
    pub producer: String,
    pub feature: String,
    pub sample_rate: Option<f64>,
    pub channel_freqs: Option<Vec<f64>>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfRecord {
    pub number: u64,
    pub continuity: Continuity,
    pub alignment: AlignmentParams,
    pub payload: Payload,
}

impl From<&DataChunk> for TfRecord {
    fn from(c: &DataChunk) -> Self {
        Self {
            number: c.number,
            continuity: c.continuity,
            alignment: c.alignment,
            payload: c.payload.clone(),
        }
    }
}

pub fn tf_path(dir: &Path, key: &SourceKey) -> PathBuf {
    dir.join(format!("{}.{}.tf", key.producer, key.feature))
}

fn tf_err(path: &Path, e: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::TfFile(format!("{}: {e}", path.display()))
}

/// Streams records to a file. The header is taken from the first record;
/// a file with no records gets a header without rate or frequencies.
pub struct TfWriter {
    path: PathBuf,
    key: SourceKey,
    out: Option<BufWriter<File>>,
    records: u64,
}

impl TfWriter {
    pub fn new(dir: &Path, key: SourceKey) -> Self {
        Self {
            path: tf_path(dir, &key),
            key,
            out: None,
            records: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn open(&mut self, rate: Option<f64>, freqs: Option<Vec<f64>>) -> Result<(), RuntimeError> {
        let header = TfHeader {
            producer: self.key.producer.clone(),
            feature: self.key.feature.clone(),
            sample_rate: rate,
            channel_freqs: freqs,
            dtype: "f32le".into(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| tf_err(&self.path, e))?;
        let mut w = BufWriter::new(File::create(&self.path).map_err(|e| tf_err(&self.path, e))?);
        w.write_all(TF_MAGIC)?;
        w.write_all(&TF_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        self.out = Some(w);
        Ok(())
    }

    pub fn write(&mut self, chunk: &DataChunk) -> Result<(), RuntimeError> {
        if chunk.continuity == Continuity::CalibrationChunk {
            return Ok(());
        }
        if self.out.is_none() {
            self.open(Some(chunk.sample_rate), chunk.channel_freqs.clone())?;
        }
        let w = self.out.as_mut().expect("opened");
        w.write_all(b"R")?;
        w.write_all(&chunk.number.to_le_bytes())?;
        w.write_all(&[chunk.continuity.code() as i8 as u8])?;
        for c in chunk.alignment.as_array() {
            w.write_all(&c.to_le_bytes())?;
        }
        let shape = chunk.payload.shape();
        w.write_all(&[shape.len() as u8])?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in chunk.payload.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        self.records += 1;
        Ok(())
    }

    /// Flushes, creating the file if nothing was written. Returns the
    /// number of records.
    pub fn finish(mut self) -> Result<u64, RuntimeError> {
        if self.out.is_none() {
            self.open(None, None)?;
        }
        self.out.take().expect("opened").flush()?;
        Ok(self.records)
    }
}

fn take<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N], RuntimeError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| tf_err(path, e))?;
    Ok(b)
}

/// Reads a whole TF file.
pub fn read_tf(path: impl AsRef<Path>) -> Result<(TfHeader, Vec<TfRecord>), RuntimeError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| tf_err(path, e))?);
    if &take::<8>(&mut r, path)? != TF_MAGIC {
        return Err(tf_err(path, "bad magic"));
    }
    let version = u16::from_le_bytes(take(&mut r, path)?);
    if version != TF_VERSION {
        return Err(tf_err(path, format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(take(&mut r, path)?) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json).map_err(|e| tf_err(path, e))?;
    let header: TfHeader = serde_json::from_slice(&json).map_err(|e| tf_err(path, e))?;

    let mut records = Vec::new();
    loop {
        let mut tag = [0u8; 1];
        match r.read(&mut tag)? {
            0 => break,
            _ if tag[0] != b'R' => return Err(tf_err(path, "bad record tag")),
            _ => {}
        }
        let number = u64::from_le_bytes(take(&mut r, path)?);
        let code = take::<1>(&mut r, path)?[0] as i8;
        let continuity = Continuity::from_code(code as i64).map_err(|e| tf_err(path, e))?;
        let mut a = [0u32; 4];
        for c in &mut a {
            *c = u32::from_le_bytes(take(&mut r, path)?);
        }
        let ndim = take::<1>(&mut r, path)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut r, path)?) as usize);
        }
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; 4 * n];
        r.read_exact(&mut raw).map_err(|e| tf_err(path, e))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let payload = match dims[..] {
            [_] => Payload::Series(Array1::from(values)),
            [c, t] => Payload::Grid(Array2::from_shape_vec((c, t), values).map_err(|e| tf_err(path, e))?),
            _ => return Err(tf_err(path, format!("unsupported ndim {ndim}"))),
        };
        records.push(TfRecord {
            number,
            continuity,
            alignment: AlignmentParams::from_array(a),
            payload,
        });
    }
    Ok((header, records))
}
