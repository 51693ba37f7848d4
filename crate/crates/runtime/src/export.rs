//! Reassembling streamed records on a global timeline, and CSV export of
//! block averages.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use tfstream_core::{Payload, SourceKey};
use tfstream_dsp::areal_average;

use crate::error::RuntimeError;
use crate::graph::ValidatedGraph;
use crate::tffile::{read_tf, TfHeader, TfRecord};

/// A contiguous stretch of output columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// First column, counted on the key's time axis from the start of the
    /// first data chunk.
    pub start: u64,
    pub payload: Payload,
}

impl Segment {
    pub fn end(&self) -> u64 {
        self.start + self.payload.time_len() as u64
    }
}

/// Places records on the timeline: data chunk `k` nominally covers
/// `[k * steps, (k + 1) * steps)`; a discontinuous chunk starts `d` steps
/// late and a continuous one `p` steps early. Adjacent records are joined.
pub fn assemble(records: &[TfRecord], steps_per_chunk: u64, first_number: u64) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for r in records {
        let base = r.number.saturating_sub(first_number) * steps_per_chunk;
        let a = r.alignment;
        let start = if r.continuity.is_discontinuous_subtype() {
            base + a.dropped_after_discontinuity as u64
        } else {
            base.saturating_sub(a.included_past as u64)
        };
        match out.last_mut() {
            Some(last) if last.end() == start && !r.continuity.is_discontinuous_subtype() => {
                last.payload = last.payload.concat_time(&r.payload).expect("same channel count");
            }
            _ => out.push(Segment {
                start,
                payload: r.payload.clone(),
            }),
        }
    }
    out
}

/// Reads a streamed key back from `dir` and assembles it.
pub fn load_key(
    graph: &ValidatedGraph,
    dir: &Path,
    key: &SourceKey,
) -> Result<(TfHeader, Vec<Segment>), RuntimeError> {
    let node = graph
        .node(&key.producer)
        .ok_or_else(|| RuntimeError::UnknownOutput(key.to_string()))?;
    let (header, records) = read_tf(crate::tffile::tf_path(dir, key))?;
    Ok((header, assemble(&records, node.steps_per_chunk, graph.first_data_number())))
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Writes block averages of a channels-by-time representation:
/// `segment,time_s,freq_lo_hz,freq_hi_hz,mean,valid_cells`. Blocks never
/// straddle a discontinuity; invalid (NaN) cells are left out of the mean.
pub fn write_block_csv(
    out: &mut impl Write,
    header: &TfHeader,
    segments: &[Segment],
    block: (usize, usize),
) -> Result<u64, RuntimeError> {
    let rate = header.sample_rate.unwrap_or(1.0);
    writeln!(out, "segment,time_s,freq_lo_hz,freq_hi_hz,mean,valid_cells")?;
    let mut rows = 0;
    for (si, seg) in segments.iter().enumerate() {
        let grid: Array2<f64> = match &seg.payload {
            Payload::Grid(g) => g.mapv(f64::from),
            Payload::Series(s) => s.mapv(f64::from).insert_axis(ndarray::Axis(0)),
        };
        let (means, counts) = areal_average(grid.view(), block.0, block.1);
        let channels = grid.nrows();
        for ((fi, ti), m) in means.indexed_iter() {
            let lo = fi * block.1;
            let hi = (lo + block.1).min(channels) - 1;
            let (flo, fhi) = match &header.channel_freqs {
                Some(f) => (f[lo], f[hi]),
                None => (lo as f64, hi as f64),
            };
            let t = (seg.start + (ti * block.0) as u64) as f64 / rate;
            writeln!(
                out,
                "{si},{t},{},{},{},{}",
                fmt_f64(flo),
                fmt_f64(fhi),
                fmt_f64(*m),
                counts[[fi, ti]]
            )?;
            rows += 1;
        }
    }
    Ok(rows)
}

/// Exports the configured CSV key from the TF files in `dir`.
pub fn export_csv(graph: &ValidatedGraph, dir: &Path, key: &SourceKey) -> Result<u64, RuntimeError> {
    let (header, segments) = load_key(graph, dir, key)?;
    let path = dir.join(format!("{}.{}.csv", key.producer, key.feature));
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let rows = write_block_csv(&mut out, &header, &segments, graph.config.output.block)?;
    out.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use tfstream_core::{AlignmentParams, Continuity};

    fn rec(n: u64, c: Continuity, len: usize, a: AlignmentParams) -> TfRecord {
        TfRecord {
            number: n,
            continuity: c,
            alignment: a,
            payload: Payload::Series(Array1::from(vec![n as f32; len])),
        }
    }

    #[test]
    fn records_join_into_segments() {
        let a = AlignmentParams::new(3, 5, 0, 0);
        let recs = vec![
            rec(1, Continuity::NewFile, 2, a),
            rec(2, Continuity::WithPrevious, 10, a),
            rec(4, Continuity::Discontinuous, 2, a),
            rec(5, Continuity::Last, 10, a),
        ];
        let segs = assemble(&recs, 10, 1);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end()), (5, 17));
        assert_eq!((segs[1].start, segs[1].end()), (35, 47));
    }

    #[test]
    fn csv_blocks_skip_nan() {
        let header = TfHeader {
            producer: "p".into(),
            feature: "f".into(),
            sample_rate: Some(10.0),
            channel_freqs: Some(vec![100.0, 200.0, 300.0]),
            dtype: "f32le".into(),
        };
        let mut g = Array2::from_elem((3, 4), 2.0f32);
        g[[2, 0]] = f32::NAN;
        let seg = Segment {
            start: 10,
            payload: Payload::Grid(g),
        };
        let mut buf = Vec::new();
        let rows = write_block_csv(&mut buf, &header, &[seg], (2, 2)).unwrap();
        assert_eq!(rows, 4);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0,1,100,200,2,4");
        assert_eq!(lines[3], "0,1,300,300,2,1");
    }
}
