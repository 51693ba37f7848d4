//! Unchunked reference run: the whole input goes through every processor as
//! one chunk, and the result is compared with a streamed run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::Serialize;
use tfstream_core::{
    AlignmentParams, Calibration, Continuity, DataChunk, MergeScenario, MergedChunk, MergedInput,
    Payload, Processor, Registry, SourceKey, SourceOptions,
};

use crate::error::RuntimeError;
use crate::export::{load_key, Segment};
use crate::graph::ValidatedGraph;
use crate::run::RunOptions;
use crate::tffile::TfWriter;

/// One key of the reference run, placed on the same timeline as streamed
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSeries {
    pub start: u64,
    pub payload: Payload,
    pub sample_rate: f64,
    pub channel_freqs: Option<Vec<f64>>,
}

impl OracleSeries {
    pub fn end(&self) -> u64 {
        self.start + self.payload.time_len() as u64
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleResult {
    pub series: BTreeMap<SourceKey, OracleSeries>,
    pub calibration: BTreeMap<String, Calibration>,
    /// Number of input samples.
    pub samples: u64,
}

fn oracle_err(msg: impl Into<String>) -> RuntimeError {
    RuntimeError::Oracle(msg.into())
}

/// Pushes one whole chunk per key through the graph.
fn propagate(
    graph: &ValidatedGraph,
    procs: &mut BTreeMap<String, Box<dyn Processor>>,
    input: OracleSeries,
    number: u64,
    continuity: Continuity,
) -> Result<BTreeMap<SourceKey, OracleSeries>, RuntimeError> {
    let mut out = BTreeMap::new();
    out.insert(graph.nodes[0].features[0].key.clone(), input);
    for node in graph.nodes.iter().filter(|n| !n.is_source) {
        let ins: Vec<(&SourceKey, &OracleSeries)> =
            node.inputs.iter().filter_map(|k| out.get(k).map(|s| (k, s))).collect();
        if ins.len() < node.inputs.len() {
            continue;
        }
        let s = ins.iter().map(|(_, x)| x.start).max().expect("inputs");
        let e = ins.iter().map(|(_, x)| x.end()).min().expect("inputs");
        if e <= s {
            return Err(oracle_err(format!("inputs of `{}` do not overlap", node.name)));
        }
        let r = node.rate_divisor as u64;
        if s % r != 0 {
            return Err(oracle_err(format!(
                "`{}` input starts at {s}, not a multiple of its rate divisor {r}",
                node.name
            )));
        }
        let inputs = ins
            .iter()
            .map(|(k, x)| {
                let a = (s - x.start) as usize;
                let b = (e - x.start) as usize;
                (
                    (*k).clone(),
                    MergedInput {
                        payload: x.payload.slice_time(a..b),
                        scenario: MergeScenario::RegularDiscontinuous,
                        source_continuity: continuity,
                        source_alignment: AlignmentParams::ZERO,
                        sample_rate: x.sample_rate,
                        channel_freqs: x.channel_freqs.clone(),
                    },
                )
            })
            .collect();
        let merged = MergedChunk {
            number,
            continuity,
            alignment: node.merged,
            inputs,
        };
        let proc = procs.get_mut(&node.name).expect("built");
        let outputs = proc.process(&merged).map_err(|source| RuntimeError::Process {
            node: node.name.clone(),
            source,
        })?;
        for o in outputs {
            let f = node
                .features
                .iter()
                .find(|f| f.key.feature == o.feature)
                .ok_or_else(|| oracle_err(format!("`{}` published unknown `{}`", node.name, o.feature)))?;
            let rel = f.relative;
            let start = s / r + rel.dropped_after_discontinuity as u64;
            let want_end = e.div_ceil(r).saturating_sub(rel.included_past as u64);
            let got_end = start + o.payload.time_len() as u64;
            if got_end != want_end {
                return Err(oracle_err(format!(
                    "`{}` emitted {} columns for {}; its alignment implies {}",
                    f.key,
                    o.payload.time_len(),
                    e - s,
                    want_end.saturating_sub(start)
                )));
            }
            out.insert(
                f.key.clone(),
                OracleSeries {
                    start,
                    payload: o.payload,
                    sample_rate: o.sample_rate,
                    channel_freqs: o.channel_freqs,
                },
            );
        }
    }
    Ok(out)
}

/// Runs the reference computation. The input must be uninterrupted: a
/// leading calibration chunk is processed first, the remaining chunks are
/// concatenated into one.
pub fn run_oracle(graph: &ValidatedGraph, registry: &Registry, opts: &RunOptions) -> Result<OracleResult, RuntimeError> {
    let config = &graph.config;
    let src_node = &graph.nodes[0];
    let spec = config.processor(&src_node.name).expect("validated");
    let so = SourceOptions {
        seed: opts.seed.unwrap_or(config.seed),
        overflow_at: Default::default(),
        input_path: opts.input.clone(),
    };
    let wrap = |node: &str| {
        let node = node.to_string();
        move |source| RuntimeError::Process { node, source }
    };
    let mut src = registry
        .build_source(&spec.kind, &spec.params, &so)
        .map_err(wrap(&src_node.name))?;

    let mut calibration = None;
    let mut data: Vec<f32> = Vec::new();
    let mut first = None;
    let mut rate = 0.0;
    let mut expect = None;
    while let Some(c) = src.next_chunk().map_err(wrap(&src_node.name))? {
        let values = c
            .payload
            .as_series()
            .ok_or_else(|| oracle_err("input node must publish a time series"))?;
        if c.continuity == Continuity::CalibrationChunk {
            calibration = Some(OracleSeries {
                start: 0,
                payload: c.payload.clone(),
                sample_rate: c.sample_rate,
                channel_freqs: None,
            });
            continue;
        }
        if expect.is_some_and(|n| n != c.number) || (first.is_some() && !c.continuity.is_withprevious_subtype()) {
            return Err(oracle_err(format!(
                "input is interrupted at chunk {}; the reference needs one uninterrupted stream",
                c.number
            )));
        }
        first.get_or_insert(c.number);
        expect = Some(c.number + 1);
        rate = c.sample_rate;
        data.extend(values.iter());
    }
    let first = first.ok_or_else(|| oracle_err("input is empty"))?;

    let mut procs: BTreeMap<String, Box<dyn Processor>> = BTreeMap::new();
    for node in graph.nodes.iter().filter(|n| !n.is_source) {
        let spec = config.processor(&node.name).expect("validated");
        procs.insert(
            node.name.clone(),
            registry.build_processor(&spec.kind, &spec.params).map_err(wrap(&node.name))?,
        );
    }
    if let Some(cal) = calibration {
        propagate(graph, &mut procs, cal, 0, Continuity::CalibrationChunk)?;
    }
    let samples = data.len() as u64;
    let input = OracleSeries {
        start: 0,
        payload: Payload::Series(Array1::from(data)),
        sample_rate: rate,
        channel_freqs: None,
    };
    let series = propagate(graph, &mut procs, input, first, Continuity::NewFile)?;
    let calibration = procs
        .iter()
        .filter_map(|(n, p)| p.calibration().map(|c| (n.clone(), c)))
        .collect();
    Ok(OracleResult {
        series,
        calibration,
        samples,
    })
}

/// Writes the reference output as TF files, one record per key, so that
/// the streamed-output tools read it unchanged.
pub fn write_oracle(
    graph: &ValidatedGraph,
    result: &OracleResult,
    dir: &Path,
    keys: &[SourceKey],
) -> Result<Vec<PathBuf>, RuntimeError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for key in keys {
        let Some(s) = result.series.get(key) else {
            continue;
        };
        let node = graph.node(&key.producer).expect("validated key");
        let info = graph.feature(key).expect("validated key");
        let total = result.samples.div_ceil(node.total_divisor);
        let mut w = TfWriter::new(dir, key.clone());
        w.write(&DataChunk {
            number: graph.first_data_number(),
            key: key.clone(),
            payload: s.payload.clone(),
            sample_rate: s.sample_rate,
            channel_freqs: s.channel_freqs.clone(),
            alignment: AlignmentParams {
                included_past: total.saturating_sub(s.end()) as u32,
                dropped_after_discontinuity: s.start as u32,
                ..info.cumulative
            },
            continuity: Continuity::NewFile,
        })?;
        paths.push(w.path().to_path_buf());
        w.finish()?;
    }
    Ok(paths)
}

/// Streamed output of one key against the reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyComparison {
    pub key: String,
    pub oracle_span: (u64, u64),
    pub streamed_spans: Vec<(u64, u64)>,
    pub coverage_equal: bool,
    pub compared_cells: u64,
    pub nan_mismatches: u64,
    /// Largest `|streamed - oracle| / (|oracle| + rms(oracle))`.
    pub max_rel_error: f64,
}

impl KeyComparison {
    pub fn passes(&self, tol: f64) -> bool {
        self.coverage_equal && self.nan_mismatches == 0 && self.max_rel_error <= tol
    }
}

/// Compares streamed segments with a reference series cell by cell.
pub fn compare_segments(key: &SourceKey, oracle: &OracleSeries, segments: &[Segment]) -> KeyComparison {
    let spans: Vec<(u64, u64)> = segments.iter().map(|s| (s.start, s.end())).collect();
    let coverage_equal = spans == [(oracle.start, oracle.end())];
    let o: Vec<f32> = oracle.payload.values().collect();
    let finite: Vec<f64> = o.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
    let rms = if finite.is_empty() {
        0.0
    } else {
        (finite.iter().map(|v| v * v).sum::<f64>() / finite.len() as f64).sqrt()
    };
    let mut cmp = KeyComparison {
        key: key.to_string(),
        oracle_span: (oracle.start, oracle.end()),
        streamed_spans: spans,
        coverage_equal,
        compared_cells: 0,
        nan_mismatches: 0,
        max_rel_error: 0.0,
    };
    for seg in segments {
        let a = seg.start.max(oracle.start);
        let b = seg.end().min(oracle.end());
        if a >= b {
            continue;
        }
        let sp = seg.payload.slice_time((a - seg.start) as usize..(b - seg.start) as usize);
        let op = oracle
            .payload
            .slice_time((a - oracle.start) as usize..(b - oracle.start) as usize);
        for (x, y) in sp.values().zip(op.values()) {
            cmp.compared_cells += 1;
            match (x.is_nan(), y.is_nan()) {
                (true, true) => {}
                (false, false) => {
                    let err = (x as f64 - y as f64).abs() / ((y as f64).abs() + rms).max(f64::MIN_POSITIVE);
                    cmp.max_rel_error = cmp.max_rel_error.max(err);
                }
                _ => cmp.nan_mismatches += 1,
            }
        }
    }
    cmp
}

/// Compares every key present in both the reference and `dir`.
pub fn compare_dir(
    graph: &ValidatedGraph,
    result: &OracleResult,
    dir: &Path,
    keys: &[SourceKey],
) -> Result<Vec<KeyComparison>, RuntimeError> {
    let mut out = Vec::new();
    for key in keys {
        let Some(o) = result.series.get(key) else {
            continue;
        };
        let (_, segments) = load_key(graph, dir, key)?;
        out.push(compare_segments(key, o, &segments));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::graph::validate_graph;
    use crate::run::run;
    use tfstream_dsp::builtin_registry;

    #[test]
    fn streamed_resampler_matches_reference() {
        let text = r#"
            [[processors]]
            name = "mic"
            kind = "mic_input"
            params = { chunk_size = 256, chunks = 10 }
            [[processors]]
            name = "rs"
            kind = "resampler"
            params = { factor = 2, fir_length = 33 }
            [[edges]]
            from = "mic.snd"
            to = "rs"
            [output]
            taps = ["rs.snd"]
        "#;
        let g = validate_graph(&PipelineConfig::from_toml(text).unwrap(), &builtin_registry()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        run(&g, &builtin_registry(), &opts).unwrap();
        let o = run_oracle(&g, &builtin_registry(), &opts).unwrap();
        let key = SourceKey::new("rs", "snd");
        assert_eq!(o.series[&key].start, 16);
        let cmp = compare_dir(&g, &o, dir.path(), &[key]).unwrap();
        assert!(cmp[0].passes(1e-6), "{cmp:?}");
        assert_eq!(cmp[0].compared_cells, 1280 - 16);
    }

    #[test]
    fn reference_ignores_overflows_and_refuses_empty_input() {
        let text = r#"
            [[processors]]
            name = "mic"
            kind = "mic_input"
            params = { chunk_size = 256, chunks = 10 }
            [[processors]]
            name = "rs"
            kind = "resampler"
            [[edges]]
            from = "mic.snd"
            to = "rs"
            [[faults]]
            type = "overflow_at"
            input = "mic"
            number = 4
        "#;
        let mut g = validate_graph(&PipelineConfig::from_toml(text).unwrap(), &builtin_registry()).unwrap();
        // The reference ignores scheduled overflows; it always reads clean input.
        assert!(run_oracle(&g, &builtin_registry(), &RunOptions::default()).is_ok());
        g.config.processor_mut("mic").unwrap().params.insert("chunks".into(), 0.into());
        assert!(matches!(
            run_oracle(&g, &builtin_registry(), &RunOptions::default()),
            Err(RuntimeError::Oracle(_))
        ));
    }

    #[test]
    fn comparison_flags_gaps_and_nan() {
        let key = SourceKey::new("a", "b");
        let o = OracleSeries {
            start: 2,
            payload: Payload::Series(Array1::from(vec![1.0, f32::NAN, 3.0, 4.0])),
            sample_rate: 1.0,
            channel_freqs: None,
        };
        let seg = |start, v: Vec<f32>| Segment {
            start,
            payload: Payload::Series(Array1::from(v)),
        };
        let same = compare_segments(&key, &o, &[seg(2, vec![1.0, f32::NAN, 3.0, 4.0])]);
        assert!(same.passes(0.0));
        let gap = compare_segments(&key, &o, &[seg(2, vec![1.0]), seg(4, vec![3.0, 4.0])]);
        assert!(!gap.coverage_equal);
        let nan = compare_segments(&key, &o, &[seg(2, vec![1.0, 2.0, 3.0, 4.0])]);
        assert_eq!(nan.nan_mismatches, 1);
    }
}
