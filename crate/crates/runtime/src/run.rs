//! Threaded execution: one worker per node, bounded inboxes, optional TCP
//! links, fault injection on edges.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};
use serde::Serialize;
use tfstream_core::{
    compose, validate_chunk, AlignmentParams, BufferCounters, Calibration, Continuity, DataChunk,
    InFlightBuffer, MergeScenario, MergeState, Processor, Registry, Source, SourceKey,
    SourceOptions,
};
use tfstream_wire::{corrupt_frame, encode, EdgeAction, EdgeFaults, EdgeId, FrameReader, FrameWriter};

use crate::config::Transport;
use crate::error::RuntimeError;
use crate::export::export_csv;
use crate::graph::{NodeInfo, ValidatedGraph};
use crate::tffile::TfWriter;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the input path of the input node.
    pub input: Option<PathBuf>,
    /// Where taps and the CSV export go; nothing is written without it.
    pub output_dir: Option<PathBuf>,
    /// Overrides the configured seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeLogEntry {
    pub number: u64,
    pub continuity: Continuity,
    pub scenarios: BTreeMap<String, MergeScenario>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KeyStats {
    pub chunks: u64,
    pub calibration_chunks: u64,
    pub columns: u64,
    pub cells: u64,
    pub nan_cells: u64,
    pub numbers: Vec<u64>,
    pub alignment: AlignmentParams,
    /// `(l + s) / channels` from the cumulative alignment.
    pub declared_invalid_fraction: f64,
    /// NaN cells over all cells, calibration chunks excluded.
    pub invalid_fraction: f64,
    pub tf_records: Option<u64>,
}

impl KeyStats {
    fn record(&mut self, c: &DataChunk) {
        self.alignment = c.alignment;
        if c.continuity == Continuity::CalibrationChunk {
            self.calibration_chunks += 1;
            return;
        }
        self.chunks += 1;
        self.numbers.push(c.number);
        self.columns += c.payload.time_len() as u64;
        self.cells += c.payload.len() as u64;
        self.nan_cells += c.payload.values().filter(|v| v.is_nan()).count() as u64;
        if let Some(ch) = c.payload.channels() {
            self.declared_invalid_fraction = c.alignment.invalid_rows() as f64 / ch as f64;
        }
        self.invalid_fraction = if self.cells == 0 {
            0.0
        } else {
            self.nan_cells as f64 / self.cells as f64
        };
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NodeReport {
    pub name: String,
    pub kind: String,
    pub counters: Option<BufferCounters>,
    pub merges: Vec<MergeLogEntry>,
    pub abandoned: Vec<u64>,
    pub stale_warnings: u64,
    pub published: BTreeMap<String, KeyStats>,
    pub calibration: Option<Calibration>,
    pub extra: Option<serde_json::Value>,
    /// Chunks an input node produced but did not publish.
    pub withheld: Vec<u64>,
    /// Chunks still buffered when the stream ended.
    pub pending_at_end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LinkStats {
    pub edge: String,
    pub transport: String,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub corrupted: u64,
    /// Frames the receiver rejected (checksum or format).
    pub rejected: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub nodes: Vec<NodeReport>,
    pub links: Vec<LinkStats>,
    pub files: Vec<String>,
    pub elapsed_ms: u64,
}

impl RunReport {
    pub fn node(&self, name: &str) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn key(&self, key: &SourceKey) -> Option<&KeyStats> {
        self.node(&key.producer)?.published.get(&key.feature)
    }
}

type Inbox = Sender<Arc<DataChunk>>;

struct Link {
    edge: EdgeId,
    /// Faults are applied here for local links and by the writer thread for
    /// network links.
    faults: Option<EdgeFaults>,
    tx: Inbox,
    stats: Arc<Mutex<LinkStats>>,
}

struct Outlet {
    key: SourceKey,
    links: Vec<Link>,
    tap: Option<TfWriter>,
    stats: KeyStats,
}

impl Outlet {
    fn publish(&mut self, node: &str, chunk: DataChunk) -> Result<(), RuntimeError> {
        let chunk = validate_chunk(chunk).map_err(|source| RuntimeError::Chunk {
            node: node.to_string(),
            source,
        })?;
        self.stats.record(&chunk);
        if let Some(tap) = &mut self.tap {
            tap.write(&chunk)?;
        }
        let chunk = Arc::new(chunk);
        for link in &self.links {
            let mut st = link.stats.lock().expect("stats lock");
            st.sent += 1;
            let action = link.faults.as_ref().map_or(EdgeAction::Deliver, |f| f.action(chunk.number));
            let out = match action {
                EdgeAction::Deliver => Some(chunk.clone()),
                EdgeAction::Drop => {
                    st.dropped += 1;
                    None
                }
                EdgeAction::Corrupt => {
                    st.corrupted += 1;
                    let mut frame = encode(&chunk);
                    corrupt_frame(&mut frame);
                    match tfstream_wire::decode(&frame) {
                        Ok(c) => Some(Arc::new(c)),
                        Err(_) => {
                            st.rejected += 1;
                            None
                        }
                    }
                }
            };
            if link.faults.is_some() && out.is_some() {
                st.delivered += 1;
            }
            drop(st);
            if let Some(c) = out {
                link.tx
                    .send(c)
                    .map_err(|_| RuntimeError::Downstream(format!("{node} ({})", link.edge)))?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<KeyStats, RuntimeError> {
        if let Some(tap) = self.tap.take() {
            self.stats.tf_records = Some(tap.finish()?);
        }
        Ok(self.stats)
    }
}

fn finish_outlets(outlets: Vec<Outlet>) -> Result<BTreeMap<String, KeyStats>, RuntimeError> {
    outlets
        .into_iter()
        .map(|o| {
            let f = o.key.feature.clone();
            o.finish().map(|s| (f, s))
        })
        .collect()
}

fn run_source(node: &NodeInfo, mut src: Box<dyn Source>, mut outlets: Vec<Outlet>) -> Result<NodeReport, RuntimeError> {
    let outlet = &mut outlets[0];
    while let Some(c) = src.next_chunk().map_err(|source| RuntimeError::Process {
        node: node.name.clone(),
        source,
    })? {
        let chunk = DataChunk {
            number: c.number,
            key: outlet.key.clone(),
            payload: c.payload,
            sample_rate: c.sample_rate,
            channel_freqs: None,
            alignment: AlignmentParams::ZERO,
            continuity: c.continuity,
        };
        outlet.publish(&node.name, chunk)?;
    }
    Ok(NodeReport {
        name: node.name.clone(),
        kind: node.kind.clone(),
        withheld: src.withheld(),
        published: finish_outlets(outlets)?,
        ..NodeReport::default()
    })
}

fn run_processor(
    node: &NodeInfo,
    mut proc: Box<dyn Processor>,
    inbox: Receiver<Arc<DataChunk>>,
    mut outlets: Vec<Outlet>,
    watchdog: Option<Duration>,
) -> Result<NodeReport, RuntimeError> {
    let name = node.name.as_str();
    let mut buffer = InFlightBuffer::new(node.inputs.iter().cloned());
    let mut state = MergeState::new();
    let mut report = NodeReport {
        name: name.to_string(),
        kind: node.kind.clone(),
        ..NodeReport::default()
    };
    let r = node.rate_divisor;
    let relative: BTreeMap<&str, AlignmentParams> = node
        .features
        .iter()
        .map(|f| (f.key.feature.as_str(), f.relative))
        .collect();

    loop {
        let chunk = match watchdog {
            None => match inbox.recv() {
                Ok(c) => c,
                Err(_) => break,
            },
            Some(limit) => match inbox.recv_timeout(limit) {
                Ok(c) => c,
                Err(RecvTimeoutError::Timeout) => {
                    if let Some(n) = buffer.abandon_oldest() {
                        report.abandoned.push(n);
                    }
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => break,
            },
        };
        let set = match buffer.accept(chunk) {
            Ok(Some(set)) => set,
            Ok(None) => continue,
            Err(e) if e.is_warning() => {
                report.stale_warnings += 1;
                continue;
            }
            Err(source) => {
                return Err(RuntimeError::Buffer {
                    node: name.to_string(),
                    source,
                })
            }
        };
        let merged = state
            .complete_merge(set.iter(), set.number)
            .map_err(|source| RuntimeError::Merge {
                node: name.to_string(),
                source,
            })?;
        report.merges.push(MergeLogEntry {
            number: merged.number,
            continuity: merged.continuity,
            scenarios: merged
                .scenarios()
                .into_iter()
                .map(|(k, s)| (k.to_string(), s))
                .collect(),
        });
        let m = merged.alignment;
        let base = AlignmentParams {
            included_past: m.included_past / r,
            dropped_after_discontinuity: m.dropped_after_discontinuity / r,
            ..m
        };
        let outputs = proc.process(&merged).map_err(|source| RuntimeError::Process {
            node: name.to_string(),
            source,
        })?;
        for out in outputs {
            let rel = *relative.get(out.feature.as_str()).ok_or_else(|| RuntimeError::UnknownFeature {
                producer: name.to_string(),
                feature: out.feature.clone(),
            })?;
            let outlet = outlets
                .iter_mut()
                .find(|o| o.key.feature == out.feature)
                .expect("one outlet per feature");
            let chunk = DataChunk {
                number: merged.number,
                key: outlet.key.clone(),
                payload: out.payload,
                sample_rate: out.sample_rate,
                channel_freqs: out.channel_freqs,
                alignment: compose(base, rel)?,
                continuity: merged.continuity,
            };
            outlet.publish(name, chunk)?;
        }
    }
    report.counters = Some(buffer.counters());
    report.pending_at_end = buffer.occupancy();
    report.calibration = proc.calibration();
    report.extra = proc.report();
    report.published = finish_outlets(outlets)?;
    Ok(report)
}

/// Network link halves: frames go out through `writer`, come back through
/// `reader` and land in the consumer's inbox.
fn net_writer(
    rx: Receiver<Arc<DataChunk>>,
    stream: TcpStream,
    faults: EdgeFaults,
    stats: Arc<Mutex<LinkStats>>,
    edge: String,
) -> Result<(), RuntimeError> {
    let wire = |source| RuntimeError::Wire {
        edge: edge.clone(),
        source,
    };
    let mut w = FrameWriter::new(stream);
    for chunk in rx {
        let mut frame = encode(&chunk);
        match faults.action(chunk.number) {
            EdgeAction::Deliver => {}
            EdgeAction::Drop => {
                stats.lock().expect("stats lock").dropped += 1;
                continue;
            }
            EdgeAction::Corrupt => {
                stats.lock().expect("stats lock").corrupted += 1;
                corrupt_frame(&mut frame);
            }
        }
        w.send_bytes(&frame).map_err(wire)?;
    }
    w.flush().map_err(wire)?;
    Ok(())
}

fn net_reader(
    stream: TcpStream,
    tx: Inbox,
    stats: Arc<Mutex<LinkStats>>,
    edge: String,
) -> Result<(), RuntimeError> {
    let mut r = FrameReader::new(stream);
    loop {
        match r.recv() {
            Ok(Some(Ok(chunk))) => {
                stats.lock().expect("stats lock").delivered += 1;
                tx.send(Arc::new(chunk))
                    .map_err(|_| RuntimeError::Downstream(edge.clone()))?;
            }
            Ok(Some(Err(_))) => stats.lock().expect("stats lock").rejected += 1,
            Ok(None) => return Ok(()),
            Err(source) => return Err(RuntimeError::Wire { edge, source }),
        }
    }
}

fn connect(address: &str, edge: &str) -> Result<(TcpStream, TcpStream), RuntimeError> {
    let io = |e: std::io::Error| RuntimeError::Io(format!("link `{edge}` at {address}: {e}"));
    let listener = TcpListener::bind(address).map_err(io)?;
    let local = listener.local_addr().map_err(io)?;
    let out = TcpStream::connect(local).map_err(io)?;
    let (incoming, _) = listener.accept().map_err(io)?;
    out.set_nodelay(true).map_err(io)?;
    Ok((out, incoming))
}

/// Picks the error that explains a failed run: a real failure beats the
/// "downstream stopped" errors it causes.
fn root_cause(errors: Vec<RuntimeError>) -> Option<RuntimeError> {
    let mut first_downstream = None;
    for e in errors {
        match e {
            RuntimeError::Downstream(_) => {
                first_downstream.get_or_insert(e);
            }
            e => return Some(e),
        }
    }
    first_downstream
}

enum Worker {
    Source(Box<dyn Source>),
    Processor(Box<dyn Processor>, Receiver<Arc<DataChunk>>),
}

/// Runs a validated graph to the end of its input.
pub fn run(graph: &ValidatedGraph, registry: &Registry, opts: &RunOptions) -> Result<RunReport, RuntimeError> {
    let started = Instant::now();
    let config = &graph.config;
    let depth = config.runtime.queue_depth;
    let watchdog = config.runtime.watchdog_ms.map(Duration::from_millis);
    let out_dir = opts.output_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let taps: BTreeSet<SourceKey> = if out_dir.is_some() {
        graph.output_keys()
    } else {
        BTreeSet::new()
    };

    let mut inbox_tx: BTreeMap<String, Inbox> = BTreeMap::new();
    let mut workers: Vec<(usize, Worker)> = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        let spec = config.processor(&node.name).expect("validated");
        let wrap = |source| RuntimeError::Process {
            node: node.name.clone(),
            source,
        };
        let worker = if node.is_source {
            let so = SourceOptions {
                seed: opts.seed.unwrap_or(config.seed),
                overflow_at: config.faults.overflows(&node.name),
                input_path: opts.input.clone(),
            };
            Worker::Source(registry.build_source(&spec.kind, &spec.params, &so).map_err(wrap)?)
        } else {
            let (tx, rx) = bounded(depth);
            inbox_tx.insert(node.name.clone(), tx);
            Worker::Processor(registry.build_processor(&spec.kind, &spec.params).map_err(wrap)?, rx)
        };
        workers.push((i, worker));
    }

    let mut link_stats = Vec::new();
    let mut net_halves = Vec::new();
    let mut outlets: Vec<Vec<Outlet>> = Vec::new();
    for node in &graph.nodes {
        let mut node_outlets = Vec::new();
        for f in &node.features {
            let mut links = Vec::new();
            for (edge, spec) in graph.edges_from(&f.key) {
                let stats = Arc::new(Mutex::new(LinkStats {
                    edge: edge.to_string(),
                    transport: format!("{:?}", spec.transport).to_lowercase(),
                    ..LinkStats::default()
                }));
                link_stats.push(stats.clone());
                let faults = config.faults.for_edge(edge);
                let consumer = inbox_tx[&edge.to].clone();
                match spec.transport {
                    Transport::Local => links.push(Link {
                        edge: edge.clone(),
                        faults: Some(faults),
                        tx: consumer,
                        stats,
                    }),
                    Transport::Tcp => {
                        let address = spec.address.as_deref().expect("validated");
                        let (out, incoming) = connect(address, &edge.to_string())?;
                        let (tx, rx) = bounded(depth);
                        links.push(Link {
                            edge: edge.clone(),
                            faults: None,
                            tx,
                            stats: stats.clone(),
                        });
                        net_halves.push((edge.to_string(), rx, out, incoming, faults, consumer, stats));
                    }
                }
            }
            node_outlets.push(Outlet {
                key: f.key.clone(),
                links,
                tap: taps.contains(&f.key).then(|| TfWriter::new(out_dir.expect("taps need a dir"), f.key.clone())),
                stats: KeyStats::default(),
            });
        }
        outlets.push(node_outlets);
    }
    drop(inbox_tx);

    let mut errors = Vec::new();
    let mut reports: Vec<Option<NodeReport>> = vec![None; graph.nodes.len()];
    thread::scope(|s| {
        let mut net_handles = Vec::new();
        for (edge, rx, out, incoming, faults, consumer, stats) in net_halves {
            let st = stats.clone();
            let e = edge.clone();
            net_handles.push((edge.clone(), s.spawn(move || net_writer(rx, out, faults, st, e))));
            net_handles.push((edge.clone(), s.spawn(move || net_reader(incoming, consumer, stats, edge))));
        }
        let mut handles = Vec::new();
        for ((i, worker), node_outlets) in workers.into_iter().zip(outlets) {
            let node = &graph.nodes[i];
            let h = thread::Builder::new()
                .name(node.name.clone())
                .spawn_scoped(s, move || match worker {
                    Worker::Source(src) => run_source(node, src, node_outlets),
                    Worker::Processor(p, rx) => run_processor(node, p, rx, node_outlets, watchdog),
                })
                .expect("spawn worker");
            handles.push((i, h));
        }
        for (i, h) in handles {
            match h.join() {
                Ok(Ok(r)) => reports[i] = Some(r),
                Ok(Err(e)) => errors.push(e),
                Err(_) => errors.push(RuntimeError::Panic(graph.nodes[i].name.clone())),
            }
        }
        for (edge, h) in net_handles {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => errors.push(e),
                Err(_) => errors.push(RuntimeError::Panic(format!("link {edge}"))),
            }
        }
    });
    if let Some(e) = root_cause(errors) {
        return Err(e);
    }

    let mut files: Vec<String> = Vec::new();
    if let Some(dir) = out_dir {
        for k in &taps {
            files.push(crate::tffile::tf_path(dir, k).display().to_string());
        }
        if let Some(csv) = config.output.csv.as_deref().and_then(SourceKey::parse) {
            export_csv(graph, dir, &csv)?;
            files.push(dir.join(format!("{}.{}.csv", csv.producer, csv.feature)).display().to_string());
        }
    }
    Ok(RunReport {
        nodes: reports.into_iter().map(|r| r.expect("joined")).collect(),
        links: link_stats
            .into_iter()
            .map(|s| s.lock().expect("stats lock").clone())
            .collect(),
        files,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

/// Validates and runs a configuration file in one step.
pub fn run_config(
    config_path: &Path,
    registry: &Registry,
    opts: &RunOptions,
) -> Result<RunReport, RuntimeError> {
    let config = crate::config::PipelineConfig::load(config_path)?;
    let graph = crate::graph::validate_graph(&config, registry)?;
    run(&graph, registry, opts)
}
