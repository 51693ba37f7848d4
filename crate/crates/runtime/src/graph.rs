//! Graph validation: topology, cumulative alignment, chunk-length bound.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use serde::Serialize;
use tfstream_core::{
    compose, merge_params, AlignmentParams, NodeTraits, Registry, SourceKey, SourceOptions,
};
use tfstream_wire::EdgeId;

use crate::config::{EdgeSpec, PipelineConfig, Transport};
use crate::error::RuntimeError;

/// A published representation with its relative and cumulative alignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureInfo {
    pub key: SourceKey,
    pub relative: AlignmentParams,
    pub cumulative: AlignmentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeInfo {
    pub name: String,
    pub kind: String,
    pub is_source: bool,
    /// Input keys, sorted.
    pub inputs: Vec<SourceKey>,
    pub rate_divisor: u32,
    pub needs_calibration: bool,
    /// Merged cumulative alignment of the inputs, before rate division.
    pub merged: AlignmentParams,
    pub features: Vec<FeatureInfo>,
    /// Output rate = source rate / `total_divisor`.
    pub total_divisor: u64,
    /// Output time steps per nominal input chunk.
    pub steps_per_chunk: u64,
}

/// A checked configuration plus everything derived from it.
#[derive(Debug, Clone)]
pub struct ValidatedGraph {
    pub config: PipelineConfig,
    /// In topological order; the single input node comes first.
    pub nodes: Vec<NodeInfo>,
    pub edges: Vec<(EdgeId, EdgeSpec)>,
    pub source: String,
    pub chunk_len: usize,
    pub calibration_len: Option<usize>,
    /// Smallest input chunk length that satisfies every `d + p < e` bound.
    pub min_chunk_len: usize,
}

impl ValidatedGraph {
    pub fn node(&self, name: &str) -> Option<&NodeInfo> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn feature(&self, key: &SourceKey) -> Option<&FeatureInfo> {
        self.node(&key.producer)?.features.iter().find(|f| &f.key == key)
    }

    pub fn published_keys(&self) -> impl Iterator<Item = &SourceKey> {
        self.nodes.iter().flat_map(|n| n.features.iter().map(|f| &f.key))
    }

    pub fn edges_from<'a>(&'a self, key: &'a SourceKey) -> impl Iterator<Item = &'a (EdgeId, EdgeSpec)> {
        self.edges.iter().filter(move |(e, _)| &e.from == key)
    }

    /// Keys written to output files: the taps plus the CSV key.
    pub fn output_keys(&self) -> BTreeSet<SourceKey> {
        let out = &self.config.output;
        out.taps
            .iter()
            .chain(out.csv.iter())
            .filter_map(|k| SourceKey::parse(k))
            .collect()
    }

    /// Chunk numbers start here for signal data (after any calibration chunk).
    pub fn first_data_number(&self) -> u64 {
        self.calibration_len.is_some() as u64
    }
}

fn check_name(name: &str) -> Result<(), RuntimeError> {
    if name.is_empty() || name.contains('.') || name.contains(char::is_whitespace) || name.contains("->") {
        return Err(RuntimeError::Config(format!(
            "processor name `{name}` must be non-empty without dots, arrows or spaces"
        )));
    }
    Ok(())
}

/// Checks a configuration against a registry and derives the cumulative
/// alignment of every published key.
pub fn validate_graph(config: &PipelineConfig, registry: &Registry) -> Result<ValidatedGraph, RuntimeError> {
    struct Raw {
        kind: String,
        is_source: bool,
        traits: NodeTraits,
        features: Vec<(String, AlignmentParams)>,
        chunk_len: usize,
        calibration_len: Option<usize>,
    }

    let mut index = BTreeMap::new();
    let mut raw = Vec::new();
    for (i, spec) in config.processors.iter().enumerate() {
        check_name(&spec.name)?;
        if index.insert(spec.name.clone(), i).is_some() {
            return Err(RuntimeError::DuplicateName(spec.name.clone()));
        }
        let unknown = || RuntimeError::UnknownProcessorKind {
            name: spec.name.clone(),
            kind: spec.kind.clone(),
        };
        registry.get(&spec.kind).ok_or_else(unknown)?;
        let wrap = |source| RuntimeError::Process {
            node: spec.name.clone(),
            source,
        };
        let r = if registry.is_source(&spec.kind) {
            let opts = SourceOptions {
                seed: config.seed,
                overflow_at: config.faults.overflows(&spec.name),
                input_path: None,
            };
            let s = registry.build_source(&spec.kind, &spec.params, &opts).map_err(wrap)?;
            Raw {
                kind: spec.kind.clone(),
                is_source: true,
                traits: NodeTraits {
                    rate_divisor: 1,
                    ..NodeTraits::default()
                },
                features: vec![(s.feature().to_string(), AlignmentParams::ZERO)],
                chunk_len: s.chunk_len(),
                calibration_len: s.calibration_len(),
            }
        } else {
            let p = registry.build_processor(&spec.kind, &spec.params).map_err(wrap)?;
            let traits = p.traits();
            if traits.rate_divisor == 0 {
                return Err(RuntimeError::Config(format!("`{}` reports rate divisor 0", spec.name)));
            }
            Raw {
                kind: spec.kind.clone(),
                is_source: false,
                traits,
                features: p.features().into_iter().map(|f| (f.name, f.alignment)).collect(),
                chunk_len: 0,
                calibration_len: None,
            }
        };
        for (feature, configured) in &spec.alignment {
            let declared = r
                .features
                .iter()
                .find(|(f, _)| f == feature)
                .map(|(_, a)| *a)
                .ok_or_else(|| RuntimeError::UnknownFeature {
                    producer: spec.name.clone(),
                    feature: feature.clone(),
                })?;
            if declared != *configured {
                return Err(RuntimeError::AlignmentMismatch {
                    processor: spec.name.clone(),
                    feature: feature.clone(),
                    declared,
                    configured: *configured,
                });
            }
        }
        raw.push(r);
    }

    let mut edges = Vec::new();
    let mut inputs: Vec<Vec<SourceKey>> = vec![Vec::new(); raw.len()];
    let mut dag = DiGraph::<usize, ()>::new();
    let ids: Vec<_> = (0..raw.len()).map(|i| dag.add_node(i)).collect();
    for e in &config.edges {
        let label = format!("{} -> {}", e.from, e.to);
        let from = SourceKey::parse(&e.from)
            .ok_or_else(|| RuntimeError::BadEdge(label.clone(), "expected producer.feature".into()))?;
        let p = *index.get(&from.producer).ok_or_else(|| RuntimeError::UnknownNode {
            edge: label.clone(),
            name: from.producer.clone(),
        })?;
        let c = *index.get(&e.to).ok_or_else(|| RuntimeError::UnknownNode {
            edge: label.clone(),
            name: e.to.clone(),
        })?;
        if !raw[p].features.iter().any(|(f, _)| *f == from.feature) {
            return Err(RuntimeError::UnknownFeature {
                producer: from.producer.clone(),
                feature: from.feature.clone(),
            });
        }
        if raw[c].is_source {
            return Err(RuntimeError::BadEdge(label, "input nodes take no inputs".into()));
        }
        if inputs[c].contains(&from) {
            return Err(RuntimeError::BadEdge(label, "duplicate edge".into()));
        }
        if e.transport == Transport::Tcp && e.address.is_none() {
            return Err(RuntimeError::BadEdge(label, "tcp transport needs an address".into()));
        }
        inputs[c].push(from.clone());
        dag.add_edge(ids[p], ids[c], ());
        edges.push((EdgeId::new(from, e.to.clone()), e.clone()));
    }

    let order = toposort(&dag, None)
        .map_err(|cycle| RuntimeError::Cycle(config.processors[dag[cycle.node_id()]].name.clone()))?;

    let sources: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_source).collect();
    let source = match sources[..] {
        [] => return Err(RuntimeError::NoSource),
        [s] => s,
        _ => return Err(RuntimeError::MultipleSources(sources.len())),
    };
    let chunk_len = raw[source].chunk_len;
    let calibration_len = raw[source].calibration_len;

    let mut nodes: Vec<NodeInfo> = Vec::new();
    let mut min_chunk_len = 1usize;
    let mut done: BTreeMap<String, usize> = BTreeMap::new();
    for id in order {
        let i = dag[id];
        let name = config.processors[i].name.clone();
        let r = &raw[i];
        let mut ins = inputs[i].clone();
        ins.sort();
        let (merged, in_divisor, in_steps) = if r.is_source {
            (AlignmentParams::ZERO, 1u64, chunk_len as u64)
        } else {
            if ins.is_empty() {
                return Err(RuntimeError::NoInputs(name));
            }
            let have: BTreeSet<&str> = ins.iter().map(|k| k.feature.as_str()).collect();
            let missing: Vec<String> = r
                .traits
                .required_inputs
                .iter()
                .filter(|f| !have.contains(f.as_str()))
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(RuntimeError::MissingInputs { processor: name, missing });
            }
            let ups: Vec<&FeatureInfo> = ins
                .iter()
                .map(|k| {
                    let n = &nodes[done[&k.producer]];
                    n.features.iter().find(|f| &f.key == k).expect("feature checked")
                })
                .collect();
            let divs: BTreeSet<u64> = ins.iter().map(|k| nodes[done[&k.producer]].total_divisor).collect();
            if divs.len() != 1 {
                return Err(RuntimeError::RateMismatch(name));
            }
            let up = &nodes[done[&ins[0].producer]];
            (
                merge_params(ups.iter().map(|f| &f.cumulative))?,
                up.total_divisor,
                up.steps_per_chunk,
            )
        };

        let r_div = r.traits.rate_divisor as u64;
        let divisible = |what: &str, value: u64| {
            if value % r_div == 0 {
                Ok(())
            } else {
                Err(RuntimeError::RateDivisibility {
                    processor: name.clone(),
                    divisor: r.traits.rate_divisor,
                    what: what.to_string(),
                    value,
                })
            }
        };
        divisible("incoming included_past", merged.included_past as u64)?;
        divisible("incoming dropped_after_discontinuity", merged.dropped_after_discontinuity as u64)?;
        divisible("time steps per chunk", in_steps)?;
        let base = AlignmentParams {
            included_past: merged.included_past / r.traits.rate_divisor,
            dropped_after_discontinuity: merged.dropped_after_discontinuity / r.traits.rate_divisor,
            ..merged
        };
        let total_divisor = in_divisor * r_div;
        let steps = in_steps / r_div;

        let mut features = Vec::new();
        for (feature, rel) in &r.features {
            let key = SourceKey::new(name.clone(), feature.clone());
            let cumulative = compose(base, *rel)?;
            let extent = cumulative.time_extent();
            let required = ((extent + 1) * total_divisor) as usize;
            min_chunk_len = min_chunk_len.max(required);
            let too_short = |len: usize, steps: u64| RuntimeError::ChunkTooShortForDepth {
                processor: name.clone(),
                key: key.to_string(),
                chunk_len: len,
                steps,
                extent,
                required,
            };
            if extent >= steps {
                return Err(too_short(chunk_len, steps));
            }
            if let Some(cal) = calibration_len {
                let cal_steps = cal as u64 / total_divisor;
                if extent >= cal_steps {
                    return Err(too_short(cal, cal_steps));
                }
            }
            features.push(FeatureInfo {
                key,
                relative: *rel,
                cumulative,
            });
        }
        if r.traits.needs_calibration && calibration_len.is_none() {
            return Err(RuntimeError::MissingCalibration(name));
        }
        done.insert(name.clone(), nodes.len());
        nodes.push(NodeInfo {
            name,
            kind: r.kind.clone(),
            is_source: r.is_source,
            inputs: ins,
            rate_divisor: r.traits.rate_divisor,
            needs_calibration: r.traits.needs_calibration,
            merged,
            features,
            total_divisor,
            steps_per_chunk: steps,
        });
    }

    let edge_ids: Vec<EdgeId> = edges.iter().map(|(e, _)| e.clone()).collect();
    let source_name = config.processors[source].name.clone();
    config.faults.validate(&edge_ids, &[source_name.as_str()])?;

    let graph = ValidatedGraph {
        config: config.clone(),
        nodes,
        edges,
        source: source_name,
        chunk_len,
        calibration_len,
        min_chunk_len,
    };
    let published: BTreeSet<&SourceKey> = graph.published_keys().collect();
    let out = &config.output;
    for k in out.taps.iter().chain(out.csv.iter()) {
        match SourceKey::parse(k) {
            Some(key) if published.contains(&key) => {}
            _ => return Err(RuntimeError::UnknownOutput(k.clone())),
        }
    }
    if out.block.0 == 0 || out.block.1 == 0 {
        return Err(RuntimeError::Config("output block sizes must be positive".into()));
    }
    if config.runtime.queue_depth == 0 {
        return Err(RuntimeError::Config("queue_depth must be positive".into()));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tfstream_dsp::builtin_registry;

    const TONAL_GRAPH: &str = r#"
        [[processors]]
        name = "wav"
        kind = "wav_reader"
        params = { chunk_size = 4096, calibration_samples = 16000 }

        [[processors]]
        name = "rs"
        kind = "resampler"
        params = { factor = 2, fir_length = 33 }

        [[processors]]
        name = "fb"
        kind = "gammachirp_filterbank"
        params = { sample_rate = 8000.0, channels = 32, impulse_len = 200 }

        [[processors]]
        name = "se"
        kind = "structure_extractor"
        params = { w_t = 30, w_s = 2 }

        [[processors]]
        name = "ptn"
        kind = "ptn"

        [[edges]]
        from = "wav.snd"
        to = "rs"
        [[edges]]
        from = "rs.snd"
        to = "fb"
        [[edges]]
        from = "fb.E"
        to = "se"
        [[edges]]
        from = "fb.E"
        to = "ptn"
        [[edges]]
        from = "se.T"
        to = "ptn"
    "#;

    fn cfg(text: &str) -> PipelineConfig {
        PipelineConfig::from_toml(text).unwrap()
    }

    #[test]
    fn fork_and_merge_topology() {
        let g = validate_graph(&cfg(TONAL_GRAPH), &builtin_registry()).unwrap();
        let names: Vec<_> = g.nodes.iter().map(|n| n.name.as_str()).collect();
        assert_eq!(names, ["wav", "rs", "fb", "se", "ptn"]);
        let ptn = g.node("ptn").unwrap();
        assert_eq!(ptn.inputs.len(), 2);
        // Path sums: resampler d=16 (at 8 kHz), filterbank d=200,
        // extractor (30, 30, 2, 2); the PTN merges E and T.
        let t = g.feature(&SourceKey::new("se", "T")).unwrap().cumulative;
        assert_eq!(t, AlignmentParams::new(30, 246, 2, 2));
        let et = g.feature(&SourceKey::new("ptn", "E_T")).unwrap().cumulative;
        assert_eq!(et, AlignmentParams::new(30, 246, 2, 2));
        assert_eq!(ptn.steps_per_chunk, 2048);
        assert_eq!(g.min_chunk_len, 2 * (276 + 1));
        assert_eq!(g.first_data_number(), 1);
    }

    #[test]
    fn self_edge_is_a_cycle() {
        let text = TONAL_GRAPH.to_string() + "[[edges]]\nfrom = \"se.T\"\nto = \"se\"\n";
        assert!(matches!(
            validate_graph(&cfg(&text), &builtin_registry()),
            Err(RuntimeError::Cycle(n)) if n == "se"
        ));
    }

    #[test]
    fn longer_cycle() {
        let text = r#"
            [[processors]]
            name = "m"
            kind = "mic_input"
            [[processors]]
            name = "a"
            kind = "resampler"
            [[processors]]
            name = "b"
            kind = "resampler"
            [[edges]]
            from = "m.snd"
            to = "a"
            [[edges]]
            from = "a.snd"
            to = "b"
            [[edges]]
            from = "b.snd"
            to = "a"
        "#;
        assert!(matches!(
            validate_graph(&cfg(text), &builtin_registry()),
            Err(RuntimeError::Cycle(_))
        ));
    }

    #[test]
    fn unknown_kind() {
        let text = TONAL_GRAPH.replace("kind = \"ptn\"", "kind = \"ptm\"");
        assert!(matches!(
            validate_graph(&cfg(&text), &builtin_registry()),
            Err(RuntimeError::UnknownProcessorKind { name, .. }) if name == "ptn"
        ));
    }

    #[test]
    fn chunk_too_short_names_processor_and_minimum() {
        let text = TONAL_GRAPH.replace("chunk_size = 4096", "chunk_size = 500");
        match validate_graph(&cfg(&text), &builtin_registry()) {
            Err(RuntimeError::ChunkTooShortForDepth { processor, required, .. }) => {
                assert_eq!(processor, "se");
                assert_eq!(required, 2 * (276 + 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_calibration_is_reported() {
        let text = TONAL_GRAPH.replace(", calibration_samples = 16000", "");
        let err = validate_graph(&cfg(&text), &builtin_registry()).unwrap_err();
        assert!(matches!(&err, RuntimeError::MissingCalibration(n) if n == "se"));
        assert!(err.to_string().contains("calibration"));
        let text = text.replace("w_s = 2 }", "w_s = 2, theta = 0.6, beta = 0.1 }");
        assert!(validate_graph(&cfg(&text), &builtin_registry()).is_ok());
    }

    #[test]
    fn rate_divisibility() {
        let text = TONAL_GRAPH.replace("chunk_size = 4096", "chunk_size = 4097");
        assert!(matches!(
            validate_graph(&cfg(&text), &builtin_registry()),
            Err(RuntimeError::RateDivisibility { .. })
        ));
    }

    #[test]
    fn bad_edges_and_outputs() {
        let reg = builtin_registry();
        let text = TONAL_GRAPH.replace("from = \"se.T\"", "from = \"se.X\"");
        assert!(matches!(validate_graph(&cfg(&text), &reg), Err(RuntimeError::UnknownFeature { .. })));
        let text = TONAL_GRAPH.replace("to = \"se\"", "to = \"sx\"");
        assert!(matches!(validate_graph(&cfg(&text), &reg), Err(RuntimeError::UnknownNode { .. })));
        let text = TONAL_GRAPH.to_string() + "[output]\ntaps = [\"ptn.Q\"]\n";
        assert!(matches!(validate_graph(&cfg(&text), &reg), Err(RuntimeError::UnknownOutput(_))));
        let text = TONAL_GRAPH.to_string() + "[[faults]]\ntype = \"drop_chunk\"\nedge = \"fb.E -> rs\"\nnumber = 1\n";
        assert!(matches!(validate_graph(&cfg(&text), &reg), Err(RuntimeError::Fault(_))));
        let text = TONAL_GRAPH.replace("[[edges]]\n        from = \"se.T\"\n        to = \"ptn\"", "");
        assert!(matches!(validate_graph(&cfg(&text), &reg), Err(RuntimeError::MissingInputs { .. })));
    }

    #[test]
    fn configured_alignment_must_match() {
        let text = TONAL_GRAPH.replace(
            "kind = \"structure_extractor\"",
            "kind = \"structure_extractor\"\n        alignment = { T = { included_past = 3 } }",
        );
        assert!(matches!(
            validate_graph(&cfg(&text), &builtin_registry()),
            Err(RuntimeError::AlignmentMismatch { .. })
        ));
    }
}
