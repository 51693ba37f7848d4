//! Pipeline runtime: configuration, graph validation, threaded execution,
//! TF output files and the unchunked reference run.
//!
//! ```no_run
//! use tfstream_runtime::{run, validate_graph, PipelineConfig, RunOptions};
//!
//! let registry = tfstream_dsp::builtin_registry();
//! let config = PipelineConfig::load("pipeline.toml")?;
//! let graph = validate_graph(&config, &registry)?;
//! let report = run(&graph, &registry, &RunOptions::default())?;
//! println!("{}", serde_json::to_string_pretty(&report).unwrap());
//! # Ok::<(), tfstream_runtime::RuntimeError>(())
//! ```

pub mod config;
pub mod error;
pub mod export;
pub mod graph;
pub mod oracle;
pub mod run;
pub mod tffile;

pub use config::{EdgeSpec, OutputSpec, PipelineConfig, ProcessorSpec, RuntimeOptions, Transport};
pub use error::RuntimeError;
pub use export::{assemble, export_csv, load_key, write_block_csv, Segment};
pub use graph::{validate_graph, FeatureInfo, NodeInfo, ValidatedGraph};
pub use oracle::{compare_dir, compare_segments, run_oracle, write_oracle, KeyComparison, OracleResult, OracleSeries};
pub use run::{run, run_config, KeyStats, LinkStats, MergeLogEntry, NodeReport, RunOptions, RunReport};
pub use tffile::{read_tf, tf_path, TfHeader, TfRecord, TfWriter};
