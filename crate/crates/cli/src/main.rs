use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tfstream_core::{Registry, SourceKey};
use tfstream_runtime::{
    compare_dir, run, run_oracle, validate_graph, write_oracle, PipelineConfig, RunOptions, RuntimeError,
    ValidatedGraph,
};

#[derive(Parser)]
#[command(name = "tfstream", version, about = "Streaming time-frequency pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream an input through the pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Print run statistics as JSON.
        #[arg(long)]
        stats: bool,
    },
    /// Check a configuration and print the derived alignment per key.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Process the whole input as one chunk.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write the reference output here as TF files.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Compare against the TF files of a streamed run.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Relative tolerance for --compare.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

fn load(path: &PathBuf, registry: &Registry) -> Result<ValidatedGraph, RuntimeError> {
    let config = PipelineConfig::load(path)?;
    validate_graph(&config, registry)
}

fn keys_of(graph: &ValidatedGraph) -> Vec<SourceKey> {
    let out = graph.output_keys();
    if out.is_empty() {
        graph.published_keys().cloned().collect()
    } else {
        out.into_iter().collect()
    }
}

fn execute(cli: Cli) -> Result<bool, RuntimeError> {
    let registry = tfstream_dsp::builtin_registry();
    match cli.command {
        Command::Run {
            config,
            input,
            output,
            seed,
            stats,
        } => {
            let graph = load(&config, &registry)?;
            let opts = RunOptions {
                input,
                output_dir: Some(output),
                seed,
            };
            let report = run(&graph, &registry, &opts)?;
            if stats {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for f in &report.files {
                    println!("{f}");
                }
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let graph = load(&config, &registry)?;
            println!("ok: {} processors, {} edges", graph.nodes.len(), graph.edges.len());
            println!("minimum chunk length: {} samples", graph.min_chunk_len);
            for node in &graph.nodes {
                for f in &node.features {
                    let a = f.cumulative;
                    println!(
                        "{}: p={} d={} l={} s={} rate/{} steps/chunk={}",
                        f.key,
                        a.included_past,
                        a.dropped_after_discontinuity,
                        a.invalid_large_scales,
                        a.invalid_small_scales,
                        node.total_divisor,
                        node.steps_per_chunk
                    );
                }
            }
            Ok(true)
        }
        Command::Oracle {
            config,
            input,
            output,
            compare,
            seed,
            tolerance,
        } => {
            let graph = load(&config, &registry)?;
            let opts = RunOptions {
                input,
                output_dir: None,
                seed,
            };
            let result = run_oracle(&graph, &registry, &opts)?;
            let keys = keys_of(&graph);
            for key in &keys {
                if let Some(s) = result.series.get(key) {
                    println!("{key}: columns [{}, {})", s.start, s.end());
                }
            }
            if let Some(dir) = output {
                for p in write_oracle(&graph, &result, &dir, &keys)? {
                    println!("{}", p.display());
                }
            }
            let mut pass = true;
            if let Some(dir) = compare {
                for c in compare_dir(&graph, &result, &dir, &keys)? {
                    let ok = c.passes(tolerance);
                    pass &= ok;
                    println!(
                        "{} {}: coverage {} max_rel_error {:.3e} nan_mismatches {}",
                        if ok { "PASS" } else { "FAIL" },
                        c.key,
                        if c.coverage_equal { "equal" } else { "differs" },
                        c.max_rel_error,
                        c.nan_mismatches
                    );
                }
            }
            Ok(pass)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
