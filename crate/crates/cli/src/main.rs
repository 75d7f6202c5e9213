use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sks_core::experiment::ExperimentSpec;
use sks_core::graph::{parse_edge_list, parse_pair_list};
use sks_core::inference::GraphView;
use sks_core::{Answer, InferenceParams, SimTime, SocialMultiGraph};

#[derive(Parser)]
#[command(name = "sks", version, about = "Social knowledge service experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its CSV outputs.
    Run {
        spec: PathBuf,
        /// Replaces the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, instead of the spec's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a spec without running it.
    Validate { spec: PathBuf },
    /// Answer requests centrally on a graph, one JSON object per line.
    Oracle {
        graph: PathBuf,
        /// JSON lines of inference parameters.
        requests: PathBuf,
        #[arg(long, value_enum, default_value_t = GraphFormat::EdgeList)]
        format: GraphFormat,
        /// Simulated evaluation time in seconds, for edge aging.
        #[arg(long, default_value_t = 0.0)]
        at: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    EdgeList,
    PairList,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec, seed, out } => run(&spec, seed, out),
        Command::Validate { spec } => validate(&spec),
        Command::Oracle {
            graph,
            requests,
            format,
            at,
        } => oracle(&graph, &requests, format, at),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode, String> {
    let mut spec = ExperimentSpec::load(path).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(dir) = out {
        // Relative to the working directory, not the spec file.
        spec.output_dir = std::env::current_dir()
            .map_err(|e| e.to_string())?
            .join(dir);
    }
    let report = spec.run().map_err(|e| e.to_string())?;
    print!("{}", report.table);
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(path: &Path) -> Result<ExitCode, String> {
    let spec = ExperimentSpec::load(path).map_err(|e| e.to_string())?;
    let diagnostics = spec.validate();
    if diagnostics.is_empty() {
        println!("{}: ok", path.display());
        return Ok(ExitCode::SUCCESS);
    }
    for d in &diagnostics {
        eprintln!("{}: {d}", path.display());
    }
    Ok(ExitCode::FAILURE)
}

fn load_graph(path: &Path, format: GraphFormat) -> Result<SocialMultiGraph, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let reader = BufReader::new(file);
    match format {
        GraphFormat::EdgeList => parse_edge_list(reader),
        GraphFormat::PairList => parse_pair_list(reader),
    }
    .map_err(|e| format!("{}: {e}", path.display()))
}

fn answer_json(answer: &Answer) -> Value {
    match answer {
        Answer::Bool(b) => json!(b),
        Answer::Real(x) => json!(x),
        Answer::Users(users) => users
            .iter()
            .map(|(u, score)| json!({ "uid": u.to_string(), "score": score }))
            .collect(),
    }
}

fn oracle(graph: &Path, requests: &Path, format: GraphFormat, at: f64) -> Result<ExitCode, String> {
    let g = load_graph(graph, format)?;
    let file = File::open(requests).map_err(|e| format!("{}: {e}", requests.display()))?;
    let view = GraphView::new(&g, SimTime::from_secs_f64(at));
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut failures = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let req: InferenceParams = serde_json::from_str(&line)
            .map_err(|e| format!("{}:{}: {e}", requests.display(), i + 1))?;
        let record = match view.evaluate(&req) {
            Ok(a) => {
                json!({ "request_id": req.request_id, "kind": req.kind.as_str(), "answer": answer_json(&a) })
            }
            Err(e) => {
                failures += 1;
                json!({ "request_id": req.request_id, "kind": req.kind.as_str(), "error": e.to_string() })
            }
        };
        writeln!(out, "{record}").map_err(|e| e.to_string())?;
    }
    out.flush().map_err(|e| e.to_string())?;
    if failures > 0 {
        log::warn!("{failures} requests could not be answered");
    }
    Ok(ExitCode::SUCCESS)
}
