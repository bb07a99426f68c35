//! `cogscreen`: batch refinement runs, prompt application, metric
//! evaluation, and the review service.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ABORTED: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_UNAVAILABLE: u8 = 69;
pub const EXIT_SOFTWARE: u8 = 70;

#[derive(Parser, Debug)]
#[command(name = "cogscreen", version, about = "Cognitive-concern screening of clinical notes with LLM prompt refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the automated refinement loop and write the run record.
    AgenticRun(AgenticRunArgs),
    /// Classify a dataset once per prompt and print a comparison table.
    Apply(ApplyArgs),
    /// Print metrics from raw counts or a stored run.
    Eval(EvalArgs),
    /// Serve the review API (and optionally the UI bundle).
    Serve(ServeArgs),
    /// Write a synthetic cohort and matching stub script.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Notes file, JSON Lines.
    #[arg(long)]
    notes: PathBuf,
    /// Reference labels file, JSON Lines.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct BackendArgs {
    /// OpenAI-compatible base URL, e.g. http://localhost:8000/v1.
    #[arg(long, conflicts_with = "stub")]
    backend_url: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, default_value = "llama3-8b-instruct")]
    model: String,
    /// Scripted stub backend (JSON stub script) instead of a live endpoint.
    #[arg(long)]
    stub: Option<PathBuf>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Transport-level retries per request.
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Worker threads for note classification.
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PairingArg {
    ByRole,
    Swapped,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SopRoutingArg {
    SpecificityImprover,
    Summarizer1,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PriorityArg {
    Sensitivity,
    Specificity,
}

#[derive(Args, Debug)]
struct AgenticRunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Starting prompt: a preset id or a prompt file.
    #[arg(long, default_value = "P0")]
    prompt: String,
    #[arg(long, default_value_t = 3)]
    max_iters: u32,
    #[arg(long, default_value_t = 0.8)]
    sens_threshold: f64,
    #[arg(long, default_value_t = 0.8)]
    spec_threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_stop: f64,
    #[arg(long, default_value_t = 5)]
    case_cap: usize,
    #[arg(long, default_value_t = 12_000)]
    char_budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chart-review guideline (plain text).
    #[arg(long)]
    sop: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PriorityArg::Sensitivity)]
    priority: PriorityArg,
    #[arg(long, value_enum, default_value_t = PairingArg::ByRole)]
    pairing: PairingArg,
    #[arg(long, value_enum, default_value_t = SopRoutingArg::SpecificityImprover)]
    sop_routing: SopRoutingArg,
    /// Where to write the run record.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Preset ids or prompt files; repeat or comma-separate.
    #[arg(long, required = true, value_delimiter = ',')]
    prompt: Vec<String>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["run", "counts"])))]
struct EvalArgs {
    /// Stored run record.
    #[arg(long)]
    run: Option<PathBuf>,
    /// tp,fp,tn,fn[,uncertain]
    #[arg(long)]
    counts: Option<String>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Require this bearer token on API calls (falls back to COGSCREEN_API_TOKEN).
    #[arg(long)]
    token: Option<String>,
    /// Directory of stored run files exposed read-only.
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    /// Directory where open sessions are written on shutdown.
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
    /// Built review UI to serve under /.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cases sampled per class for review.
    #[arg(long, default_value_t = 5)]
    sample_size: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for notes.jsonl, labels.jsonl and stub.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Synthetic spec (JSON); defaults to a two-refinement convergence scenario.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("COGSCREEN_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::AgenticRun(a) => commands::agentic_run(a),
        Command::Apply(a) => commands::apply(a),
        Command::Eval(a) => commands::eval(a),
        Command::Serve(a) => commands::serve(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("cogscreen: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
