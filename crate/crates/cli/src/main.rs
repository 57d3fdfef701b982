mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Quality assessment toolkit for AI-generated audio-visual content.
#[derive(Debug, Parser)]
#[command(name = "agavqa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the instruction-response pre-training corpus from source items.
    SynthCorpus(SynthArgs),
    /// Normalise raw ratings and write one MOS record per item.
    AggregateMos(AggregateArgs),
    /// Inter-rater reliability and dimension statistics of a ratings file.
    Reliability(ReliabilityArgs),
    /// K-fold score prediction metrics for a backend.
    EvalScore(EvalScoreArgs),
    /// Optimal-selection accuracy for a backend.
    EvalPair(EvalPairArgs),
    /// Expected accuracy of uniform guessing on a set of groups.
    RandomBaseline(BaselineArgs),
    /// Run the rating-collection service.
    Serve(ServeArgs),
    /// Replay a study's event log and write the deduplicated ratings.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report destination; standard output when absent.
    #[arg(long, env = "AGAVQA_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "AGAVQA_FORMAT", value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON-lines file of source items.
    #[arg(long, env = "AGAVQA_MANIFEST")]
    manifest: PathBuf,
    /// Pairs per scenario, e.g. `av=16,at=16,mt=8`.
    #[arg(long, env = "AGAVQA_TARGETS")]
    targets: String,
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
    /// Where the corpus manifest is written.
    #[arg(long, env = "AGAVQA_OUT")]
    out: PathBuf,
    /// Root that source audio paths resolve against; enables writing reversed audio.
    #[arg(long, env = "AGAVQA_MEDIA_ROOT")]
    media_root: Option<PathBuf>,
    /// Directory for reversed audio; defaults to `reversed/` next to `--out`.
    #[arg(long, env = "AGAVQA_REVERSED_DIR", requires = "media_root")]
    reversed_dir: Option<PathBuf>,
    /// Summary report destination; standard output when absent.
    #[arg(long, env = "AGAVQA_REPORT")]
    report: Option<PathBuf>,
    #[arg(long, env = "AGAVQA_FORMAT", value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// JSON-lines file of rating records.
    #[arg(long, env = "AGAVQA_RATINGS")]
    ratings: PathBuf,
    /// Recorded in the report; aggregation itself is not random.
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
    /// Where the MOS records are written.
    #[arg(long, env = "AGAVQA_OUT")]
    out: PathBuf,
    #[arg(long, env = "AGAVQA_REPORT")]
    report: Option<PathBuf>,
    #[arg(long, env = "AGAVQA_FORMAT", value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct ReliabilityArgs {
    #[arg(long, env = "AGAVQA_RATINGS")]
    ratings: PathBuf,
    /// Item manifest supplying categories for the per-category spread.
    #[arg(long, env = "AGAVQA_MANIFEST")]
    manifest: Option<PathBuf>,
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
    /// Split-half repetitions.
    #[arg(long, env = "AGAVQA_REPETITIONS", default_value_t = 10)]
    repetitions: usize,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Auto,
    Triple,
    Levels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrientationArg {
    QualityAscending,
    LevelIndexed,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// `mock:<kind>[:params]`, `http`, or an http(s) base URL.
    #[arg(long, env = "AGAVQA_BACKEND")]
    backend: String,
    #[arg(long, env = "AGAVQA_BASE_URL")]
    base_url: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, env = "AGAVQA_TIMEOUT", default_value_t = 30.0)]
    timeout: f64,
    #[arg(long, env = "AGAVQA_RETRIES", default_value_t = 3)]
    retries: u32,
    /// Worker threads; also bounds in-flight remote requests.
    #[arg(long, env = "AGAVQA_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long, env = "AGAVQA_ORIENTATION", value_enum, default_value = "quality-ascending")]
    orientation: OrientationArg,
}

#[derive(Debug, Args)]
struct EvalScoreArgs {
    /// JSON-lines file of items with ground-truth MOS.
    #[arg(long, env = "AGAVQA_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "AGAVQA_K", default_value_t = 5)]
    k: usize,
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "AGAVQA_SCORE_SOURCE", value_enum, default_value = "auto")]
    score_source: SourceArg,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    /// Every protocol the backend supports.
    Auto,
    MultiInput,
    SingleInput,
    Both,
}

#[derive(Debug, Args)]
struct EvalPairArgs {
    /// JSON-lines file of pair groups.
    #[arg(long, env = "AGAVQA_GROUPS")]
    groups: PathBuf,
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "AGAVQA_PROTOCOL", value_enum, default_value = "auto")]
    protocol: ProtocolArg,
    #[arg(long, env = "AGAVQA_SCORE_SOURCE", value_enum, default_value = "auto")]
    score_source: SourceArg,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long, env = "AGAVQA_GROUPS")]
    groups: PathBuf,
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// JSON-lines file of the items to be rated.
    #[arg(long, env = "AGAVQA_MANIFEST")]
    manifest: PathBuf,
    #[arg(long, env = "AGAVQA_STUDY_ID", default_value = "study")]
    study_id: String,
    /// Directory holding the study event logs.
    #[arg(long, env = "AGAVQA_STATE_DIR", default_value = "state")]
    state_dir: PathBuf,
    /// Seed of the per-subject item order.
    #[arg(long, env = "AGAVQA_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, env = "AGAVQA_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "AGAVQA_PORT", default_value_t = 8080)]
    port: u16,
    /// Root that item media URIs resolve against.
    #[arg(long, env = "AGAVQA_MEDIA_ROOT")]
    media_root: Option<PathBuf>,
    #[arg(long, env = "AGAVQA_DAILY_CAP", default_value_t = agavqa_core::study::DEFAULT_DAILY_CAP)]
    daily_cap: u32,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Destination of the ratings; standard output when absent.
    #[arg(long, env = "AGAVQA_OUT")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(commands::Outcome::Valid) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Invalid(reason)) => {
            eprintln!("error: report is not valid: {reason}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
