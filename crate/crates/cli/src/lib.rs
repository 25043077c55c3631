//! `vlaudit` command-line front end.
//!
//! Exit codes are a stable contract: 0 success, 2 input or configuration
//! error, 3 computation error, 64 usage error.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vlaudit_core::Axis;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_COMPUTE: u8 = 3;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "vlaudit",
    version,
    about = "Demographic bias audits for image-text embedding spaces"
)]
pub struct Cli {
    /// Worker threads for similarity and scanning work (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,

    /// Log verbosity on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Audit caption embeddings against a labeled image set.
    Audit(AuditArgs),
    /// Render the taxonomy's captions and the manifest the text encoder consumes.
    RenderCaptions(RenderArgs),
    /// Count gendered-pronoun co-occurrence of words in caption corpora.
    Scan(ScanArgs),
    /// Tabulate mean normalized entropy per category across model reports.
    Compare(CompareArgs),
    /// Print and validate embedding or metadata file headers.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Image embeddings (EMB1).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Image demographic metadata CSV.
    #[arg(long)]
    pub metadata: PathBuf,
    /// Caption embeddings (EMB1), one row per rendered caption.
    #[arg(long)]
    pub caption_vectors: PathBuf,
    /// Caption manifest the vectors were encoded from
    /// (default: <caption-vectors stem>.manifest.json).
    #[arg(long)]
    pub caption_manifest: Option<PathBuf>,
    /// Taxonomy JSON (default: the bundled taxonomy).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Retrieval depth.
    #[arg(short, long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Comma-separated axes: race, gender, race_gender.
    #[arg(long, value_delimiter = ',', value_parser = parse_axis, default_value = "race,gender,race_gender")]
    pub axes: Vec<Axis>,
    /// Baseline mean top-k similarities (JSON array or one number per line).
    #[arg(long, conflicts_with = "baseline_vectors")]
    pub baseline_means: Option<PathBuf>,
    /// Baseline word embeddings (EMB1); their mean top-k similarities are
    /// computed against the audited images with the same k.
    #[arg(long)]
    pub baseline_vectors: Option<PathBuf>,
    /// Output directory for report.json, report.csv and grid CSVs.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Model name recorded in the report.
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Dataset name recorded in the report.
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Taxonomy JSON (default: the bundled taxonomy).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Caption text output, one caption per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest output (default: <out stem>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Lines,
    Csv,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Corpus files; gzip is detected automatically.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Lines)]
    pub format: FormatArg,
    /// Caption column for CSV corpora.
    #[arg(long, default_value = "caption")]
    pub caption_column: String,
    /// Words to count: one per line, or a taxonomy JSON.
    #[arg(long)]
    pub words_file: PathBuf,
    /// Restrict a taxonomy words file to these categories (repeatable).
    #[arg(long)]
    pub category: Vec<String>,
    /// Pronoun lexicon JSON {"male": [...], "female": [...]}.
    #[arg(long)]
    pub lexicon_file: Option<PathBuf>,
    /// Scanner worker threads (default: --threads or all cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    /// Keep apostrophes inside tokens ("she's" stays one token).
    #[arg(long)]
    pub no_split_clitics: bool,
    /// Output directory for stats.json and proportions.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Audit report JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// CSV output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// EMB1 embedding files or metadata CSVs.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Also check alignment of a single embedding file with this metadata.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.trim().parse::<Axis>().map_err(|e| e.to_string())
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl From<vlaudit_core::Error> for CliError {
    fn from(e: vlaudit_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Compute(e.to_string())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
        {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
