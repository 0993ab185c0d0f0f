//! `ctc-seg`: segment long recordings into utterances from CTC posteriors.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ctc-seg",
    version,
    about = "CTC segmentation of long recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align transcripts to posteriors and write segment files.
    Align(AlignArgs),
    /// Compare predicted segments against a reference.
    Eval(EvalArgs),
    /// Generate synthetic posteriors with planted boundaries.
    Synth(SynthArgs),
    /// Wrap a recording with material from its own end and start.
    Augment(AugmentArgs),
    /// Print normalized transcript lines.
    Normalize(NormalizeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Kaldi,
    Json,
    Both,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Posterior file of one recording.
    #[arg(long, required_unless_present = "dir", conflicts_with = "dir")]
    pub posteriors: Option<PathBuf>,
    /// Token table, one token per line (defaults to DIR/tokens.txt with --dir).
    #[arg(long, required_unless_present = "dir")]
    pub tokens: Option<PathBuf>,
    /// Transcript with one `id<TAB>text` line per utterance.
    #[arg(long, required_unless_present = "dir", conflicts_with = "dir")]
    pub transcript: Option<PathBuf>,
    #[arg(long, required_unless_present = "dir", conflicts_with = "dir")]
    pub recording_id: Option<String>,
    /// Directory of `<rec>.ctcp` posterior files with `<rec>.txt` transcripts.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Recordings aligned concurrently with --dir (0 = one per core).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Normalization rules file; defaults to the token table's charset.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
    pub format: OutputFormat,
    /// Band width in frames (0 = full trellis).
    #[arg(long, default_value_t = 8000)]
    pub window: usize,
    /// Chunk length in frames for confidence scores.
    #[arg(long, default_value_t = 30)]
    pub chunk_len: usize,
    /// Log-domain confidence threshold.
    #[arg(long, default_value_t = -1.5, allow_negative_numbers = true)]
    pub min_score: f64,
    /// Double the window on escape or infeasibility.
    #[arg(long)]
    pub auto_widen: bool,
    #[arg(long, default_value_t = 4)]
    pub max_widen_doublings: u32,
    /// Let the stay transition use max(p(blank), p(char)).
    #[arg(long)]
    pub blank_stay_includes_char: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted segment files (kaldi or JSON).
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    /// Reference segment files (kaldi or JSON).
    #[arg(long = "ref", required = true, num_args = 1..)]
    pub reference: Vec<PathBuf>,
    /// Deviation threshold in seconds.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the signed-deviation histogram as CSV.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON generator spec.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub posteriors: PathBuf,
    /// Output posterior file.
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds taken from the end and prepended (sampled when absent).
    #[arg(long)]
    pub n: Option<f64>,
    /// Seconds taken from the start and appended (sampled when absent).
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling range for missing --n/--m, in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub min_sec: f64,
    #[arg(long, default_value_t = 30.0)]
    pub max_sec: f64,
    /// Reference segments to shift along.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Where the shifted reference goes (JSON).
    #[arg(long, requires = "reference")]
    pub out_reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NormalizeArgs {
    /// Input file; standard input when absent.
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "tokens")]
    pub rules: Option<PathBuf>,
    /// Derive the rules from a token table instead.
    #[arg(long, conflicts_with = "rules")]
    pub tokens: Option<PathBuf>,
}

/// Failure reported on standard error as `ctc-seg: error: <kind>: <message>`.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(ctcseg::Error),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(e) => e.kind(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ctcseg::Error> for Failure {
    fn from(e: ctcseg::Error) -> Self {
        Failure::Core(e)
    }
}

pub fn report(failure: &Failure) {
    let msg = failure.to_string().replace('\n', " ");
    eprintln!("ctc-seg: error: {}: {msg}", failure.kind());
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CTC_SEG_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format(|buf, record| {
            writeln!(
                buf,
                "ctc-seg: {}: {}",
                record.level().as_str().to_lowercase(),
                record.args()
            )
        })
        .init();
}

/// One line out of clap's multi-line error text.
fn usage_line(err: &clap::Error) -> String {
    let rendered = err.render().to_string();
    rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .trim_start_matches("error: ")
        .to_string()
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            report(&Failure::Usage(usage_line(&err)));
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Align(args) => commands::align(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Augment(args) => commands::augment(&args),
        Command::Normalize(args) => commands::normalize(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            report(&failure);
            ExitCode::from(1)
        }
    }
}
