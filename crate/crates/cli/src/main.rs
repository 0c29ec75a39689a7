//! `aviscape`: run the server, build corpora and templates, evaluate the
//! classifier and render scenes offline.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Machine-readable
//! results go to stdout as JSON, logs go to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "aviscape", version, about = "Citizen-science bird monitoring: server and operator tools")]
pub struct Cli {
    /// Server configuration file (TOML). `AVISCAPE_*` variables override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Data directory; overrides `data_dir` from the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API until interrupted.
    Serve(ServeArgs),
    /// Write a deterministic synthetic corpus (WAV files plus manifest.json).
    SynthCorpus(SynthArgs),
    /// Build a template set from a corpus.
    Templates(TemplatesArgs),
    /// Train on a seeded 80/20 split of a corpus and report metrics.
    Eval(EvalArgs),
    /// Render the scene at a position from the local store to a stereo WAV.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; overrides `bind`.
    #[arg(long, value_name = "ADDR")]
    pub bind: Option<std::net::SocketAddr>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub species: usize,
    #[arg(long, default_value_t = 20)]
    pub clips: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, default_value_t = 22_050)]
    pub sample_rate: u32,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TemplatesArgs {
    /// Corpus directory containing manifest.json.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Destination; defaults to `templates.json` in the data directory.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus directory containing manifest.json.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub split_seed: u64,
    /// Add white noise at this SNR (dB) to validation clips.
    #[arg(long, value_name = "DB")]
    pub noise_snr: Option<f64>,
    /// Permute labels with this seed before splitting.
    #[arg(long, value_name = "SEED")]
    pub shuffle_labels: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lon: f64,
    /// Listener heading in degrees clockwise from north.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub heading: f64,
    #[arg(long)]
    pub from: Option<DateTime<Utc>>,
    #[arg(long)]
    pub to: Option<DateTime<Utc>>,
    #[arg(long)]
    pub species: Option<String>,
    /// Seconds of audio.
    #[arg(long, default_value_t = 5.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 44_100)]
    pub sample_rate: u32,
    /// Time the scene is generated "as of"; defaults to now.
    #[arg(long)]
    pub as_of: Option<DateTime<Utc>>,
    /// Output WAV (32-bit float, stereo).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
