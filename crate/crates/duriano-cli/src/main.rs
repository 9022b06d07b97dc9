//! Command-line pipeline for duration-informed singing voice synthesis:
//! preprocess a corpus, transcribe pitch, train the model, synthesize from
//! a score, vocode spectrograms and evaluate pitch contours.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// User errors (bad input, missing files) exit with 2; internal errors
/// (training divergence, shape bugs) exit with 1.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<duriano::dsp::DspError> for CliError {
    fn from(e: duriano::dsp::DspError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<duriano::pitch::PitchError> for CliError {
    fn from(e: duriano::pitch::PitchError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<duriano::corpus::CorpusError> for CliError {
    fn from(e: duriano::corpus::CorpusError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<duriano::align::AlignError> for CliError {
    fn from(e: duriano::align::AlignError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<duriano::eval::EvalError> for CliError {
    fn from(e: duriano::eval::EvalError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<duriano::model::ModelError> for CliError {
    fn from(e: duriano::model::ModelError) -> Self {
        use duriano::model::ModelError;
        match &e {
            ModelError::NonFinite { .. } | ModelError::Nn(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "duriano",
    version,
    about = "Duration-informed singing voice synthesis pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and cache spectrogram targets, note events and
    /// conditioning plans into a workdir.
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set sample_rate=44100 (repeatable).
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Extract a pitch contour from a WAV and write the per-frame note
    /// event stream.
    Transcribe {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw f0 contour (one Hz value per line).
        #[arg(long)]
        f0_out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Train on a preprocessed workdir, writing checkpoints and a log.
    Train {
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the latest checkpoint in the workdir.
        #[arg(long)]
        resume: bool,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Synthesize a phrase from a score and phoneme annotation.
    Synth {
        #[arg(long)]
        score: PathBuf,
        #[arg(long)]
        phonemes: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Conditioning: "note" (score notes) or "f0" (scalar baseline;
        /// requires --f0).
        #[arg(long, default_value = "note")]
        mode: String,
        /// Pitch contour file for --mode f0, one Hz value per frame line.
        #[arg(long)]
        f0: Option<PathBuf>,
        /// Seconds per beat; derived from the annotation length when absent.
        #[arg(long)]
        tempo: Option<f64>,
        /// Phoneme inventory file; the built-in set when absent.
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Reconstruct audio from a stored linear spectrogram container.
    Vocode {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        iters: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Compare pitch contours across systems: correlation matrix plus
    /// Gaussian pitch-distribution fits.
    Eval {
        /// Input WAV files (repeat or list, two or more).
        #[arg(long = "wav", num_args = 1..)]
        wav: Vec<PathBuf>,
        /// One label per WAV, in order.
        #[arg(long = "labels", num_args = 1..)]
        labels: Vec<String>,
        /// Write the TSV report here as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Preprocess {
            corpus,
            workdir,
            config,
            set,
        } => commands::preprocess(&corpus, &workdir, config.as_deref(), &set),
        Command::Transcribe {
            wav,
            out,
            f0_out,
            config,
            set,
        } => commands::transcribe(&wav, &out, f0_out.as_deref(), config.as_deref(), &set),
        Command::Train {
            workdir,
            config,
            seed,
            resume,
            set,
        } => commands::train(&workdir, config.as_deref(), seed, resume, &set),
        Command::Synth {
            score,
            phonemes,
            checkpoint,
            out,
            mode,
            f0,
            tempo,
            inventory,
            config,
            set,
        } => commands::synth(commands::SynthArgs {
            score: &score,
            phonemes: &phonemes,
            checkpoint: &checkpoint,
            out: &out,
            mode: &mode,
            f0: f0.as_deref(),
            tempo,
            inventory: inventory.as_deref(),
            config: config.as_deref(),
            set: &set,
        }),
        Command::Vocode {
            spec,
            out,
            iters,
            config,
            set,
        } => commands::vocode(&spec, &out, iters, config.as_deref(), &set),
        Command::Eval {
            wav,
            labels,
            out,
            config,
            set,
        } => commands::eval(&wav, &labels, out.as_deref(), config.as_deref(), &set),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
