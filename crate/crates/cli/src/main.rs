//! `parasynth`: ingest recordings, fit cepstral envelopes, train the
//! (conditional) autoencoders, run the evaluation protocols and render notes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;
mod pipeline;

#[derive(Parser, Debug)]
#[command(name = "parasynth", version, about = "Pitch-conditioned parametric synthesis pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 = fully sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Primary output path of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Override a config key, e.g. `--set model.beta=0.1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic stand-in dataset (WAV takes, or envelopes directly).
    Synth {
        /// Write an envelope table and split manifest instead of audio.
        #[arg(long)]
        envelopes: bool,
    },
    /// Load WAV takes, keep the sustained part, frame it and split the takes.
    Ingest,
    /// Fit a cepstral envelope to every frame.
    Analyze,
    /// Train one model on the training takes.
    Train(TrainArgs),
    /// Test MSE over the configured β × latent-size grid.
    Sweep,
    /// Reconstruction MSE per pitch under a held-out-pitch protocol.
    Recon(ReconArgs),
    /// Render a note at a fixed pitch from a latent random walk.
    Generate(NoteArgs),
    /// Render a note with sinusoidal vibrato.
    Vibrato(VibratoArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: Option<parasynth::model::ModelKind>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Leave this pitch out of training (repeatable).
    #[arg(long = "exclude-midi")]
    exclude_midi: Vec<i32>,
    /// Train on the octave endpoints 60 and 71 only.
    #[arg(long, conflicts_with = "exclude_midi")]
    endpoints: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReconProtocol {
    SkipPitch,
    Endpoints,
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    #[arg(long, value_enum)]
    protocol: ReconProtocol,
    /// Held-out pitch (skip-pitch only).
    #[arg(long)]
    midi: Option<i32>,
}

#[derive(Args, Debug)]
pub struct NoteArgs {
    #[arg(long)]
    midi: f64,
    #[arg(long)]
    seconds: Option<f64>,
    /// Latent random-walk step.
    #[arg(long)]
    step: Option<f64>,
    /// Model file (defaults to the configured model path).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VibratoArgs {
    #[command(flatten)]
    note: NoteArgs,
    /// Vibrato rate in Hz.
    #[arg(long)]
    rate: Option<f64>,
    /// Vibrato depth in cents.
    #[arg(long)]
    depth: Option<f64>,
}

fn parse_kind(s: &str) -> Result<parasynth::model::ModelKind, String> {
    parasynth::model::ModelKind::parse(s).ok_or_else(|| format!("unknown model kind `{s}` (ae or cvae)"))
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<parasynth::Error> for Failure {
    fn from(e: parasynth::Error) -> Self {
        if e.is_numeric() {
            Failure::numeric(e.to_string())
        } else {
            Failure::data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot set up {n} threads: {e}")))?;
    }
    let mut cfg = config::load(c.config.as_deref(), &c.set)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let ctx = commands::Context {
        cfg: &cfg,
        out: c.out.clone(),
        overwrite: c.overwrite,
    };
    match cli.command {
        Command::Synth { envelopes } => commands::synth(&ctx, envelopes),
        Command::Ingest => commands::ingest(&ctx),
        Command::Analyze => commands::analyze(&ctx),
        Command::Train(a) => commands::train(&ctx, &a),
        Command::Sweep => commands::sweep(&ctx),
        Command::Recon(a) => commands::recon(&ctx, &a),
        Command::Generate(a) => commands::generate(&ctx, &a),
        Command::Vibrato(a) => commands::vibrato(&ctx, &a),
    }
}
