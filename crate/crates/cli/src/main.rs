//! `ldcd` — run anomaly detectors over a labeled corpus and score them.
//!
//! Exit codes: 0 success, 1 some datasets skipped, 2 invalid configuration
//! or fatal error.

mod datasets;
mod detect;
mod manifest;
mod score;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldcd_core::corpus::quasi_periodic_corpus;
use ldcd_core::detector::Method;

use manifest::{DetectorSpec, FlagValues, RunManifest};
use synth::SynthManifest;

#[derive(Parser)]
#[command(
    name = "ldcd",
    version,
    about = "Conformal k-NN anomaly detection benchmark runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-dataset score CSVs for each detector.
    Detect(RunArgs),
    /// Score existing score CSVs and write report.json / report.txt.
    Score(RunArgs),
    /// Detect, then score.
    Run(RunArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ldcd,
    Dynr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run manifest; its fields take precedence over flags.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Corpus directory, searched recursively for *.csv.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Labels JSON (dataset path → anomaly timestamps). Without it, inline
    /// `is_anomaly`/`anomaly` columns are used.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory for scores/ and reports.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of nearest neighbours.
    #[arg(long, default_value_t = manifest::DEFAULT_K)]
    k: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = manifest::DEFAULT_EMBED_DIM)]
    embed_dim: usize,
    /// Training window as a fraction of each dataset's length.
    #[arg(long, default_value_t = manifest::DEFAULT_TRAIN_FRAC)]
    train_frac: f64,
    /// Calibration window as a fraction of each dataset's length.
    #[arg(long, default_value_t = manifest::DEFAULT_CALIB_FRAC)]
    calib_frac: f64,
    #[arg(long, value_enum, default_value = "ldcd")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "on")]
    pruning: Toggle,
    /// Application profile (repeatable or comma-separated); default all three.
    #[arg(long = "profile", value_delimiter = ',')]
    profiles: Vec<String>,
    /// Worker threads (0 = number of CPUs).
    #[arg(long)]
    threads: Option<usize>,
    /// Score at this fixed threshold (a row fires when its abnormality is
    /// strictly greater) instead of optimizing one per profile.
    #[arg(long)]
    threshold: Option<f64>,
}

impl RunArgs {
    fn manifest(&self) -> anyhow::Result<RunManifest> {
        let detector = DetectorSpec {
            name: None,
            k: self.k,
            embed_dim: self.embed_dim,
            train_frac: self.train_frac,
            calib_frac: self.calib_frac,
            method: match self.method {
                MethodArg::Ldcd => Method::Ldcd,
                MethodArg::Dynr => Method::Dynr,
            },
            pruning: matches!(self.pruning, Toggle::On),
        };
        let flags = FlagValues {
            corpus_dir: self.corpus.clone(),
            labels_path: self.labels.clone(),
            output_dir: self.output.clone(),
            detector: Some(detector),
            profiles: self.profiles.clone(),
            threads: self.threads,
            threshold: self.threshold,
        };
        RunManifest::resolve(self.manifest.as_deref(), flags)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// JSON list of synthetic dataset specs.
    #[arg(long, conflicts_with = "preset")]
    manifest: Option<PathBuf>,
    /// Built-in quasi-periodic corpus instead of a manifest.
    #[arg(long)]
    preset: bool,
    #[arg(long, default_value_t = 20, requires = "preset")]
    count: usize,
    #[arg(long, default_value_t = 2000, requires = "preset")]
    length: usize,
    #[arg(long, default_value_t = 1, requires = "preset")]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

enum Outcome {
    Complete,
    Partial,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let (args, detect, score) = match cli.command {
        Command::Synth(args) => {
            let manifest = match &args.manifest {
                Some(p) => SynthManifest::load(p)?,
                None if args.preset => SynthManifest {
                    datasets: quasi_periodic_corpus(args.count, args.length, args.seed),
                },
                None => anyhow::bail!("synth needs --manifest or --preset"),
            };
            synth::cmd_synth(&manifest, &args.output)?;
            return Ok(Outcome::Complete);
        }
        Command::Detect(a) => (a, true, false),
        Command::Score(a) => (a, false, true),
        Command::Run(a) => (a, true, true),
    };

    let manifest = args.manifest()?;
    if !manifest.corpus_dir.is_dir() {
        anyhow::bail!(
            "corpus directory {} does not exist",
            manifest.corpus_dir.display()
        );
    }
    let pool = manifest.thread_pool()?;
    let corpus = datasets::load_corpus(&manifest, &pool)?;
    if corpus.datasets.is_empty() && corpus.skipped.is_empty() {
        eprintln!(
            "warning: no datasets found in {}",
            manifest.corpus_dir.display()
        );
    }
    let mut partial = !corpus.skipped.is_empty();
    if detect {
        partial |= !detect::cmd_detect(&manifest, &corpus, &pool)?.is_empty();
    }
    if score {
        let report = score::cmd_score(&manifest, &corpus, &pool)?;
        report.write(&manifest.output_dir)?;
        print!("{}", report.table());
        partial |= report.skipped_count() > 0;
    }
    Ok(if partial {
        Outcome::Partial
    } else {
        Outcome::Complete
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
