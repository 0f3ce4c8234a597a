use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hypalign_core::features::{synthesize_prototypes, synthesize_samples, write_samples, SyntheticSpec};
use hypalign_core::manifold::{solve_intermediate, DEFAULT_TOL};
use hypalign_core::taxonomy::{base_novel_split, build_taxonomy, evaluate, read_annotations, DEFAULT_TREECUTS};
use hypalign_core::trainer::{run_experiment, write_pretty};
use hypalign_core::{Curvature, Error, PredictionTable, RadiusParameter, Result, Taxonomy, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hypalign", version, about = "Hierarchical cross-modal alignment on hyperbolic manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the intermediate curvature c3* and its implicit gradients.
    #[command(allow_negative_numbers = true)]
    SolveCurvature {
        #[arg(long)]
        c1: f64,
        #[arg(long)]
        c2: f64,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Write synthetic samples as JSON Lines.
    MakeSynthetic {
        /// Synthetic spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sample stream; 0 is the training split, other values give
        /// independent held-out draws over the same prototypes.
        #[arg(long, default_value_t = 0)]
        split: u32,
    },
    /// Train and evaluate; writes report, traces, predictions and taxonomy.
    Train {
        /// Training config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compute LA, HCA and MTA for a prediction file.
    Eval {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TREECUTS)]
        treecuts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build or split label taxonomies.
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
}

#[derive(Subcommand)]
enum TaxonomyCommand {
    /// Build a taxonomy from per-sample label paths (JSON Lines of arrays).
    Build {
        #[arg(long)]
        annotations: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split the leaves into base and novel halves.
    Split {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct SplitOutput {
    base: hypalign_core::taxonomy::TaxonomyFile,
    novel: hypalign_core::taxonomy::TaxonomyFile,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else if e.is_numeric() {
        3
    } else {
        1
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SolveCurvature { c1, c2, r, tol } => {
            let sol = solve_intermediate(Curvature::new(c1)?, Curvature::new(c2)?, RadiusParameter::fixed(r)?, tol)?;
            print_json(&sol)
        }
        Command::MakeSynthetic { spec, out, split } => {
            let spec: SyntheticSpec = read_json(&spec)?;
            let prototypes = synthesize_prototypes(&spec)?;
            write_samples(&out, &synthesize_samples(&spec, &prototypes, split)?)
        }
        Command::Train { config, out_dir } => {
            let config = TrainConfig::read(&config)?;
            let experiment = run_experiment(&config)?;
            experiment.write(&out_dir)?;
            print_json(&experiment.report.metrics)
        }
        Command::Eval { taxonomy, predictions, treecuts, seed } => {
            let tax = Taxonomy::read(&taxonomy)?;
            let preds = PredictionTable::read(&predictions, &tax)?;
            print_json(&evaluate(&tax, &preds, treecuts, seed)?)
        }
        Command::Taxonomy(TaxonomyCommand::Build { annotations, out }) => {
            let tax = build_taxonomy(&read_annotations(&annotations)?)?;
            match out {
                Some(path) => write_pretty(&path, &tax.to_file()),
                None => print_json(&tax.to_file()),
            }
        }
        Command::Taxonomy(TaxonomyCommand::Split { taxonomy, seed }) => {
            let (base, novel) = base_novel_split(&Taxonomy::read(&taxonomy)?, seed)?;
            print_json(&SplitOutput { base: base.to_file(), novel: novel.to_file() })
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    Ok(serde_json::from_str(&text)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}
