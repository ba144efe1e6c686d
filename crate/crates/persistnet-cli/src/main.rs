//! `persistnet` — multi-view embedding workbench.
//!
//! Five subcommands cover the full loop: `gen` makes a synthetic
//! multi-view dataset, `train` fits the embedding net, `eval` scores
//! retrieval, `analyze` exports geometry artifacts, and `sweep-margin`
//! cross-validates the hinge margin. Every command is deterministic
//! given its config and writes a manifest with checksums of everything
//! it produced.

use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod manifest;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "persistnet", version, about = "Multi-view embedding workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    /// Same-object views are relevant; candidates share the query's category.
    Instance,
    /// Same-category records are relevant; all other records are candidates.
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum AnalysisArg {
    /// Pairwise cosine-distance matrix (CSV).
    Matrix,
    /// Single-linkage dendrogram built from the distance matrix.
    Tree,
    /// Per-category separation scores (inter/intra standard deviation).
    Lda,
    /// Rank correlation of tree distances against a reference tree.
    Correlate,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write its four splits.
    Gen {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the generator's sample seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default from config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the embedding net and report validation retrieval quality.
    Train {
        /// Training split file.
        train_file: PathBuf,
        /// Validation split file scored after training.
        validation_file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score retrieval on a dataset with a trained net or the raw features.
    #[command(group(ArgGroup::new("features").required(true).args(["net", "raw"])))]
    Eval {
        /// Dataset file to evaluate.
        dataset: PathBuf,
        /// Checkpoint whose embeddings are scored.
        #[arg(long)]
        net: Option<PathBuf>,
        /// Score the dataset's own features (the no-training baseline).
        #[arg(long)]
        raw: bool,
        #[arg(long, value_enum, default_value_t = TaskArg::Instance)]
        task: TaskArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export geometry artifacts: distance matrix, dendrogram, separation
    /// scores, or a correlation against a reference tree.
    #[command(group(ArgGroup::new("features").required(true).args(["net", "raw"])))]
    Analyze {
        /// Dataset file to analyze.
        dataset: PathBuf,
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        raw: bool,
        /// Artifacts to produce (comma-separated).
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        task: Vec<AnalysisArg>,
        /// Reference dendrogram for `--task correlate`.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per margin value and rank them by validation MAP.
    SweepMargin {
        train_file: PathBuf,
        validation_file: PathBuf,
        /// Margin values to try (comma-separated).
        #[arg(long, value_delimiter = ',', required = true)]
        margins: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the training seed shared by all margins.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from(&config.out_dir))
}

fn net_path(net: &Option<PathBuf>, raw: bool) -> Option<&Path> {
    // The clap group guarantees exactly one of --net / --raw.
    debug_assert_eq!(net.is_some(), !raw);
    net.as_deref()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, seed, out } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.generator.sample_seed = seed;
            }
            let out = out_dir(out, &cfg);
            commands::gen(&cfg, &out)
        }
        Command::Train {
            train_file,
            validation_file,
            config,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let out = out_dir(out, &cfg);
            commands::train_cmd(&cfg, &train_file, &validation_file, &out)
        }
        Command::Eval {
            dataset,
            net,
            raw,
            task,
            config,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let out = out_dir(out, &cfg);
            commands::eval(&cfg, net_path(&net, raw), &dataset, task, &out)
        }
        Command::Analyze {
            dataset,
            net,
            raw,
            task,
            reference,
            config,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let out = out_dir(out, &cfg);
            commands::analyze(
                &cfg,
                net_path(&net, raw),
                &dataset,
                &task,
                reference.as_deref(),
                &out,
            )
        }
        Command::SweepMargin {
            train_file,
            validation_file,
            margins,
            config,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let out = out_dir(out, &cfg);
            commands::sweep_margin(&cfg, &margins, &train_file, &validation_file, &out)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code().into());
    }
}
