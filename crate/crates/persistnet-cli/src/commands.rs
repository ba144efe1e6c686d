//! The five subcommand bodies. Each resolves its inputs, produces all
//! artifact bytes in memory, and hands them to [`OutputDir`] so the
//! manifest always matches what landed on disk.

use std::collections::BTreeMap;
use std::path::Path;

use persistnet::dataset::{self, MultiViewDataset};
use persistnet::geometry::FeatureVector;
use persistnet::manifold::{
    cophenetic, hac_nearest_point, lda_score, pairwise_matrix, spearman, Dendrogram,
};
use persistnet::net::{self, train, TrainConfig};
use persistnet::retrieval::{categorical_retrieval, instance_retrieval, RetrievalReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{sha256_hex, OutputDir};

pub fn config_digest(config: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serialization cannot fail"))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text =
        serde_json::to_string_pretty(value).expect("report serialization cannot fail");
    text.push('\n');
    text.into_bytes()
}

fn load_dataset(path: &Path) -> Result<MultiViewDataset, CliError> {
    dataset::load(path).map_err(|e| match e {
        persistnet::Error::Io(io) => {
            CliError::Io(format!("cannot read dataset {}: {io}", path.display()))
        }
        other => CliError::from(other),
    })
}

/// Features to evaluate: the dataset's own (`--raw`) or the net's
/// embeddings.
fn features_for(
    net_path: Option<&Path>,
    ds: &MultiViewDataset,
) -> Result<Vec<FeatureVector>, CliError> {
    match net_path {
        None => Ok(ds.features()),
        Some(path) => {
            let (net, _cfg) = net::load_checkpoint(path).map_err(|e| match e {
                persistnet::Error::Io(io) => {
                    CliError::Io(format!("cannot read net {}: {io}", path.display()))
                }
                other => CliError::from(other),
            })?;
            if net.input_dim() != ds.feature_dim() {
                return Err(CliError::Config(format!(
                    "net {} expects {}-dimensional features but the dataset has {}",
                    path.display(),
                    net.input_dim(),
                    ds.feature_dim()
                )));
            }
            net.embed_all(ds).map_err(CliError::from)
        }
    }
}

fn dataset_bytes(ds: &MultiViewDataset) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    dataset::write_to(ds, &mut bytes)?;
    Ok(bytes)
}

/// How the features were obtained, for the manifest's command line.
fn feature_source(net_path: Option<&Path>) -> String {
    match net_path {
        None => "--raw".to_string(),
        Some(p) => format!("--net {}", p.display()),
    }
}

/// `gen`: generate the synthetic dataset, split it, write the four split
/// files.
pub fn gen(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = dataset::generate(&config.generator)?;
    let splits = dataset::split(&ds, &config.split, config.split_seed)?;
    let seeds = BTreeMap::from([
        ("mixing_seed".to_string(), config.generator.mixing_seed),
        ("sample_seed".to_string(), config.generator.sample_seed),
        ("split_seed".to_string(), config.split_seed),
    ]);
    let mut dir = OutputDir::create(out, "gen", config_digest(config), seeds)?;
    for (name, subset) in [
        ("train.data", &splits.train),
        ("validation.data", &splits.validation),
        ("novel_instance.data", &splits.novel_instance),
        ("novel_category.data", &splits.novel_category),
    ] {
        dir.write(name, &dataset_bytes(subset)?)?;
    }
    dir.finish()?;
    println!(
        "wrote {} records across 4 splits to {}",
        ds.len(),
        out.display()
    );
    Ok(())
}

/// `train`: fit the embedding net, write checkpoint and log, print the
/// validation instance MAP.
pub fn train_cmd(
    config: &RunConfig,
    train_file: &Path,
    validation_file: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let train_ds = load_dataset(train_file)?;
    let validation_ds = load_dataset(validation_file)?;
    let dims = config.layer_dims_for(train_ds.feature_dim());
    let (net, log) = train(&train_ds, &dims, &config.train)?;

    let mut checkpoint = Vec::new();
    net::write_checkpoint_to(&net, &config.train, &mut checkpoint)?;
    let mut log_bytes = Vec::new();
    log.write_csv(&mut log_bytes)?;

    let seeds = BTreeMap::from([("train_seed".to_string(), config.train.seed)]);
    let command = format!(
        "train {} {}",
        train_file.display(),
        validation_file.display()
    );
    let mut dir = OutputDir::create(out, &command, config_digest(config), seeds)?;
    dir.write("net.json", &checkpoint)?;
    dir.write("train_log.csv", &log_bytes)?;
    dir.finish()?;

    let embedded = net.embed_all(&validation_ds)?;
    let report = instance_retrieval(&embedded, &validation_ds)?;
    println!("validation instance MAP: {:.6}", report.map_score);
    Ok(())
}

/// `eval`: retrieval report plus PR curve for one task on one dataset.
pub fn eval(
    config: &RunConfig,
    net_path: Option<&Path>,
    dataset_file: &Path,
    task: super::TaskArg,
    out: &Path,
) -> Result<(), CliError> {
    let ds = load_dataset(dataset_file)?;
    let features = features_for(net_path, &ds)?;
    let (task_name, report): (&str, RetrievalReport) = match task {
        super::TaskArg::Instance => ("instance", instance_retrieval(&features, &ds)?),
        super::TaskArg::Categorical => ("categorical", categorical_retrieval(&features, &ds)?),
    };

    let command = format!(
        "eval --task {task_name} {} {}",
        feature_source(net_path),
        dataset_file.display()
    );
    let mut dir = OutputDir::create(out, &command, config_digest(config), BTreeMap::new())?;
    dir.write("report.json", &to_json_pretty(&report))?;
    let mut pr = Vec::new();
    report.write_pr_csv(&mut pr)?;
    dir.write("pr_curve.csv", &pr)?;
    dir.finish()?;
    println!(
        "{task_name} MAP: {:.6} ({} queries, {} excluded)",
        report.map_score,
        report.per_query_ap.len(),
        report.excluded_queries
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct CorrelationReport {
    spearman: f64,
    n_leaves: usize,
    reference: String,
}

/// `analyze`: export distance matrix, dendrogram, separation score or
/// tree correlation for the chosen features.
pub fn analyze(
    config: &RunConfig,
    net_path: Option<&Path>,
    dataset_file: &Path,
    tasks: &[super::AnalysisArg],
    reference: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let ds = load_dataset(dataset_file)?;
    let features = features_for(net_path, &ds)?;
    let task_names: Vec<&str> = tasks
        .iter()
        .map(|t| match t {
            super::AnalysisArg::Matrix => "matrix",
            super::AnalysisArg::Tree => "tree",
            super::AnalysisArg::Lda => "lda",
            super::AnalysisArg::Correlate => "correlate",
        })
        .collect();
    let command = format!(
        "analyze --task {} {} {}",
        task_names.join(","),
        feature_source(net_path),
        dataset_file.display()
    );
    let mut dir = OutputDir::create(out, &command, config_digest(config), BTreeMap::new())?;

    // The matrix and tree are shared intermediates; compute them once.
    let needs_matrix = tasks.iter().any(|t| {
        matches!(
            t,
            super::AnalysisArg::Matrix | super::AnalysisArg::Tree | super::AnalysisArg::Correlate
        )
    });
    let matrix = if needs_matrix {
        Some(pairwise_matrix(&features)?)
    } else {
        None
    };

    for task in tasks {
        match task {
            super::AnalysisArg::Matrix => {
                let mut bytes = Vec::new();
                matrix.as_ref().unwrap().write_csv(&mut bytes)?;
                dir.write("distance_matrix.csv", &bytes)?;
            }
            super::AnalysisArg::Tree => {
                let tree = hac_nearest_point(matrix.as_ref().unwrap())?;
                let mut bytes = Vec::new();
                tree.write_to(&mut bytes)?;
                dir.write("dendrogram.tree", &bytes)?;
            }
            super::AnalysisArg::Lda => {
                let report = lda_score(&features, &ds, config.lda)?;
                dir.write("lda_report.json", &to_json_pretty(&report))?;
                println!("mean separation score: {:.6}", report.mean_score);
            }
            super::AnalysisArg::Correlate => {
                let reference_path = reference.ok_or_else(|| {
                    CliError::Config(
                        "--task correlate needs --reference <tree file>".into(),
                    )
                })?;
                let reference_tree = Dendrogram::load(reference_path).map_err(|e| match e {
                    persistnet::Error::Io(io) => CliError::Io(format!(
                        "cannot read reference tree {}: {io}",
                        reference_path.display()
                    )),
                    other => CliError::from(other),
                })?;
                if reference_tree.n_leaves() != ds.len() {
                    return Err(CliError::Config(format!(
                        "reference tree has {} leaves but the dataset has {} records",
                        reference_tree.n_leaves(),
                        ds.len()
                    )));
                }
                let tree = hac_nearest_point(matrix.as_ref().unwrap())?;
                let ours = cophenetic(&tree);
                let theirs = cophenetic(&reference_tree);
                let rho = spearman(&ours.upper_triangle(), &theirs.upper_triangle())?;
                let report = CorrelationReport {
                    spearman: rho,
                    n_leaves: ds.len(),
                    reference: reference_path.display().to_string(),
                };
                dir.write("correlation.json", &to_json_pretty(&report))?;
                println!("tree correlation: {:.6}", rho);
            }
        }
    }
    dir.finish()
}

/// `sweep-margin`: train once per margin with a shared seed and rank the
/// margins by validation instance MAP; ties go to the smaller margin.
pub fn sweep_margin(
    config: &RunConfig,
    margins: &[f64],
    train_file: &Path,
    validation_file: &Path,
    out: &Path,
) -> Result<(), CliError> {
    if margins.is_empty() {
        return Err(CliError::Config("--margins needs at least one value".into()));
    }
    for &m in margins {
        if !m.is_finite() || m < 0.0 {
            return Err(CliError::Config(format!(
                "margins must be finite and >= 0, got {m}"
            )));
        }
    }
    let train_ds = load_dataset(train_file)?;
    let validation_ds = load_dataset(validation_file)?;
    let dims = config.layer_dims_for(train_ds.feature_dim());

    let mut rows = Vec::with_capacity(margins.len());
    for &margin in margins {
        let cfg = TrainConfig {
            margin,
            ..config.train.clone()
        };
        let (net, _log) = train(&train_ds, &dims, &cfg)?;
        let report = instance_retrieval(&net.embed_all(&validation_ds)?, &validation_ds)?;
        rows.push((margin, report.map_score));
    }
    // Highest MAP wins; the smaller margin breaks ties.
    let best = rows
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.1.total_cmp(&b.1)
                .then_with(|| b.0.total_cmp(&a.0))
        })
        .map(|(i, _)| i)
        .expect("rows is nonempty");

    let mut csv = String::from("margin,validation_instance_map,best\n");
    println!("margin  validation MAP  best");
    for (i, (margin, map_score)) in rows.iter().enumerate() {
        let marker = if i == best { "yes" } else { "no" };
        csv.push_str(&format!(
            "{},{},{marker}\n",
            persistnet_fmt(*margin),
            persistnet_fmt(*map_score)
        ));
        println!(
            "{margin:<7} {map_score:<15.6} {}",
            if i == best { "*" } else { "" }
        );
    }

    let seeds = BTreeMap::from([("train_seed".to_string(), config.train.seed)]);
    let command = format!(
        "sweep-margin --margins {} {} {}",
        margins
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(","),
        train_file.display(),
        validation_file.display()
    );
    let mut dir = OutputDir::create(out, &command, config_digest(config), seeds)?;
    dir.write("sweep.csv", csv.as_bytes())?;
    dir.finish()
}

/// Full-precision decimal used in CSV artifacts.
fn persistnet_fmt(x: f64) -> String {
    format!("{x:.16e}")
}
