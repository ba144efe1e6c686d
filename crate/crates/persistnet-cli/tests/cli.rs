//! End-to-end tests of the `persistnet` binary: exit codes, artifact
//! layout, determinism, and the printed summaries.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use persistnet::dataset::{self, DatasetRecord, MultiViewDataset};
use persistnet::geometry::FeatureVector;
use persistnet::net::{load_checkpoint, EmbeddingNet};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_persistnet"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("the binary should run")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out)
    );
}

/// Small known-good run configuration: 4 categories of 4 objects with 3
/// views each, 12-dim features, a [12, 16, 8] net. The hidden layer is
/// deliberately wider than the output so no record collapses to the zero
/// vector under the default seeds.
const TINY_CONFIG: &str = "\
layer_dims = [12, 16, 8]
out_dir = \"run\"

[generator]
n_categories = 4
objects_per_category = 4
views_per_object = 3
latent_dim_category = 3
latent_dim_object = 3
feature_dim = 12

[split]
train_objects = 2
validation_objects = 1
novel_instance_objects = 1
held_out_categories = [\"cat003\"]

[train]
total_iters = 120
lr_drop_every = 60
batch_positive_pairs = 4
hard_negatives_per_pair = 1
random_negatives_per_pair = 1
";

fn write_config(dir: &Path, contents: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, contents).unwrap();
    path
}

/// Dataset whose objects each own a distinct one-hot feature direction,
/// shared by all their views: retrieval on the raw features is perfect.
fn one_hot_dataset(
    n_categories: usize,
    objects_per_category: usize,
    views: u32,
    dim: usize,
) -> MultiViewDataset {
    let mut records = Vec::new();
    for c in 0..n_categories {
        for o in 0..objects_per_category {
            let hot = c * objects_per_category + o;
            assert!(hot < dim, "dim too small for one-hot objects");
            let mut values = vec![0.0; dim];
            values[hot] = 1.0;
            for v in 0..views {
                records.push(DatasetRecord {
                    object_id: format!("cat{c:03}-obj{o:03}"),
                    category_id: format!("cat{c:03}"),
                    view_index: v,
                    features: FeatureVector::new(values.clone()).unwrap(),
                });
            }
        }
    }
    MultiViewDataset::new(records, dim, views).unwrap()
}

fn save_dataset(ds: &MultiViewDataset, dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    dataset::save(ds, &path).unwrap();
    path
}

#[test]
fn gen_writes_all_splits_and_reruns_byte_identically() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), TINY_CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    for out in [&a, &b] {
        let res = run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(out));
        assert_exit(&res, 0);
    }
    for name in [
        "train.data",
        "validation.data",
        "novel_instance.data",
        "novel_category.data",
    ] {
        let first = fs::read(a.join(name)).unwrap();
        let second = fs::read(b.join(name)).unwrap();
        assert!(!first.is_empty());
        assert_eq!(first, second, "{name} differs between identical runs");
    }
    assert!(a.join("manifest.json").is_file());

    // A repeat into the same directory verifies checksums and succeeds.
    let res = run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&a));
    assert_exit(&res, 0);
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "[train]\nmargn = 0.2\n",
    );
    let res = run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(tmp.path()));
    assert_exit(&res, 2);
    assert!(
        stderr_of(&res).contains("margn"),
        "stderr should name the offending key: {}",
        stderr_of(&res)
    );
}

#[test]
fn missing_config_file_exits_with_io_error() {
    let tmp = TempDir::new().unwrap();
    let res = run(bin()
        .args(["gen", "--config", "does-not-exist.toml", "--out"])
        .arg(tmp.path()));
    assert_exit(&res, 3);
}

#[test]
fn zero_iteration_training_writes_the_initial_net() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        &TINY_CONFIG.replace("total_iters = 120", "total_iters = 0"),
    );
    let data = tmp.path().join("data");
    let res = run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&data));
    assert_exit(&res, 0);

    let model = tmp.path().join("model");
    let res = run(bin()
        .arg("train")
        .arg(data.join("train.data"))
        .arg(data.join("validation.data"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&model));
    assert_exit(&res, 0);
    assert!(stdout_of(&res).contains("validation instance MAP:"));

    let (net, cfg) = load_checkpoint(&model.join("net.json")).unwrap();
    assert_eq!(cfg.total_iters, 0);
    assert_eq!(net, EmbeddingNet::init(&[12, 16, 8], cfg.seed).unwrap());
}

#[test]
fn raw_eval_scores_perfect_features_at_map_one() {
    let tmp = TempDir::new().unwrap();
    let ds = one_hot_dataset(3, 2, 2, 6);
    let file = save_dataset(&ds, tmp.path(), "oracle.data");

    let out = tmp.path().join("eval");
    let res = run(bin()
        .arg("eval")
        .arg(&file)
        .args(["--raw", "--task", "instance", "--out"])
        .arg(&out));
    assert_exit(&res, 0);
    assert!(stdout_of(&res).contains("MAP: 1.000000"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["map_score"], serde_json::json!(1.0));
    let pr = fs::read_to_string(out.join("pr_curve.csv")).unwrap();
    assert!(pr.starts_with("recall,precision\n"));
    assert_eq!(pr.lines().count(), 101);
}

#[test]
fn categorical_eval_requires_two_categories() {
    let tmp = TempDir::new().unwrap();
    let ds = one_hot_dataset(1, 3, 2, 4);
    let file = save_dataset(&ds, tmp.path(), "single.data");

    let res = run(bin()
        .arg("eval")
        .arg(&file)
        .args(["--raw", "--task", "categorical", "--out"])
        .arg(tmp.path().join("eval")));
    assert_exit(&res, 2);
    assert!(stderr_of(&res).contains("categories"));
}

#[test]
fn mismatched_net_and_dataset_dims_exit_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        &TINY_CONFIG.replace("total_iters = 120", "total_iters = 0"),
    );
    let data = tmp.path().join("data");
    assert_exit(
        &run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&data)),
        0,
    );
    let model = tmp.path().join("model");
    assert_exit(
        &run(bin()
            .arg("train")
            .arg(data.join("train.data"))
            .arg(data.join("validation.data"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&model)),
        0,
    );

    let eight_dim = save_dataset(&one_hot_dataset(2, 2, 2, 8), tmp.path(), "eight.data");
    let res = run(bin()
        .arg("eval")
        .arg(&eight_dim)
        .arg("--net")
        .arg(model.join("net.json"))
        .args(["--task", "instance", "--out"])
        .arg(tmp.path().join("eval")));
    assert_exit(&res, 2);
    let err = stderr_of(&res);
    assert!(err.contains("12") && err.contains("8"), "stderr: {err}");
}

#[test]
fn correlate_against_a_tree_of_the_same_features_prints_one() {
    let tmp = TempDir::new().unwrap();
    let ds = one_hot_dataset(2, 3, 2, 6);
    let file = save_dataset(&ds, tmp.path(), "geo.data");

    let first = tmp.path().join("first");
    let res = run(bin()
        .arg("analyze")
        .arg(&file)
        .args(["--raw", "--task", "matrix,tree", "--out"])
        .arg(&first));
    assert_exit(&res, 0);
    assert!(first.join("distance_matrix.csv").is_file());

    let second = tmp.path().join("second");
    let res = run(bin()
        .arg("analyze")
        .arg(&file)
        .args(["--raw", "--task", "correlate", "--reference"])
        .arg(first.join("dendrogram.tree"))
        .arg("--out")
        .arg(&second));
    assert_exit(&res, 0);
    assert!(stdout_of(&res).contains("tree correlation: 1.000000"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(second.join("correlation.json")).unwrap())
            .unwrap();
    assert_eq!(report["spearman"], serde_json::json!(1.0));
}

#[test]
fn trained_distance_matrix_groups_views_by_object() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), TINY_CONFIG);
    let data = tmp.path().join("data");
    assert_exit(
        &run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&data)),
        0,
    );
    let model = tmp.path().join("model");
    assert_exit(
        &run(bin()
            .arg("train")
            .arg(data.join("train.data"))
            .arg(data.join("validation.data"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&model)),
        0,
    );
    let geo = tmp.path().join("geo");
    let res = run(bin()
        .arg("analyze")
        .arg(data.join("train.data"))
        .arg("--net")
        .arg(model.join("net.json"))
        .args(["--task", "matrix", "--out"])
        .arg(&geo));
    assert_exit(&res, 0);

    let csv = fs::read_to_string(geo.join("distance_matrix.csv")).unwrap();
    let mut lines = csv.lines();
    let n: usize = lines.next().unwrap().trim().parse().unwrap();
    let matrix: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(matrix.len(), n);

    let ds = dataset::load(&data.join("train.data")).unwrap();
    assert_eq!(ds.len(), n);
    let (mut within, mut between) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..n {
        for j in (i + 1)..n {
            let bucket = if ds.object_of(i) == ds.object_of(j) {
                &mut within
            } else {
                &mut between
            };
            bucket.0 += matrix[i][j];
            bucket.1 += 1;
        }
    }
    let (within, between) = (within.0 / within.1 as f64, between.0 / between.1 as f64);
    assert!(
        within < between,
        "mean within-object distance {within} should be below between-object {between}"
    );
}

#[test]
fn single_margin_sweep_marks_its_only_row_best() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), TINY_CONFIG);
    let data = tmp.path().join("data");
    assert_exit(
        &run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&data)),
        0,
    );

    let out = tmp.path().join("sweep");
    let res = run(bin()
        .arg("sweep-margin")
        .arg(data.join("train.data"))
        .arg(data.join("validation.data"))
        .args(["--margins", "0.1", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out));
    assert_exit(&res, 0);

    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("margin,validation_instance_map,best"));
    let row = lines.next().expect("one data row");
    assert!(row.ends_with(",yes"), "row: {row}");
    assert_eq!(lines.next(), None);
}

#[test]
fn tampered_manifest_fails_the_rerun_checksum_verification() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), TINY_CONFIG);
    let data = tmp.path().join("data");
    assert_exit(
        &run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&data)),
        0,
    );

    let manifest_path = data.join("manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["artifacts"]["train.data"] = serde_json::json!("0".repeat(64));
    fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

    let res = run(bin().args(["gen", "--config"]).arg(&config).arg("--out").arg(&data));
    assert_exit(&res, 4);
    assert!(stderr_of(&res).contains("train.data"));
}
