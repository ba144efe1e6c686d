//! Structure diagnostics for embeddings: pairwise distance matrices,
//! single-linkage clustering, cophenetic distances, rank correlation of
//! trees, and an inter/intra separation score.
//!
//! The clustering pipeline mirrors classic perceptual-similarity analysis:
//! build the cosine distance matrix, agglomerate with the nearest-point
//! (single linkage) rule, read cophenetic distances off the dendrogram,
//! and compare two trees via Spearman correlation of their cophenetic
//! upper triangles. All tie-breaks are fixed (lexicographic cluster ids,
//! fractional ranks) so results are deterministic.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, MultiViewDataset};
use crate::error::{Error, Result};
use crate::geometry::{self, FeatureVector, ZERO_NORM_EPS};

pub const TREE_FORMAT_VERSION: &str = "persistnet-tree-v1";

/// Symmetric pairwise distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates and wraps a row-major `n x n` matrix: entries finite and
    /// non-negative, diagonal zero, symmetric within `1e-12`.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "diagonal entry ({i},{i}) is {}, must be 0",
                    entries[i * n + i]
                )));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i},{j}) = {v} must be finite and non-negative"
                    )));
                }
                if (v - entries[j * n + i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "asymmetry at ({i},{j}): {v} vs {}",
                        entries[j * n + i]
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// CSV export: first line the item count, then one row per line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{}", self.n)?;
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| fmt_f64(self.get(i, j))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Cosine distance between every pair of features.
pub fn pairwise_matrix(features: &[FeatureVector]) -> Result<DistanceMatrix> {
    let n = features.len();
    for (i, f) in features.iter().enumerate() {
        if f.dim() != features[0].dim() {
            return Err(Error::DimMismatch {
                expected: features[0].dim(),
                got: f.dim(),
            });
        }
        if f.norm() < ZERO_NORM_EPS {
            return Err(Error::ZeroNormInput { index: Some(i) });
        }
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = geometry::cosine_distance(&features[i], &features[j])?;
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    DistanceMatrix::from_entries(n, entries)
}

/// One agglomeration step: clusters `left` and `right` (ids; leaves are
/// `0..n-1`, merge `k` creates id `n+k`) joined at `height` into a cluster
/// of `size` leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// A full agglomeration history over `n_leaves` items: exactly
/// `n_leaves - 1` merges with non-decreasing heights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Validates the merge list: ids in range and each consumed exactly
    /// once, `left < right`, sizes additive, heights finite, non-negative
    /// and non-decreasing.
    pub fn new(n_leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        if n_leaves < 2 {
            return Err(Error::InvalidInput(
                "a dendrogram needs at least two leaves".into(),
            ));
        }
        if merges.len() != n_leaves - 1 {
            return Err(Error::InvalidInput(format!(
                "{} leaves need exactly {} merges, found {}",
                n_leaves,
                n_leaves - 1,
                merges.len()
            )));
        }
        let mut size = vec![0usize; 2 * n_leaves - 1];
        let mut used = vec![false; 2 * n_leaves - 1];
        for s in size.iter_mut().take(n_leaves) {
            *s = 1;
        }
        for (k, m) in merges.iter().enumerate() {
            let new_id = n_leaves + k;
            if m.left >= m.right {
                return Err(Error::InvalidInput(format!(
                    "merge {k}: cluster ids must satisfy left < right, got ({}, {})",
                    m.left, m.right
                )));
            }
            if m.right >= new_id {
                return Err(Error::InvalidInput(format!(
                    "merge {k}: cluster id {} does not exist yet",
                    m.right
                )));
            }
            for id in [m.left, m.right] {
                if used[id] {
                    return Err(Error::InvalidInput(format!(
                        "merge {k}: cluster {id} was already merged"
                    )));
                }
                used[id] = true;
            }
            if !m.height.is_finite() || m.height < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "merge {k}: height {} must be finite and non-negative",
                    m.height
                )));
            }
            if k > 0 && m.height < merges[k - 1].height {
                return Err(Error::InvalidInput(format!(
                    "merge {k}: height {} decreases below previous {}",
                    m.height,
                    merges[k - 1].height
                )));
            }
            if m.size != size[m.left] + size[m.right] {
                return Err(Error::InvalidInput(format!(
                    "merge {k}: size {} != {} + {}",
                    m.size, size[m.left], size[m.right]
                )));
            }
            size[new_id] = m.size;
        }
        Ok(Self { n_leaves, merges })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Line-oriented export: a version header, then
    /// `merge_index,left,right,height,size` per merge.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{TREE_FORMAT_VERSION}")?;
        for (k, m) in self.merges.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{},{}",
                m.left,
                m.right,
                fmt_f64(m.height),
                m.size
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        match lines.next() {
            Some(line) => {
                let line = line?;
                if line.trim() != TREE_FORMAT_VERSION {
                    return Err(Error::Format {
                        line: 1,
                        msg: format!(
                            "unsupported version {:?}, expected {TREE_FORMAT_VERSION:?}",
                            line.trim()
                        ),
                    });
                }
            }
            None => {
                return Err(Error::Format {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let bad = |msg: String| Error::Format { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", fields.len())));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|e| bad(format!("bad merge index {:?}: {e}", fields[0])))?;
            if index != i {
                return Err(bad(format!("merge index {index} out of order, expected {i}")));
            }
            let parse_usize = |s: &str, what: &str| -> Result<usize> {
                s.parse()
                    .map_err(|e| bad(format!("bad {what} {s:?}: {e}")))
            };
            let left = parse_usize(fields[1], "left id")?;
            let right = parse_usize(fields[2], "right id")?;
            let height: f64 = fields[3]
                .parse()
                .map_err(|e| bad(format!("bad height {:?}: {e}", fields[3])))?;
            let size = parse_usize(fields[4], "size")?;
            merges.push(Merge {
                left,
                right,
                height,
                size,
            });
        }
        let n_leaves = merges.len() + 1;
        Self::new(n_leaves, merges).map_err(|e| Error::Format {
            line: 1,
            msg: format!("inconsistent tree: {e}"),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

/// Single-linkage (nearest point) agglomerative clustering.
///
/// Repeatedly merges the two clusters with the smallest minimum pairwise
/// distance; the merge height is that distance. Among tied pairs the
/// lexicographically smallest `(left id, right id)` wins, with
/// `left < right`.
pub fn hac_nearest_point(m: &DistanceMatrix) -> Result<Dendrogram> {
    let n = m.n();
    if n < 2 {
        return Err(Error::InvalidInput(
            "clustering needs at least two items".into(),
        ));
    }
    // Active clusters as (id, distances to other active clusters), updated
    // with the single-linkage rule d(a+b, k) = min(d(a,k), d(b,k)).
    let mut ids: Vec<usize> = (0..n).collect();
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j)).collect())
        .collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let k = ids.len();
        let (mut bi, mut bj, mut best) = (0usize, 1usize, f64::INFINITY);
        for i in 0..k {
            for j in (i + 1)..k {
                // ids are created in ascending order, so scanning i<j visits
                // candidate pairs in lexicographic (id_i, id_j) order and a
                // strict < keeps the first of any tie.
                if dist[i][j] < best {
                    (bi, bj, best) = (i, j, dist[i][j]);
                }
            }
        }
        let (left, right) = (ids[bi], ids[bj]);
        let size = cluster_size(left, n, &merges) + cluster_size(right, n, &merges);
        merges.push(Merge {
            left,
            right,
            height: best,
            size,
        });
        // Replace the pair with the merged cluster (new highest id, so it
        // goes to the end to keep ids ascending).
        let merged: Vec<f64> = (0..k)
            .filter(|&t| t != bi && t != bj)
            .map(|t| dist[bi][t].min(dist[bj][t]))
            .collect();
        let keep: Vec<usize> = (0..k).filter(|&t| t != bi && t != bj).collect();
        let mut new_dist: Vec<Vec<f64>> = keep
            .iter()
            .map(|&a| keep.iter().map(|&b| dist[a][b]).collect())
            .collect();
        for (row, &d) in new_dist.iter_mut().zip(&merged) {
            row.push(d);
        }
        let mut last: Vec<f64> = merged;
        last.push(0.0);
        new_dist.push(last);
        dist = new_dist;
        ids = keep.iter().map(|&a| ids[a]).collect();
        ids.push(n + step);
    }
    Dendrogram::new(n, merges)
}

fn cluster_size(id: usize, n_leaves: usize, merges: &[Merge]) -> usize {
    if id < n_leaves {
        1
    } else {
        merges[id - n_leaves].size
    }
}

/// Cophenetic distances read off a dendrogram: `t(i,j)` is the height of
/// the merge that first puts leaves `i` and `j` in one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CopheneticMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CopheneticMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Upper-triangle entries (`i < j`) in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

pub fn cophenetic(d: &Dendrogram) -> CopheneticMatrix {
    let n = d.n_leaves();
    let mut leaves: Vec<Vec<usize>> = (0..2 * n - 1)
        .map(|id| if id < n { vec![id] } else { Vec::new() })
        .collect();
    let mut entries = vec![0.0; n * n];
    for (k, m) in d.merges().iter().enumerate() {
        for &i in &leaves[m.left] {
            for &j in &leaves[m.right] {
                entries[i * n + j] = m.height;
                entries[j * n + i] = m.height;
            }
        }
        let mut combined = std::mem::take(&mut leaves[m.left]);
        combined.append(&mut leaves[m.right]);
        leaves[n + k] = combined;
    }
    CopheneticMatrix { n, entries }
}

/// Fractional (average) ranks, 1-based; ties share the mean of the ranks
/// they span.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    // (vx * vy).sqrt() instead of vx.sqrt() * vy.sqrt(): when the two rank
    // lists are identical this divides cov by sqrt(cov^2) == cov exactly,
    // so self-correlation is exactly 1.
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation with fractional tie ranks: the Pearson
/// correlation of the two rank sequences, in `[-1, 1]`.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "rank correlation needs at least two observations".into(),
        ));
    }
    for (name, vals) in [("x", x), ("y", y)] {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{name} contains a non-finite value"
            )));
        }
        if vals.iter().all(|&v| v == vals[0]) {
            return Err(Error::DegenerateInput(format!(
                "{name} is constant; ranks carry no information"
            )));
        }
    }
    let r = pearson(&fractional_ranks(x), &fractional_ranks(y));
    // Rounding can push |r| a hair past 1.
    Ok(r.clamp(-1.0, 1.0))
}

/// How well the feature geometry reproduces a reference tree: build the
/// single-linkage dendrogram of `features`, then Spearman-correlate the
/// two cophenetic upper triangles.
pub fn tree_correlation(features: &[FeatureVector], reference: &Dendrogram) -> Result<f64> {
    if features.len() != reference.n_leaves() {
        return Err(Error::DimMismatch {
            expected: reference.n_leaves(),
            got: features.len(),
        });
    }
    let matrix = pairwise_matrix(features)?;
    let tree = hac_nearest_point(&matrix)?;
    let ours = cophenetic(&tree);
    let theirs = cophenetic(reference);
    spearman(&ours.upper_triangle(), &theirs.upper_triangle())
}

/// Options of [`lda_score`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaOptions {
    /// L2-normalize features first (default). Cosine-trained embeddings
    /// carry meaning in direction only; without this, norm drift pollutes
    /// the score.
    pub normalize: bool,
    /// Center on the mean of the whole feature set instead of the
    /// per-category mean.
    pub global_mean: bool,
}

impl Default for LdaOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            global_mean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category_id: String,
    /// `sigma_inter / sigma_intra`.
    pub score: f64,
    pub sigma_inter: f64,
    pub sigma_intra: f64,
}

/// Per-category separation scores plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaScoreReport {
    pub options: LdaOptions,
    pub per_category: Vec<CategoryScore>,
    /// Mean score over scored categories.
    pub mean_score: f64,
    /// Categories whose intra-object scatter was exactly zero; excluded
    /// from the mean.
    pub degenerate_categories: Vec<String>,
    /// Categories with fewer than two objects; not scored.
    pub skipped_categories: Vec<String>,
}

/// Inter/intra separation score per category.
///
/// Within category `i` with objects `S_i`: `x_bar` is the mean feature
/// (per category, or global with [`LdaOptions::global_mean`]), `mu_c` the
/// mean over object `c`'s views,
///
/// ```text
/// sigma_inter = (1/|S_i|) sum_c |mu_c - x_bar|^2
/// sigma_intra = (1/|S_i|) sum_c (1/|c|) sum_x |x - mu_c|^2
/// Score_i     = sigma_inter / sigma_intra
/// ```
///
/// A high score means view manifolds are compact relative to how spread
/// out the objects are.
pub fn lda_score(
    features: &[FeatureVector],
    dataset: &MultiViewDataset,
    options: LdaOptions,
) -> Result<LdaScoreReport> {
    if features.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature vectors for {} records",
            features.len(),
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let dim = features[0].dim();
    let prepared: Vec<Vec<f64>> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: f.dim(),
                });
            }
            if options.normalize {
                let n = f.norm();
                if n < ZERO_NORM_EPS {
                    return Err(Error::ZeroNormInput { index: Some(i) });
                }
                Ok(f.as_slice().iter().map(|v| v / n).collect())
            } else {
                Ok(f.as_slice().to_vec())
            }
        })
        .collect::<Result<_>>()?;

    let mean_of = |indices: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        for &i in indices {
            for (mv, &v) in m.iter_mut().zip(&prepared[i]) {
                *mv += v;
            }
        }
        for mv in &mut m {
            *mv /= indices.len() as f64;
        }
        m
    };
    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let all_indices: Vec<usize> = (0..dataset.len()).collect();
    let global_mean = mean_of(&all_indices);

    let mut per_category = Vec::new();
    let mut degenerate = Vec::new();
    let mut skipped = Vec::new();
    for cat in dataset.categories() {
        if cat.object_indices.len() < 2 {
            skipped.push(cat.category_id.clone());
            continue;
        }
        let x_bar = if options.global_mean {
            global_mean.clone()
        } else {
            mean_of(&cat.record_indices)
        };
        let mut sigma_inter = 0.0;
        let mut sigma_intra = 0.0;
        for &obj_index in &cat.object_indices {
            let obj = &dataset.objects()[obj_index];
            let mu = mean_of(&obj.record_indices);
            sigma_inter += sq_dist(&mu, &x_bar);
            let scatter: f64 = obj
                .record_indices
                .iter()
                .map(|&r| sq_dist(&prepared[r], &mu))
                .sum();
            sigma_intra += scatter / obj.record_indices.len() as f64;
        }
        sigma_inter /= cat.object_indices.len() as f64;
        sigma_intra /= cat.object_indices.len() as f64;
        if sigma_intra == 0.0 {
            degenerate.push(cat.category_id.clone());
            continue;
        }
        per_category.push(CategoryScore {
            category_id: cat.category_id.clone(),
            score: sigma_inter / sigma_intra,
            sigma_inter,
            sigma_intra,
        });
    }
    if per_category.is_empty() {
        if !degenerate.is_empty() {
            return Err(Error::DegenerateIntra(format!(
                "no category has nonzero intra-object scatter (degenerate: {})",
                degenerate.join(", ")
            )));
        }
        return Err(Error::InsufficientObjects(
            "no category has at least two objects".into(),
        ));
    }
    let mean_score =
        per_category.iter().map(|c| c.score).sum::<f64>() / per_category.len() as f64;
    Ok(LdaScoreReport {
        options,
        per_category,
        mean_score,
        degenerate_categories: degenerate,
        skipped_categories: skipped,
    })
}
