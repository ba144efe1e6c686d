//! Retrieval evaluation: average precision, MAP and precision-recall
//! curves over cosine similarity rankings.
//!
//! Two tasks share the machinery. *Instance* retrieval queries each view
//! against all other views of its category and counts other views of the
//! same object as relevant — it measures whether an embedding identifies
//! an object across viewpoints. *Categorical* retrieval queries each view
//! against the whole dataset and counts same-category views as relevant.
//!
//! AP is the non-interpolated variant (mean precision at each relevant
//! rank); PR curves use interpolated precision (max precision at any rank
//! reaching the recall level) on a fixed recall grid, averaged over
//! queries. Score ties are broken by ascending record index so reports are
//! pure functions of the features.

use std::io::{BufWriter, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, MultiViewDataset};
use crate::error::{Error, Result};
use crate::geometry::{self, FeatureVector, ZERO_NORM_EPS};

/// `1 - cosine_distance`, in `[-1, 1]`; higher is more similar.
pub fn similarity_score(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    Ok(1.0 - geometry::cosine_distance(a, b)?)
}

/// Average precision of an ordered binary relevance list: the mean, over
/// relevant positions `k`, of `(relevant in top k) / k`.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::NoRelevant(
            "relevance list contains no relevant item".into(),
        ));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub record: usize,
    pub score: f64,
    pub relevant: bool,
}

/// Candidates of one query ordered by descending score, ties by ascending
/// record index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts `entries` into ranking order. The result is independent of
    /// the input order.
    pub fn rank(mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record.cmp(&b.record)));
        Self { entries }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn relevance(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.relevant).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalTask {
    Instance,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Evaluation result of one task over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub task: RetrievalTask,
    /// AP per included query record, in record order.
    pub per_query_ap: Vec<QueryAp>,
    /// Arithmetic mean of `per_query_ap`.
    pub map_score: f64,
    /// Interpolated precision averaged over queries on the recall grid.
    pub pr_points: Vec<PrPoint>,
    /// Queries dropped because they had no relevant candidate.
    pub excluded_queries: usize,
}

impl RetrievalReport {
    /// CSV export of the PR curve, columns `recall,precision`, values at
    /// full precision.
    pub fn write_pr_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "recall,precision")?;
        for p in &self.pr_points {
            writeln!(w, "{},{}", fmt_f64(p.recall), fmt_f64(p.precision))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The default 100-point recall grid `0.01, 0.02, ..., 1.00`.
pub fn default_recall_grid() -> Vec<f64> {
    (1..=100).map(|i| f64::from(i) / 100.0).collect()
}

/// Interpolated-precision PR curve averaged over queries.
///
/// For each query and recall level `r`, the precision is the maximum
/// precision at any rank whose recall reaches `r`. Every list must contain
/// at least one relevant item (guaranteed when lists come from the
/// retrieval drivers, which exclude empty queries).
pub fn pr_curve(relevance_lists: &[Vec<bool>], recall_grid: &[f64]) -> Result<Vec<PrPoint>> {
    for (i, &g) in recall_grid.iter().enumerate() {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "recall grid value {g} is outside (0, 1]"
            )));
        }
        if i > 0 && recall_grid[i - 1] >= g {
            return Err(Error::InvalidInput(
                "recall grid must be strictly increasing".into(),
            ));
        }
    }
    if relevance_lists.is_empty() {
        return Err(Error::NoRelevant("no queries to average".into()));
    }
    let mut sums = vec![0.0; recall_grid.len()];
    for list in relevance_lists {
        let total = list.iter().filter(|&&r| r).count();
        if total == 0 {
            return Err(Error::NoRelevant(
                "a relevance list contains no relevant item".into(),
            ));
        }
        // precision/recall after each rank, then interpolate from the tail.
        let mut interp = vec![0.0; list.len()];
        let mut recall = vec![0.0; list.len()];
        let mut hits = 0usize;
        for (k, &rel) in list.iter().enumerate() {
            if rel {
                hits += 1;
            }
            interp[k] = hits as f64 / (k + 1) as f64;
            recall[k] = hits as f64 / total as f64;
        }
        for k in (0..list.len().saturating_sub(1)).rev() {
            interp[k] = interp[k].max(interp[k + 1]);
        }
        let mut k = 0usize;
        for (sum, &g) in sums.iter_mut().zip(recall_grid) {
            while recall[k] < g {
                k += 1; // recall reaches 1.0 at the last relevant rank
            }
            *sum += interp[k];
        }
    }
    Ok(recall_grid
        .iter()
        .zip(&sums)
        .map(|(&recall, &sum)| PrPoint {
            recall,
            precision: sum / relevance_lists.len() as f64,
        })
        .collect())
}

/// L2-normalizes all features up front so each pairwise score is a dot
/// product. Reports the offending record on zero norms.
fn normalize_all(features: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let n = f.norm();
            if n < ZERO_NORM_EPS {
                return Err(Error::ZeroNormInput { index: Some(i) });
            }
            Ok(f.as_slice().iter().map(|v| v / n).collect())
        })
        .collect()
}

fn evaluate(
    features: &[FeatureVector],
    dataset: &MultiViewDataset,
    task: RetrievalTask,
) -> Result<RetrievalReport> {
    if features.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature vectors for {} records",
            features.len(),
            dataset.len()
        )));
    }
    if let Some(first) = features.first() {
        for f in features {
            if f.dim() != first.dim() {
                return Err(Error::DimMismatch {
                    expected: first.dim(),
                    got: f.dim(),
                });
            }
        }
    }
    if task == RetrievalTask::Categorical && dataset.categories().len() < 2 {
        return Err(Error::InsufficientCategories(dataset.categories().len()));
    }
    let normalized = normalize_all(features)?;

    let mut per_query_ap = Vec::new();
    let mut relevance_lists = Vec::new();
    let mut excluded = 0usize;
    for q in 0..dataset.len() {
        let q_obj = dataset.object_of(q);
        let q_cat = dataset.category_of(q);
        let candidates: Vec<usize> = match task {
            RetrievalTask::Instance => dataset.categories()[q_cat]
                .record_indices
                .iter()
                .copied()
                .filter(|&r| r != q)
                .collect(),
            RetrievalTask::Categorical => (0..dataset.len()).filter(|&r| r != q).collect(),
        };
        let entries: Vec<RankedEntry> = candidates
            .iter()
            .map(|&r| RankedEntry {
                record: r,
                score: geometry::dot(&normalized[q], &normalized[r]).clamp(-1.0, 1.0),
                relevant: match task {
                    RetrievalTask::Instance => dataset.object_of(r) == q_obj,
                    RetrievalTask::Categorical => dataset.category_of(r) == q_cat,
                },
            })
            .collect();
        if !entries.iter().any(|e| e.relevant) {
            excluded += 1;
            continue;
        }
        let ranked = RankedList::rank(entries);
        let relevance = ranked.relevance();
        per_query_ap.push(QueryAp {
            query: q,
            ap: average_precision(&relevance)?,
        });
        relevance_lists.push(relevance);
    }
    if per_query_ap.is_empty() {
        return Err(Error::NoRelevant(
            "every query was excluded: no relevant candidates anywhere".into(),
        ));
    }
    let map_score =
        per_query_ap.iter().map(|a| a.ap).sum::<f64>() / per_query_ap.len() as f64;
    let pr_points = pr_curve(&relevance_lists, &default_recall_grid())?;
    Ok(RetrievalReport {
        task,
        per_query_ap,
        map_score,
        pr_points,
        excluded_queries: excluded,
    })
}

/// Instance retrieval: each record queries all other records of its
/// category; other views of its object are relevant. Queries without a
/// relevant candidate (single-view objects) are excluded and counted.
pub fn instance_retrieval(
    features: &[FeatureVector],
    dataset: &MultiViewDataset,
) -> Result<RetrievalReport> {
    evaluate(features, dataset, RetrievalTask::Instance)
}

/// Categorical retrieval: each record queries every other record; records
/// of the same category are relevant. Needs at least two categories.
pub fn categorical_retrieval(
    features: &[FeatureVector],
    dataset: &MultiViewDataset,
) -> Result<RetrievalReport> {
    evaluate(features, dataset, RetrievalTask::Categorical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetRecord;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    fn dataset_from(specs: &[(&str, &str, u32)], dim: usize) -> MultiViewDataset {
        let records = specs
            .iter()
            .map(|&(obj, cat, view)| DatasetRecord {
                object_id: obj.into(),
                category_id: cat.into(),
                view_index: view,
                features: fv(&vec![1.0; dim]),
            })
            .collect();
        MultiViewDataset::new(records, dim, 16).unwrap()
    }

    #[test]
    fn similarity_of_identical_orthogonal_antipodal() {
        let a = fv(&[2.0, 0.0]);
        assert_eq!(similarity_score(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity_score(&a, &fv(&[0.0, 3.0])).unwrap(), 0.0);
        assert!((similarity_score(&a, &fv(&[-1.0, 0.0])).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn average_precision_known_values() {
        assert_eq!(average_precision(&[true, true, false]).unwrap(), 1.0);
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ap = average_precision(&[false, false, true]).unwrap();
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn average_precision_requires_a_relevant_item() {
        assert!(matches!(
            average_precision(&[false, false]),
            Err(Error::NoRelevant(_))
        ));
        assert!(matches!(average_precision(&[]), Err(Error::NoRelevant(_))));
    }

    /// Exhaustive check of the AP definition on all short binary lists:
    /// AP == 1 exactly when every relevant item precedes every irrelevant
    /// one, and AP always lands in [0, 1].
    #[test]
    fn average_precision_bounds_and_perfect_orderings() {
        for len in 1..=8usize {
            for mask in 1u32..(1 << len) {
                let list: Vec<bool> = (0..len).map(|k| mask >> k & 1 == 1).collect();
                let ap = average_precision(&list).unwrap();
                assert!((0.0..=1.0 + 1e-15).contains(&ap));
                let sorted_desc = list.windows(2).all(|w| w[0] >= w[1]);
                assert_eq!(ap >= 1.0 - 1e-15, sorted_desc, "list {list:?} ap {ap}");
            }
        }
    }

    #[test]
    fn ranking_is_independent_of_insertion_order() {
        let entries = vec![
            RankedEntry { record: 3, score: 0.5, relevant: false },
            RankedEntry { record: 1, score: 0.9, relevant: true },
            RankedEntry { record: 2, score: 0.5, relevant: true },
            RankedEntry { record: 0, score: 0.1, relevant: false },
        ];
        let a = RankedList::rank(entries.clone());
        let mut shuffled = entries;
        shuffled.reverse();
        let b = RankedList::rank(shuffled);
        assert_eq!(a, b);
        let order: Vec<usize> = a.entries().iter().map(|e| e.record).collect();
        assert_eq!(order, vec![1, 2, 3, 0], "ties broken by record index");
    }

    #[test]
    fn perfect_instance_features_give_map_one() {
        // All views of an object share one vector, distinct across objects.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut records = Vec::new();
        for c in 0..2 {
            for o in 0..3 {
                let shared: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
                for v in 0..3u32 {
                    records.push(DatasetRecord {
                        object_id: format!("c{c}o{o}"),
                        category_id: format!("c{c}"),
                        view_index: v,
                        features: fv(&shared),
                    });
                }
            }
        }
        let ds = MultiViewDataset::new(records, 4, 3).unwrap();
        let report = instance_retrieval(&ds.features(), &ds).unwrap();
        assert_eq!(report.map_score, 1.0);
        assert_eq!(report.excluded_queries, 0);
        assert_eq!(report.per_query_ap.len(), ds.len());
    }

    #[test]
    fn perfect_categorical_features_give_map_one() {
        let mut records = Vec::new();
        for (c, base) in [(0, [1.0, 0.0]), (1, [0.0, 1.0])] {
            for o in 0..2 {
                for v in 0..2u32 {
                    records.push(DatasetRecord {
                        object_id: format!("c{c}o{o}"),
                        category_id: format!("c{c}"),
                        view_index: v,
                        features: fv(&base),
                    });
                }
            }
        }
        let ds = MultiViewDataset::new(records, 2, 2).unwrap();
        let report = categorical_retrieval(&ds.features(), &ds).unwrap();
        assert_eq!(report.map_score, 1.0);
    }

    #[test]
    fn categorical_needs_two_categories() {
        let ds = dataset_from(&[("a", "c", 0), ("a", "c", 1), ("b", "c", 0)], 3);
        assert!(matches!(
            categorical_retrieval(&ds.features(), &ds),
            Err(Error::InsufficientCategories(1))
        ));
    }

    /// Brute-force oracle: re-rank every query with straight-line code on
    /// top of the public similarity function and re-derive AP/MAP.
    #[test]
    fn reports_match_a_naive_reranking_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut records = Vec::new();
        for c in 0..2 {
            for o in 0..3 {
                for v in 0..3u32 {
                    let f: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                    records.push(DatasetRecord {
                        object_id: format!("c{c}o{o}"),
                        category_id: format!("c{c}"),
                        view_index: v,
                        features: fv(&f),
                    });
                }
            }
        }
        let ds = MultiViewDataset::new(records, 5, 3).unwrap();
        let features = ds.features();

        for task in [RetrievalTask::Instance, RetrievalTask::Categorical] {
            let report = evaluate(&features, &ds, task).unwrap();
            let mut expected_aps = Vec::new();
            for q in 0..ds.len() {
                let mut scored: Vec<(usize, f64, bool)> = (0..ds.len())
                    .filter(|&r| r != q)
                    .filter(|&r| match task {
                        RetrievalTask::Instance => ds.category_of(r) == ds.category_of(q),
                        RetrievalTask::Categorical => true,
                    })
                    .map(|r| {
                        let s = similarity_score(&features[q], &features[r]).unwrap();
                        let rel = match task {
                            RetrievalTask::Instance => ds.object_of(r) == ds.object_of(q),
                            RetrievalTask::Categorical => {
                                ds.category_of(r) == ds.category_of(q)
                            }
                        };
                        (r, s, rel)
                    })
                    .collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let rel: Vec<bool> = scored.iter().map(|&(_, _, r)| r).collect();
                if rel.iter().any(|&r| r) {
                    // AP by literal definition.
                    let total = rel.iter().filter(|&&r| r).count();
                    let mut hits = 0;
                    let mut sum = 0.0;
                    for (k, &r) in rel.iter().enumerate() {
                        if r {
                            hits += 1;
                            sum += hits as f64 / (k + 1) as f64;
                        }
                    }
                    expected_aps.push(sum / total as f64);
                }
            }
            let got: Vec<f64> = report.per_query_ap.iter().map(|a| a.ap).collect();
            assert_eq!(got.len(), expected_aps.len());
            for (g, e) in got.iter().zip(&expected_aps) {
                assert!((g - e).abs() < 1e-12);
            }
            let expected_map = expected_aps.iter().sum::<f64>() / expected_aps.len() as f64;
            assert!((report.map_score - expected_map).abs() < 1e-12);
        }
    }

    #[test]
    fn single_view_objects_are_excluded_and_counted() {
        let mut records = vec![DatasetRecord {
            object_id: "lone".into(),
            category_id: "c".into(),
            view_index: 0,
            features: fv(&[0.5, 0.5]),
        }];
        for o in 0..2 {
            for v in 0..2u32 {
                records.push(DatasetRecord {
                    object_id: format!("o{o}"),
                    category_id: "c".into(),
                    view_index: v,
                    features: fv(&[1.0 + o as f64, v as f64 + 0.1]),
                });
            }
        }
        let ds = MultiViewDataset::new(records, 2, 2).unwrap();
        let report = instance_retrieval(&ds.features(), &ds).unwrap();
        assert_eq!(report.excluded_queries, 1);
        assert_eq!(report.per_query_ap.len(), 4);
        assert!(report.per_query_ap.iter().all(|a| a.query != 0));
    }

    #[test]
    fn pr_curve_interpolates_known_case() {
        let points = pr_curve(&[vec![true, false, true]], &[0.5, 1.0]).unwrap();
        assert_eq!(points[0].precision, 1.0);
        assert!((points[1].precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pr_curve_is_flat_one_for_all_relevant() {
        let grid = default_recall_grid();
        let points = pr_curve(&[vec![true; 7]], &grid).unwrap();
        assert!(points.iter().all(|p| p.precision == 1.0));
        assert_eq!(points.len(), 100);
    }

    #[test]
    fn pr_curve_average_of_identical_queries_is_idempotent() {
        let q = vec![true, false, false, true, true];
        let grid = default_recall_grid();
        let one = pr_curve(&[q.clone()], &grid).unwrap();
        let two = pr_curve(&[q.clone(), q], &grid).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn pr_curve_rejects_bad_grids() {
        assert!(pr_curve(&[vec![true]], &[0.5, 0.5]).is_err());
        assert!(pr_curve(&[vec![true]], &[0.0, 0.5]).is_err());
        assert!(pr_curve(&[vec![true]], &[0.5, 1.2]).is_err());
    }

    #[test]
    fn zero_norm_feature_is_reported_with_its_index() {
        let records = vec![
            DatasetRecord {
                object_id: "a".into(),
                category_id: "c".into(),
                view_index: 0,
                features: fv(&[1.0, 0.0]),
            },
            DatasetRecord {
                object_id: "a".into(),
                category_id: "c".into(),
                view_index: 1,
                features: fv(&[0.0, 0.0]),
            },
        ];
        let ds = MultiViewDataset::new(records, 2, 2).unwrap();
        match instance_retrieval(&ds.features(), &ds) {
            Err(Error::ZeroNormInput { index: Some(1) }) => {}
            other => panic!("expected ZeroNormInput at index 1, got {other:?}"),
        }
    }

    proptest! {
        /// Positive scaling never changes a report.
        #[test]
        fn reports_are_scale_invariant(seed in 0u64..50, alpha in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut records = Vec::new();
            for c in 0..2 {
                for o in 0..2 {
                    for v in 0..2u32 {
                        let f: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
                        records.push(DatasetRecord {
                            object_id: format!("c{c}o{o}"),
                            category_id: format!("c{c}"),
                            view_index: v,
                            features: fv(&f),
                        });
                    }
                }
            }
            let ds = MultiViewDataset::new(records, 4, 2).unwrap();
            let features = ds.features();
            let scaled: Vec<FeatureVector> = features
                .iter()
                .map(|f| fv(&f.as_slice().iter().map(|v| v * alpha).collect::<Vec<_>>()))
                .collect();
            let a = instance_retrieval(&features, &ds).unwrap();
            let b = instance_retrieval(&scaled, &ds).unwrap();
            prop_assert_eq!(&a.per_query_ap, &b.per_query_ap);
            prop_assert_eq!(a.map_score, b.map_score);
            prop_assert_eq!(&a.pr_points, &b.pr_points);
        }
    }

    #[test]
    fn pr_csv_lists_the_grid_in_order() {
        let report = RetrievalReport {
            task: RetrievalTask::Instance,
            per_query_ap: vec![QueryAp { query: 0, ap: 1.0 }],
            map_score: 1.0,
            pr_points: vec![
                PrPoint { recall: 0.5, precision: 1.0 },
                PrPoint { recall: 1.0, precision: 0.25 },
            ],
            excluded_queries: 0,
        };
        let mut buf = Vec::new();
        report.write_pr_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "recall,precision");
        assert_eq!(lines[1], "5.0000000000000000e-1,1.0000000000000000e0");
        assert_eq!(lines[2], "1.0000000000000000e0,2.5000000000000000e-1");
    }
}
