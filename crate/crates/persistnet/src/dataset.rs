//! Synthetic multi-view object datasets.
//!
//! A dataset is a flat list of records, each one view of one object:
//! `(object_id, category_id, view_index, features)`. The generator builds
//! them from three latent factors — a category code, an object code, and a
//! point on a view ring — pushed through a fixed random mixing matrix with
//! a rectifier, plus per-view Gaussian noise. Category structure, instance
//! identity and view pose are therefore all recoverable in principle, which
//! is what the training and evaluation pipeline is meant to probe.
//!
//! Datasets persist as a one-line JSON header followed by one CSV line per
//! record; floats are written with 17 significant digits so a round trip is
//! bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FeatureVector;

pub const DATA_FORMAT_VERSION: &str = "persistnet-data-v1";

/// Formats a float with 17 significant digits, enough to reproduce any
/// `f64` bit pattern on parse.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One view of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub object_id: String,
    pub category_id: String,
    pub view_index: u32,
    pub features: FeatureVector,
}

/// All records of one object, in record order.
#[derive(Debug, Clone)]
pub struct ObjectGroup {
    pub object_id: String,
    pub category_id: String,
    pub category_index: usize,
    pub record_indices: Vec<usize>,
}

/// All objects and records of one category, in first-appearance order.
#[derive(Debug, Clone)]
pub struct CategoryGroup {
    pub category_id: String,
    pub object_indices: Vec<usize>,
    pub record_indices: Vec<usize>,
}

/// An immutable collection of multi-view records with precomputed object
/// and category indexes.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    records: Vec<DatasetRecord>,
    feature_dim: usize,
    views_per_object: u32,
    objects: Vec<ObjectGroup>,
    categories: Vec<CategoryGroup>,
    record_object: Vec<usize>,
}

impl MultiViewDataset {
    /// Validates records and builds the object/category indexes.
    ///
    /// Rules enforced here: every feature vector has `feature_dim` entries,
    /// `view_index < views_per_object`, `(object_id, view_index)` pairs are
    /// unique, each object maps to exactly one category, and ids are
    /// non-empty and free of commas and newlines (they have to survive the
    /// text format).
    pub fn new(
        records: Vec<DatasetRecord>,
        feature_dim: usize,
        views_per_object: u32,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidInput("feature_dim must be positive".into()));
        }
        if views_per_object == 0 {
            return Err(Error::InvalidInput(
                "views_per_object must be positive".into(),
            ));
        }
        let mut objects: Vec<ObjectGroup> = Vec::new();
        let mut categories: Vec<CategoryGroup> = Vec::new();
        let mut object_lookup: HashMap<String, usize> = HashMap::new();
        let mut category_lookup: HashMap<String, usize> = HashMap::new();
        let mut seen_views: HashMap<(usize, u32), ()> = HashMap::new();
        let mut record_object = Vec::with_capacity(records.len());

        for (idx, rec) in records.iter().enumerate() {
            for (what, id) in [("object_id", &rec.object_id), ("category_id", &rec.category_id)] {
                if id.is_empty() || id.contains(',') || id.contains('\n') {
                    return Err(Error::InvalidInput(format!(
                        "record {idx}: {what} {id:?} must be non-empty and free of commas/newlines"
                    )));
                }
            }
            if rec.features.dim() != feature_dim {
                return Err(Error::DimMismatch {
                    expected: feature_dim,
                    got: rec.features.dim(),
                });
            }
            if rec.view_index >= views_per_object {
                return Err(Error::InvalidInput(format!(
                    "record {idx}: view_index {} out of range [0, {views_per_object})",
                    rec.view_index
                )));
            }
            let cat_index = *category_lookup
                .entry(rec.category_id.clone())
                .or_insert_with(|| {
                    categories.push(CategoryGroup {
                        category_id: rec.category_id.clone(),
                        object_indices: Vec::new(),
                        record_indices: Vec::new(),
                    });
                    categories.len() - 1
                });
            let obj_index = *object_lookup.entry(rec.object_id.clone()).or_insert_with(|| {
                objects.push(ObjectGroup {
                    object_id: rec.object_id.clone(),
                    category_id: rec.category_id.clone(),
                    category_index: cat_index,
                    record_indices: Vec::new(),
                });
                categories[cat_index].object_indices.push(objects.len() - 1);
                objects.len() - 1
            });
            if objects[obj_index].category_id != rec.category_id {
                return Err(Error::InvalidInput(format!(
                    "record {idx}: object {} already belongs to category {}, cannot also be in {}",
                    rec.object_id, objects[obj_index].category_id, rec.category_id
                )));
            }
            if seen_views.insert((obj_index, rec.view_index), ()).is_some() {
                return Err(Error::InvalidInput(format!(
                    "record {idx}: duplicate view {} of object {}",
                    rec.view_index, rec.object_id
                )));
            }
            objects[obj_index].record_indices.push(idx);
            categories[cat_index].record_indices.push(idx);
            record_object.push(obj_index);
        }

        Ok(Self {
            records,
            feature_dim,
            views_per_object,
            objects,
            categories,
            record_object,
        })
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &DatasetRecord {
        &self.records[index]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn views_per_object(&self) -> u32 {
        self.views_per_object
    }

    pub fn objects(&self) -> &[ObjectGroup] {
        &self.objects
    }

    pub fn categories(&self) -> &[CategoryGroup] {
        &self.categories
    }

    /// Index into [`Self::objects`] of the object that owns record `index`.
    pub fn object_of(&self, index: usize) -> usize {
        self.record_object[index]
    }

    /// Index into [`Self::categories`] of the category of record `index`.
    pub fn category_of(&self, index: usize) -> usize {
        self.objects[self.record_object[index]].category_index
    }

    /// Clones all feature vectors in record order. Handy as the "raw
    /// feature" baseline for evaluation.
    pub fn features(&self) -> Vec<FeatureVector> {
        self.records.iter().map(|r| r.features.clone()).collect()
    }
}

/// Knobs of the synthetic generator.
///
/// Raw factors per view: `amp_category * c` (category code, shared by all
/// objects of the category), `amp_object * o` (object code, shared by all
/// views of the object) and `amp_view * (cos t, sin t)` with
/// `t = 2*pi*view/views_per_object`. The concatenation is multiplied by a
/// fixed Gaussian mixing matrix (entries scaled by `1/sqrt(raw_dim)`),
/// rectified, and perturbed with `N(0, noise_sigma^2)` per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_categories: usize,
    pub objects_per_category: usize,
    pub views_per_object: u32,
    pub latent_dim_category: usize,
    pub latent_dim_object: usize,
    pub feature_dim: usize,
    pub amp_category: f64,
    pub amp_object: f64,
    pub amp_view: f64,
    pub noise_sigma: f64,
    /// Seed of the mixing matrix; fixing it pins the "feature extractor".
    pub mixing_seed: u64,
    /// Seed of the latent draws and the per-view noise.
    pub sample_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_categories: 35,
            objects_per_category: 12,
            views_per_object: 12,
            latent_dim_category: 8,
            latent_dim_object: 8,
            feature_dim: 128,
            amp_category: 1.0,
            amp_object: 0.6,
            // Strong enough that raw features group by viewing angle, not
            // object identity: nearest-neighbor retrieval on raw features
            // must be poor so that training has something to fix.
            amp_view: 3.0,
            noise_sigma: 0.05,
            mixing_seed: 7,
            sample_seed: 11,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("n_categories", self.n_categories),
            ("objects_per_category", self.objects_per_category),
            ("latent_dim_category", self.latent_dim_category),
            ("latent_dim_object", self.latent_dim_object),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if self.views_per_object == 0 {
            return Err(Error::InvalidInput("views_per_object must be positive".into()));
        }
        for (name, v) in [
            ("amp_category", self.amp_category),
            ("amp_object", self.amp_object),
            ("amp_view", self.amp_view),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn raw_dim(&self) -> usize {
        self.latent_dim_category + self.latent_dim_object + 2
    }
}

/// A pre-mixing record: the concatenated latent factors of one view.
#[derive(Debug, Clone)]
pub struct RawViewRecord {
    pub category_index: usize,
    /// Object index within its category.
    pub object_index: usize,
    pub view_index: u32,
    pub raw: Vec<f64>,
}

fn draw_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Generates the latent-factor records without mixing or noise. Exposed so
/// the factor structure itself can be inspected and tested.
pub fn generate_raw(cfg: &GeneratorConfig) -> Result<Vec<RawViewRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    let v_total = cfg.views_per_object as usize;
    let mut out =
        Vec::with_capacity(cfg.n_categories * cfg.objects_per_category * v_total);
    for ci in 0..cfg.n_categories {
        let cat_code = draw_normal(&mut rng, cfg.latent_dim_category);
        for oi in 0..cfg.objects_per_category {
            let obj_code = draw_normal(&mut rng, cfg.latent_dim_object);
            for v in 0..cfg.views_per_object {
                let theta = 2.0 * std::f64::consts::PI * f64::from(v)
                    / f64::from(cfg.views_per_object);
                let mut raw = Vec::with_capacity(cfg.raw_dim());
                raw.extend(cat_code.iter().map(|x| cfg.amp_category * x));
                raw.extend(obj_code.iter().map(|x| cfg.amp_object * x));
                raw.push(cfg.amp_view * theta.cos());
                raw.push(cfg.amp_view * theta.sin());
                out.push(RawViewRecord {
                    category_index: ci,
                    object_index: oi,
                    view_index: v,
                    raw,
                });
            }
        }
    }
    Ok(out)
}

/// Row-major `feature_dim x raw_dim` mixing matrix drawn from
/// `mixing_seed`, entries `N(0, 1/raw_dim)`.
fn mixing_matrix(cfg: &GeneratorConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mixing_seed);
    let scale = 1.0 / (cfg.raw_dim() as f64).sqrt();
    (0..cfg.feature_dim * cfg.raw_dim())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates a full dataset: latent factors, fixed random mixing with a
/// rectifier, and fresh per-view noise drawn from a separate stream of the
/// sample seed so latents and noise never alias.
pub fn generate(cfg: &GeneratorConfig) -> Result<MultiViewDataset> {
    let raws = generate_raw(cfg)?;
    let mixer = mixing_matrix(cfg);
    let raw_dim = cfg.raw_dim();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    noise_rng.set_stream(1);

    let mut records = Vec::with_capacity(raws.len());
    for r in &raws {
        let mut features = Vec::with_capacity(cfg.feature_dim);
        for j in 0..cfg.feature_dim {
            let row = &mixer[j * raw_dim..(j + 1) * raw_dim];
            let mixed: f64 = row.iter().zip(&r.raw).map(|(m, x)| m * x).sum();
            let noise: f64 = noise_rng.sample(StandardNormal);
            features.push(mixed.max(0.0) + cfg.noise_sigma * noise);
        }
        let category_id = format!("cat{:03}", r.category_index);
        records.push(DatasetRecord {
            object_id: format!("{category_id}-obj{:03}", r.object_index),
            category_id,
            view_index: r.view_index,
            features: FeatureVector::new(features)?,
        });
    }
    MultiViewDataset::new(records, cfg.feature_dim, cfg.views_per_object)
}

/// How to partition objects into evaluation splits.
///
/// Categories listed in `held_out_categories` go to the novel-category
/// split in full. Every remaining category must contain exactly
/// `train_objects + validation_objects + novel_instance_objects` objects;
/// they are assigned at random per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_objects: usize,
    pub validation_objects: usize,
    pub novel_instance_objects: usize,
    pub held_out_categories: Vec<String>,
}

impl Default for SplitSpec {
    /// 8 / 2 / 2 objects per category, holding out the last six categories
    /// of the default generator (29 trained + 6 novel).
    fn default() -> Self {
        Self {
            train_objects: 8,
            validation_objects: 2,
            novel_instance_objects: 2,
            held_out_categories: (29..35).map(|i| format!("cat{i:03}")).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    /// Objects the network trains on.
    pub train: MultiViewDataset,
    /// Held-out objects from training categories, for monitoring.
    pub validation: MultiViewDataset,
    /// Unseen objects from training categories.
    pub novel_instance: MultiViewDataset,
    /// All objects of held-out categories.
    pub novel_category: MultiViewDataset,
}

/// Partitions `dataset` by object according to `spec`, shuffling object
/// assignments with `seed`. Record order within each split follows the
/// original dataset, so splitting is reproducible byte for byte.
pub fn split(dataset: &MultiViewDataset, spec: &SplitSpec, seed: u64) -> Result<DatasetSplits> {
    for id in &spec.held_out_categories {
        if !dataset.categories().iter().any(|c| &c.category_id == id) {
            return Err(Error::SplitInfeasible(format!(
                "held-out category {id:?} does not exist in the dataset"
            )));
        }
    }
    for (i, id) in spec.held_out_categories.iter().enumerate() {
        if spec.held_out_categories[..i].contains(id) {
            return Err(Error::SplitInfeasible(format!(
                "held-out category {id:?} listed more than once"
            )));
        }
    }
    let kept: Vec<usize> = (0..dataset.categories().len())
        .filter(|&ci| {
            !spec
                .held_out_categories
                .contains(&dataset.categories()[ci].category_id)
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::SplitInfeasible(
            "every category is held out; nothing remains to train on".into(),
        ));
    }

    const TRAIN: usize = 0;
    const VALIDATION: usize = 1;
    const NOVEL_INSTANCE: usize = 2;
    const NOVEL_CATEGORY: usize = 3;
    let needed = spec.train_objects + spec.validation_objects + spec.novel_instance_objects;
    let mut assignment = vec![NOVEL_CATEGORY; dataset.objects().len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &ci in &kept {
        let cat = &dataset.categories()[ci];
        if cat.object_indices.len() != needed {
            return Err(Error::SplitInfeasible(format!(
                "category {} has {} objects but the split needs exactly {} ({} train + {} validation + {} novel-instance)",
                cat.category_id,
                cat.object_indices.len(),
                needed,
                spec.train_objects,
                spec.validation_objects,
                spec.novel_instance_objects
            )));
        }
        let mut order = cat.object_indices.clone();
        order.shuffle(&mut rng);
        for (k, &obj) in order.iter().enumerate() {
            assignment[obj] = if k < spec.train_objects {
                TRAIN
            } else if k < spec.train_objects + spec.validation_objects {
                VALIDATION
            } else {
                NOVEL_INSTANCE
            };
        }
    }

    let mut buckets: [Vec<DatasetRecord>; 4] = Default::default();
    for (idx, rec) in dataset.records().iter().enumerate() {
        buckets[assignment[dataset.object_of(idx)]].push(rec.clone());
    }
    let [train, validation, novel_instance, novel_category] = buckets;
    let make = |records| {
        MultiViewDataset::new(records, dataset.feature_dim(), dataset.views_per_object())
    };
    Ok(DatasetSplits {
        train: make(train)?,
        validation: make(validation)?,
        novel_instance: make(novel_instance)?,
        novel_category: make(novel_category)?,
    })
}

#[derive(Serialize, Deserialize)]
struct DataHeader {
    version: String,
    feature_dim: usize,
    views_per_object: u32,
}

/// Writes `dataset` to `writer` in the versioned text format.
pub fn write_to<W: Write>(dataset: &MultiViewDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let header = DataHeader {
        version: DATA_FORMAT_VERSION.to_string(),
        feature_dim: dataset.feature_dim(),
        views_per_object: dataset.views_per_object(),
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::InvalidInput(format!("header serialization failed: {e}")))?;
    writeln!(w, "{header_json}")?;
    for rec in dataset.records() {
        write!(w, "{},{},{}", rec.object_id, rec.category_id, rec.view_index)?;
        for v in rec.features.as_slice() {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save(dataset: &MultiViewDataset, path: &Path) -> Result<()> {
    write_to(dataset, File::create(path)?)
}

/// Reads a dataset from `reader`, reporting malformed content with the
/// 1-based line it occurred on.
pub fn read_from<R: Read>(reader: R) -> Result<MultiViewDataset> {
    let mut lines = BufReader::new(reader).lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Format {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let header: DataHeader = serde_json::from_str(&header_line).map_err(|e| Error::Format {
        line: 1,
        msg: format!("invalid header: {e}"),
    })?;
    if header.version != DATA_FORMAT_VERSION {
        return Err(Error::Format {
            line: 1,
            msg: format!(
                "unsupported version {:?}, expected {DATA_FORMAT_VERSION:?}",
                header.version
            ),
        });
    }

    let mut records = Vec::new();
    let mut seen: HashMap<(String, u32), usize> = HashMap::new();
    let mut object_category: HashMap<String, (String, usize)> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let bad = |msg: String| Error::Format { line: line_no, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(bad(format!(
                "expected at least 4 comma-separated fields, found {}",
                fields.len()
            )));
        }
        let object_id = fields[0].to_string();
        let category_id = fields[1].to_string();
        if object_id.is_empty() || category_id.is_empty() {
            return Err(bad("empty object_id or category_id".into()));
        }
        let view_index: u32 = fields[2]
            .parse()
            .map_err(|e| bad(format!("invalid view_index {:?}: {e}", fields[2])))?;
        if view_index >= header.views_per_object {
            return Err(bad(format!(
                "view_index {view_index} out of range [0, {})",
                header.views_per_object
            )));
        }
        let feature_fields = &fields[3..];
        if feature_fields.len() != header.feature_dim {
            return Err(bad(format!(
                "expected {} features, found {}",
                header.feature_dim,
                feature_fields.len()
            )));
        }
        let mut features = Vec::with_capacity(header.feature_dim);
        for f in feature_fields {
            let v: f64 = f
                .parse()
                .map_err(|e| bad(format!("invalid feature value {f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite feature value {f:?}")));
            }
            features.push(v);
        }
        if let Some(prev) = seen.insert((object_id.clone(), view_index), line_no) {
            return Err(bad(format!(
                "duplicate view {view_index} of object {object_id} (first seen on line {prev})"
            )));
        }
        match object_category.get(&object_id) {
            Some((cat, first_line)) if cat != &category_id => {
                return Err(bad(format!(
                    "object {object_id} is in category {cat} on line {first_line} but {category_id} here"
                )));
            }
            Some(_) => {}
            None => {
                object_category.insert(object_id.clone(), (category_id.clone(), line_no));
            }
        }
        records.push(DatasetRecord {
            object_id,
            category_id,
            view_index,
            features: FeatureVector::new(features)
                .map_err(|e| bad(format!("invalid features: {e}")))?,
        });
    }
    MultiViewDataset::new(records, header.feature_dim, header.views_per_object)
}

pub fn load(path: &Path) -> Result<MultiViewDataset> {
    read_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            n_categories: 4,
            objects_per_category: 5,
            views_per_object: 6,
            latent_dim_category: 3,
            latent_dim_object: 3,
            feature_dim: 10,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generated_dataset_has_expected_shape() {
        let cfg = small_config();
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.len(), 4 * 5 * 6);
        assert_eq!(ds.feature_dim(), 10);
        assert_eq!(ds.views_per_object(), 6);
        assert_eq!(ds.categories().len(), 4);
        assert_eq!(ds.objects().len(), 20);
        for obj in ds.objects() {
            assert_eq!(obj.record_indices.len(), 6);
        }
        for cat in ds.categories() {
            assert_eq!(cat.object_indices.len(), 5);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records(), b.records());
    }

    #[test]
    fn different_sample_seed_changes_features() {
        let cfg = small_config();
        let other = GeneratorConfig {
            sample_seed: cfg.sample_seed + 1,
            ..cfg.clone()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&other).unwrap();
        assert_ne!(a.records()[0].features, b.records()[0].features);
    }

    #[test]
    fn views_of_one_object_share_latent_codes() {
        let cfg = small_config();
        let raws = generate_raw(&cfg).unwrap();
        let shared = cfg.latent_dim_category + cfg.latent_dim_object;
        for w in raws.chunks(cfg.views_per_object as usize) {
            for r in &w[1..] {
                assert_eq!(&r.raw[..shared], &w[0].raw[..shared]);
            }
        }
    }

    #[test]
    fn view_ring_is_mirror_symmetric_in_sine() {
        let cfg = small_config();
        let raws = generate_raw(&cfg).unwrap();
        let v = cfg.views_per_object as usize;
        let shared = cfg.latent_dim_category + cfg.latent_dim_object;
        for obj in raws.chunks(v) {
            for k in 1..v {
                let (a, b) = (&obj[k].raw, &obj[v - k].raw);
                assert!((a[shared] - b[shared]).abs() < 1e-12, "cosine must match");
                assert!((a[shared + 1] + b[shared + 1]).abs() < 1e-12, "sine must flip");
            }
        }
    }

    #[test]
    fn amplitudes_scale_latent_blocks_linearly() {
        let cfg = small_config();
        let doubled = GeneratorConfig {
            amp_object: cfg.amp_object * 2.0,
            ..cfg.clone()
        };
        let a = generate_raw(&cfg).unwrap();
        let b = generate_raw(&doubled).unwrap();
        let c_dim = cfg.latent_dim_category;
        let o_dim = cfg.latent_dim_object;
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(&ra.raw[..c_dim], &rb.raw[..c_dim]);
            for (x, y) in ra.raw[c_dim..c_dim + o_dim]
                .iter()
                .zip(&rb.raw[c_dim..c_dim + o_dim])
            {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_is_linear_in_sigma() {
        let base = GeneratorConfig {
            noise_sigma: 0.0,
            ..small_config()
        };
        let s1 = GeneratorConfig {
            noise_sigma: 0.05,
            ..base.clone()
        };
        let s2 = GeneratorConfig {
            noise_sigma: 0.10,
            ..base.clone()
        };
        let f0 = generate(&base).unwrap();
        let f1 = generate(&s1).unwrap();
        let f2 = generate(&s2).unwrap();
        let mut any_nonzero = false;
        for i in 0..f0.len() {
            let a = f0.record(i).features.as_slice();
            let b = f1.record(i).features.as_slice();
            let c = f2.record(i).features.as_slice();
            for j in 0..a.len() {
                let d1 = b[j] - a[j];
                let d2 = c[j] - a[j];
                assert!((d2 - 2.0 * d1).abs() < 1e-12);
                any_nonzero |= d1 != 0.0;
            }
        }
        assert!(any_nonzero, "noise never fired");
    }

    #[test]
    fn split_partitions_objects_exactly() {
        let cfg = small_config();
        let ds = generate(&cfg).unwrap();
        let spec = SplitSpec {
            train_objects: 3,
            validation_objects: 1,
            novel_instance_objects: 1,
            held_out_categories: vec!["cat003".into()],
        };
        let splits = split(&ds, &spec, 99).unwrap();
        assert_eq!(splits.train.objects().len(), 9);
        assert_eq!(splits.validation.objects().len(), 3);
        assert_eq!(splits.novel_instance.objects().len(), 3);
        assert_eq!(splits.novel_category.objects().len(), 5);
        assert_eq!(
            splits.train.len()
                + splits.validation.len()
                + splits.novel_instance.len()
                + splits.novel_category.len(),
            ds.len()
        );
        // No object id appears in more than one split.
        let mut all_ids: Vec<&str> = Vec::new();
        for part in [
            &splits.train,
            &splits.validation,
            &splits.novel_instance,
            &splits.novel_category,
        ] {
            all_ids.extend(part.objects().iter().map(|o| o.object_id.as_str()));
        }
        let mut dedup = all_ids.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), all_ids.len());
        // Held-out category keeps all objects together.
        assert!(splits
            .novel_category
            .objects()
            .iter()
            .all(|o| o.category_id == "cat003"));
        assert!(splits.train.objects().iter().all(|o| o.category_id != "cat003"));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ds = generate(&small_config()).unwrap();
        let spec = SplitSpec {
            train_objects: 3,
            validation_objects: 1,
            novel_instance_objects: 1,
            held_out_categories: vec![],
        };
        let a = split(&ds, &spec, 5).unwrap();
        let b = split(&ds, &spec, 5).unwrap();
        assert_eq!(a.train.records(), b.train.records());
        let c = split(&ds, &spec, 6).unwrap();
        assert!(
            a.train.records() != c.train.records(),
            "different seeds should shuffle objects differently"
        );
    }

    #[test]
    fn infeasible_split_counts_are_rejected() {
        let ds = generate(&small_config()).unwrap();
        let spec = SplitSpec {
            train_objects: 4,
            validation_objects: 2,
            novel_instance_objects: 1,
            held_out_categories: vec![],
        };
        match split(&ds, &spec, 0) {
            Err(Error::SplitInfeasible(msg)) => {
                assert!(msg.contains("has 5 objects"), "message was: {msg}")
            }
            other => panic!("expected SplitInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn unknown_held_out_category_is_rejected() {
        let ds = generate(&small_config()).unwrap();
        let spec = SplitSpec {
            train_objects: 3,
            validation_objects: 1,
            novel_instance_objects: 1,
            held_out_categories: vec!["cat999".into()],
        };
        assert!(matches!(split(&ds, &spec, 0), Err(Error::SplitInfeasible(_))));
    }

    #[test]
    fn holding_out_everything_is_rejected() {
        let ds = generate(&small_config()).unwrap();
        let spec = SplitSpec {
            train_objects: 3,
            validation_objects: 1,
            novel_instance_objects: 1,
            held_out_categories: (0..4).map(|i| format!("cat{i:03}")).collect(),
        };
        assert!(matches!(split(&ds, &spec, 0), Err(Error::SplitInfeasible(_))));
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let ds = generate(&small_config()).unwrap();
        let mut buf = Vec::new();
        write_to(&ds, &mut buf).unwrap();
        let back = read_from(buf.as_slice()).unwrap();
        assert_eq!(ds.feature_dim(), back.feature_dim());
        assert_eq!(ds.views_per_object(), back.views_per_object());
        assert_eq!(ds.records(), back.records());
        // Second write of the reloaded dataset is byte-identical.
        let mut buf2 = Vec::new();
        write_to(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn round_trip_preserves_tricky_floats() {
        let values = vec![
            0.1,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1e300,
            -2.2250738585072014e-308,
            std::f64::consts::PI,
        ];
        let rec = DatasetRecord {
            object_id: "o".into(),
            category_id: "c".into(),
            view_index: 0,
            features: FeatureVector::new(values.clone()).unwrap(),
        };
        let ds = MultiViewDataset::new(vec![rec], values.len(), 1).unwrap();
        let mut buf = Vec::new();
        write_to(&ds, &mut buf).unwrap();
        let back = read_from(buf.as_slice()).unwrap();
        for (a, b) in values.iter().zip(back.record(0).features.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} did not survive the trip");
        }
    }

    #[test]
    fn load_reports_wrong_feature_count_with_line_number() {
        let text = format!(
            "{}\no1,c1,0,{},{}\no2,c1,0,{}\n",
            r#"{"version":"persistnet-data-v1","feature_dim":2,"views_per_object":1}"#,
            fmt_f64(1.0),
            fmt_f64(2.0),
            fmt_f64(1.0)
        );
        match read_from(text.as_bytes()) {
            Err(Error::Format { line: 3, msg }) => {
                assert!(msg.contains("expected 2 features, found 1"), "msg: {msg}")
            }
            other => panic!("expected Format error on line 3, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_unsupported_version() {
        let text = r#"{"version":"persistnet-data-v9","feature_dim":2,"views_per_object":1}"#;
        assert!(matches!(
            read_from(text.as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn load_rejects_garbage_header_and_empty_file() {
        assert!(matches!(
            read_from("not json".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            read_from("".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn load_rejects_duplicate_views_with_line_number() {
        let text = format!(
            "{}\no1,c1,0,{}\no1,c1,0,{}\n",
            r#"{"version":"persistnet-data-v1","feature_dim":1,"views_per_object":2}"#,
            fmt_f64(1.0),
            fmt_f64(2.0)
        );
        assert!(matches!(
            read_from(text.as_bytes()),
            Err(Error::Format { line: 3, .. })
        ));
    }

    #[test]
    fn load_rejects_inconsistent_object_category() {
        let text = format!(
            "{}\no1,c1,0,{}\no1,c2,1,{}\n",
            r#"{"version":"persistnet-data-v1","feature_dim":1,"views_per_object":2}"#,
            fmt_f64(1.0),
            fmt_f64(2.0)
        );
        assert!(matches!(
            read_from(text.as_bytes()),
            Err(Error::Format { line: 3, .. })
        ));
    }

    #[test]
    fn dataset_rejects_ids_with_commas() {
        let rec = DatasetRecord {
            object_id: "a,b".into(),
            category_id: "c".into(),
            view_index: 0,
            features: FeatureVector::new(vec![1.0]).unwrap(),
        };
        assert!(MultiViewDataset::new(vec![rec], 1, 1).is_err());
    }
}
