//! The trainable embedding network.
//!
//! A small fully connected net — rectifier hidden layers, identity output —
//! trained with manual backpropagation on the triplet hinge loss plus L2
//! weight decay:
//!
//! ```text
//! J(W) = (1/N) sum_t max(0, D(a_t, p_t) - D(a_t, n_t) + margin)
//!        + (weight_decay / 2) * sum |W|^2
//! ```
//!
//! Optimization is SGD with momentum (`v <- mu*v - lr*g; param <- param + v`)
//! under a staircase learning-rate schedule. Everything is seeded and
//! single-threaded, so a (seed, config, dataset) triple reproduces the
//! trained net bit for bit.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, MultiViewDataset};
use crate::error::{Error, Result};
use crate::geometry::{self, FeatureVector};
use crate::triplets::{self, TripletBatch};

pub const NET_FORMAT_VERSION: &str = "persistnet-net-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Rectifier,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// One affine layer. `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNet {
    pub layers: Vec<Layer>,
}

impl EmbeddingNet {
    /// Glorot-uniform initialization: weights uniform in `[-s, s]` with
    /// `s = sqrt(6 / (in + out))`, biases zero. Hidden layers rectify, the
    /// last layer is linear. Deterministic given `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidInput(
                "layer_dims needs an input and at least one output dim".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("layer dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (in_dim, out_dim) = (layer_dims[l], layer_dims[l + 1]);
            let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-s..=s))
                .collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                bias: vec![0.0; out_dim],
                activation: if l + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Rectifier
                },
            });
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                *zr += geometry::dot(row, &current);
            }
            let out: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(current);
            pre_acts.push(z);
            current = out;
        }
        ForwardTrace {
            inputs,
            pre_acts,
            output: current,
        }
    }

    /// Embeds `x`. Errors with `DimMismatch` if `x` does not match the
    /// first layer.
    pub fn forward(&self, x: &FeatureVector) -> Result<FeatureVector> {
        if x.dim() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.dim(),
            });
        }
        FeatureVector::new(self.forward_trace(x.as_slice()).output)
    }

    /// Trace-free forward pass for hot paths (mining) that only need the
    /// output activations.
    pub(crate) fn embed_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut next = layer.bias.clone();
            for (r, nr) in next.iter_mut().enumerate() {
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                *nr = layer.activation.apply(*nr + geometry::dot(row, &current));
            }
            current = next;
        }
        current
    }

    /// Embeds every record of `dataset` in record order.
    pub fn embed_all(&self, dataset: &MultiViewDataset) -> Result<Vec<FeatureVector>> {
        dataset
            .records()
            .iter()
            .map(|r| self.forward(&r.features))
            .collect()
    }
}

struct ForwardTrace {
    /// `inputs[l]` is the vector fed to layer `l`.
    inputs: Vec<Vec<f64>>,
    /// `pre_acts[l]` is `W_l * inputs[l] + b_l` before the activation.
    pre_acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Gradient (or velocity) storage for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients mirroring the shape of an [`EmbeddingNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<ParamBlock>,
}

impl NetGrads {
    pub fn zeros_like(net: &EmbeddingNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| ParamBlock {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }
}

/// Momentum buffers plus the iteration counter that drives the learning-rate
/// schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<ParamBlock>,
    pub iter: usize,
}

impl OptimizerState {
    pub fn new(net: &EmbeddingNet) -> Self {
        Self {
            velocity: NetGrads::zeros_like(net).layers,
            iter: 0,
        }
    }
}

/// Training hyperparameters. Defaults are tuned for the synthetic
/// desk-scale datasets this crate generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_every: usize,
    pub momentum: f64,
    pub total_iters: usize,
    pub batch_positive_pairs: usize,
    pub hard_negatives_per_pair: usize,
    pub random_negatives_per_pair: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            weight_decay: 0.0005,
            base_lr: 0.01,
            lr_drop_factor: 10.0,
            lr_drop_every: 2000,
            momentum: 0.9,
            total_iters: 5000,
            batch_positive_pairs: 16,
            hard_negatives_per_pair: 2,
            random_negatives_per_pair: 2,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "margin must be finite and >= 0, got {}",
                self.margin
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidInput(format!(
                "base_lr must be finite and > 0, got {}",
                self.base_lr
            )));
        }
        if !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 1.0) {
            return Err(Error::InvalidInput(format!(
                "lr_drop_factor must be finite and > 1, got {}",
                self.lr_drop_factor
            )));
        }
        if self.lr_drop_every == 0 {
            return Err(Error::InvalidInput("lr_drop_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_positive_pairs == 0 {
            return Err(Error::InvalidInput(
                "batch_positive_pairs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Staircase schedule: `base_lr / lr_drop_factor^floor(iter / lr_drop_every)`.
pub fn lr_at(cfg: &TrainConfig, iter: usize) -> f64 {
    cfg.base_lr / cfg.lr_drop_factor.powi((iter / cfg.lr_drop_every) as i32)
}

/// What one backward pass produces: averaged gradients (including the
/// weight-decay term), the mean hinge loss (excluding the decay term), and
/// how many triplets sat on the active side of the hinge.
#[derive(Debug, Clone)]
pub struct BatchBackward {
    pub grads: NetGrads,
    pub mean_loss: f64,
    pub active_triplets: usize,
    pub triplet_count: usize,
}

impl BatchBackward {
    pub fn fraction_active(&self) -> f64 {
        if self.triplet_count == 0 {
            0.0
        } else {
            self.active_triplets as f64 / self.triplet_count as f64
        }
    }
}

fn check_batch(net: &EmbeddingNet, batch: &TripletBatch, dataset: &MultiViewDataset) -> Result<()> {
    if net.input_dim() != dataset.feature_dim() {
        return Err(Error::DimMismatch {
            expected: net.input_dim(),
            got: dataset.feature_dim(),
        });
    }
    for t in batch.triplets() {
        for idx in [t.anchor, t.positive, t.negative] {
            if idx >= dataset.len() {
                return Err(Error::InvalidInput(format!(
                    "triplet record index {idx} out of bounds for dataset of {} records",
                    dataset.len()
                )));
            }
        }
    }
    Ok(())
}

/// Embeds the unique records of `batch` once and returns `(sorted unique
/// record indices, their traces)`.
fn trace_unique(
    net: &EmbeddingNet,
    batch: &TripletBatch,
    dataset: &MultiViewDataset,
) -> (Vec<usize>, Vec<ForwardTrace>) {
    let unique: Vec<usize> = batch
        .triplets()
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let traces = unique
        .iter()
        .map(|&i| net.forward_trace(dataset.record(i).features.as_slice()))
        .collect();
    (unique, traces)
}

/// Mean hinge loss of `batch` under `net` (no decay term) and the number of
/// strictly active triplets.
fn mean_hinge_loss(
    net: &EmbeddingNet,
    batch: &TripletBatch,
    dataset: &MultiViewDataset,
    margin: f64,
) -> Result<(f64, usize)> {
    let (unique, traces) = trace_unique(net, batch, dataset);
    let pos = |i: usize| unique.binary_search(&i).expect("index traced above");
    let mut sum = 0.0;
    let mut active = 0;
    for t in batch.triplets() {
        let a = &traces[pos(t.anchor)].output;
        let p = &traces[pos(t.positive)].output;
        let n = &traces[pos(t.negative)].output;
        let z = geometry::cosine_distance_raw(a, p)? - geometry::cosine_distance_raw(a, n)?
            + margin;
        if z > 0.0 {
            active += 1;
        }
        sum += z.max(0.0);
    }
    let count = batch.triplets().len();
    Ok((if count == 0 { 0.0 } else { sum / count as f64 }, active))
}

/// Backpropagates one record's output gradient through the net,
/// accumulating into `grads`.
fn backprop_record(
    net: &EmbeddingNet,
    trace: &ForwardTrace,
    out_grad: &[f64],
    grads: &mut NetGrads,
) {
    let mut delta = out_grad.to_vec();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let z = &trace.pre_acts[l];
        let input = &trace.inputs[l];
        // Gradient w.r.t. the pre-activation. The rectifier's subgradient
        // at exactly zero is taken as zero.
        let dz: Vec<f64> = match layer.activation {
            Activation::Identity => delta,
            Activation::Rectifier => delta
                .iter()
                .zip(z)
                .map(|(&d, &zv)| if zv > 0.0 { d } else { 0.0 })
                .collect(),
        };
        let block = &mut grads.layers[l];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            block.bias[r] += dzr;
            let row = &mut block.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (w, &x) in row.iter_mut().zip(input) {
                *w += dzr * x;
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.in_dim];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
            for (p, &w) in prev.iter_mut().zip(row) {
                *p += w * dzr;
            }
        }
        delta = prev;
    }
}

/// Computes the gradient of the full objective over `batch`: the mean of
/// the per-triplet hinge gradients, plus `weight_decay * W` for every
/// weight matrix (biases are not decayed). The reported `mean_loss`
/// excludes the decay term.
pub fn backward_batch(
    net: &EmbeddingNet,
    batch: &TripletBatch,
    dataset: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<BatchBackward> {
    check_batch(net, batch, dataset)?;
    let (unique, traces) = trace_unique(net, batch, dataset);
    let pos = |i: usize| unique.binary_search(&i).expect("index traced above");

    let mut out_grads: Vec<Option<Vec<f64>>> = vec![None; unique.len()];
    let out_dim = net.output_dim();
    let mut add = |slot: usize, g: &[f64], sign: f64| {
        let acc = out_grads[slot].get_or_insert_with(|| vec![0.0; out_dim]);
        for (a, &v) in acc.iter_mut().zip(g) {
            *a += sign * v;
        }
    };

    let mut loss_sum = 0.0;
    let mut active = 0;
    for t in batch.triplets() {
        let (ia, ip, in_) = (pos(t.anchor), pos(t.positive), pos(t.negative));
        let a = &traces[ia].output;
        let p = &traces[ip].output;
        let n = &traces[in_].output;
        let d_pos = geometry::cosine_distance_raw(a, p)?;
        let d_neg = geometry::cosine_distance_raw(a, n)?;
        let z = d_pos - d_neg + cfg.margin;
        if z > 0.0 {
            active += 1;
        }
        loss_sum += z.max(0.0);
        if z >= 0.0 {
            // Active-side subgradient, consistent with triplet_loss_grads.
            let (ga_p, g_p) = geometry::cosine_distance_grad_raw(a, p)?;
            let (ga_n, g_n) = geometry::cosine_distance_grad_raw(a, n)?;
            add(ia, &ga_p, 1.0);
            add(ia, &ga_n, -1.0);
            add(ip, &g_p, 1.0);
            add(in_, &g_n, -1.0);
        }
    }

    let count = batch.triplets().len();
    let mut grads = NetGrads::zeros_like(net);
    if count > 0 {
        let scale = 1.0 / count as f64;
        for (slot, g) in out_grads.into_iter().enumerate() {
            if let Some(mut g) = g {
                for v in &mut g {
                    *v *= scale;
                }
                backprop_record(net, &traces[slot], &g, &mut grads);
            }
        }
    }
    for (layer, block) in net.layers.iter().zip(&mut grads.layers) {
        for (g, &w) in block.weights.iter_mut().zip(&layer.weights) {
            *g += cfg.weight_decay * w;
        }
    }

    Ok(BatchBackward {
        grads,
        mean_loss: if count == 0 { 0.0 } else { loss_sum / count as f64 },
        active_triplets: active,
        triplet_count: count,
    })
}

/// One SGD-with-momentum update:
/// `v <- momentum*v - lr_at(cfg, state.iter)*grad; param <- param + v`.
/// Increments `state.iter`.
pub fn sgd_step(
    net: &mut EmbeddingNet,
    grads: &NetGrads,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) {
    assert_eq!(
        grads.layers.len(),
        net.layers.len(),
        "gradient shape does not mirror the net"
    );
    let lr = lr_at(cfg, state.iter);
    for ((layer, block), vel) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity)
    {
        assert_eq!(block.weights.len(), layer.weights.len());
        assert_eq!(block.bias.len(), layer.bias.len());
        for ((w, &g), v) in layer
            .weights
            .iter_mut()
            .zip(&block.weights)
            .zip(&mut vel.weights)
        {
            *v = cfg.momentum * *v - lr * g;
            *w += *v;
        }
        for ((b, &g), v) in layer.bias.iter_mut().zip(&block.bias).zip(&mut vel.bias) {
            *v = cfg.momentum * *v - lr * g;
            *b += *v;
        }
    }
    state.iter += 1;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iter: usize,
    pub lr: f64,
    pub mean_batch_loss: f64,
    pub fraction_active_triplets: f64,
}

/// Per-iteration training metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainLogRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "iter,lr,mean_batch_loss,fraction_active_triplets")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{}",
                r.iter,
                fmt_f64(r.lr),
                fmt_f64(r.mean_batch_loss),
                fmt_f64(r.fraction_active_triplets)
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

fn validate_trainable(dataset: &MultiViewDataset) -> Result<()> {
    let mut any_eligible = false;
    for obj in dataset.objects() {
        if obj.record_indices.len() >= 2 {
            any_eligible = true;
            let cat = &dataset.categories()[obj.category_index];
            if cat.object_indices.len() < 2 {
                return Err(Error::InsufficientObjects(format!(
                    "category {} has a single object, so no within-category negative exists",
                    cat.category_id
                )));
            }
        }
    }
    if !any_eligible {
        return Err(Error::InsufficientViews(
            "no object has at least two views, so no positive pair exists".into(),
        ));
    }
    Ok(())
}

/// Runs the full training loop: per iteration, sample positive pairs, mine
/// hard and random negatives with the current net, backpropagate, and take
/// one momentum step. Returns the final net and the per-iteration log.
///
/// `cfg.seed` drives both the Glorot init and the per-iteration batch
/// seeds (via separate ChaCha streams).
pub fn train(
    dataset: &MultiViewDataset,
    layer_dims: &[usize],
    cfg: &TrainConfig,
) -> Result<(EmbeddingNet, TrainLog)> {
    cfg.validate()?;
    validate_trainable(dataset)?;
    if layer_dims.first() != Some(&dataset.feature_dim()) {
        return Err(Error::DimMismatch {
            expected: dataset.feature_dim(),
            got: layer_dims.first().copied().unwrap_or(0),
        });
    }
    let mut net = EmbeddingNet::init(layer_dims, cfg.seed)?;
    let mut state = OptimizerState::new(&net);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);
    let mut log = TrainLog::default();
    for iter in 0..cfg.total_iters {
        let batch = triplets::build_batch(&net, dataset, cfg, batch_rng.next_u64())?;
        let bb = backward_batch(&net, &batch, dataset, cfg)?;
        if !bb.mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        log.records.push(TrainLogRecord {
            iter,
            lr: lr_at(cfg, iter),
            mean_batch_loss: bb.mean_loss,
            fraction_active_triplets: bb.fraction_active(),
        });
        sgd_step(&mut net, &bb.grads, &mut state, cfg);
    }
    Ok((net, log))
}

/// Value of the full objective (mean hinge plus `(weight_decay/2)*sum W^2`)
/// used by the finite-difference check.
fn objective(
    net: &EmbeddingNet,
    batch: &TripletBatch,
    dataset: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (hinge, _) = mean_hinge_loss(net, batch, dataset, cfg.margin)?;
    let decay: f64 = net
        .layers
        .iter()
        .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
        .sum();
    Ok(hinge + 0.5 * cfg.weight_decay * decay)
}

/// Central-difference check of [`backward_batch`] over every parameter.
///
/// Each weight and bias is perturbed by `+-step` and the numerical
/// derivative of the full objective is compared against the analytic
/// gradient. Errors are measured relative to the larger of the two values,
/// floored at one thousandth of the largest gradient magnitude so that
/// near-zero entries do not turn rounding noise into spurious blowups.
/// Returns the maximum relative error.
pub fn gradient_check(
    net: &EmbeddingNet,
    batch: &TripletBatch,
    dataset: &MultiViewDataset,
    cfg: &TrainConfig,
    step: f64,
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let analytic = backward_batch(net, batch, dataset, cfg)?.grads;
    let gmax = analytic
        .layers
        .iter()
        .flat_map(|b| b.weights.iter().chain(&b.bias))
        .fold(0.0_f64, |m, &g| m.max(g.abs()));
    let floor = (1e-3 * gmax).max(1e-12);

    let mut probe = net.clone();
    let mut max_rel = 0.0_f64;
    for l in 0..net.layers.len() {
        for which in 0..2 {
            let len = if which == 0 {
                net.layers[l].weights.len()
            } else {
                net.layers[l].bias.len()
            };
            fn param(p: &mut EmbeddingNet, l: usize, which: usize, i: usize) -> &mut f64 {
                if which == 0 {
                    &mut p.layers[l].weights[i]
                } else {
                    &mut p.layers[l].bias[i]
                }
            }
            for i in 0..len {
                let original = *param(&mut probe, l, which, i);
                *param(&mut probe, l, which, i) = original + step;
                let f_plus = objective(&probe, batch, dataset, cfg)?;
                *param(&mut probe, l, which, i) = original - step;
                let f_minus = objective(&probe, batch, dataset, cfg)?;
                *param(&mut probe, l, which, i) = original;
                let numeric = (f_plus - f_minus) / (2.0 * step);
                let a = if which == 0 {
                    analytic.layers[l].weights[i]
                } else {
                    analytic.layers[l].bias[i]
                };
                let diff = (a - numeric).abs();
                if diff > 0.0 {
                    max_rel = max_rel.max(diff / a.abs().max(numeric.abs()).max(floor));
                }
            }
        }
    }
    Ok(max_rel)
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    train_config: TrainConfig,
}

/// Writes the net and the config that produced it as a single JSON
/// document.
pub fn write_checkpoint_to<W: Write>(
    net: &EmbeddingNet,
    cfg: &TrainConfig,
    writer: W,
) -> Result<()> {
    let file = CheckpointFile {
        version: NET_FORMAT_VERSION.to_string(),
        layer_dims: net.layer_dims(),
        layers: net.layers.clone(),
        train_config: cfg.clone(),
    };
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(&mut w, &file)
        .map_err(|e| Error::InvalidInput(format!("checkpoint serialization failed: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(net: &EmbeddingNet, cfg: &TrainConfig, path: &Path) -> Result<()> {
    write_checkpoint_to(net, cfg, File::create(path)?)
}

/// Reads a checkpoint back, validating version, shapes and finiteness.
pub fn read_checkpoint_from<R: Read>(reader: R) -> Result<(EmbeddingNet, TrainConfig)> {
    let file: CheckpointFile = serde_json::from_reader(reader).map_err(|e| Error::Format {
        line: e.line().max(1),
        msg: format!("invalid checkpoint: {e}"),
    })?;
    let bad = |msg: String| Error::Format { line: 1, msg };
    if file.version != NET_FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported version {:?}, expected {NET_FORMAT_VERSION:?}",
            file.version
        )));
    }
    if file.layers.is_empty() {
        return Err(bad("checkpoint has no layers".into()));
    }
    for (l, layer) in file.layers.iter().enumerate() {
        if layer.in_dim == 0 || layer.out_dim == 0 {
            return Err(bad(format!("layer {l} has a zero dimension")));
        }
        if layer.weights.len() != layer.in_dim * layer.out_dim {
            return Err(bad(format!(
                "layer {l}: expected {} weights, found {}",
                layer.in_dim * layer.out_dim,
                layer.weights.len()
            )));
        }
        if layer.bias.len() != layer.out_dim {
            return Err(bad(format!(
                "layer {l}: expected {} biases, found {}",
                layer.out_dim,
                layer.bias.len()
            )));
        }
        if layer
            .weights
            .iter()
            .chain(&layer.bias)
            .any(|v| !v.is_finite())
        {
            return Err(bad(format!("layer {l} contains non-finite parameters")));
        }
        if l > 0 && file.layers[l - 1].out_dim != layer.in_dim {
            return Err(bad(format!(
                "layer {l} input dim {} does not match previous output dim {}",
                layer.in_dim,
                file.layers[l - 1].out_dim
            )));
        }
    }
    let net = EmbeddingNet {
        layers: file.layers,
    };
    if net.layer_dims() != file.layer_dims {
        return Err(bad(format!(
            "layer_dims field {:?} does not match layer shapes {:?}",
            file.layer_dims,
            net.layer_dims()
        )));
    }
    file.train_config
        .validate()
        .map_err(|e| bad(format!("invalid train_config: {e}")))?;
    Ok((net, file.train_config))
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbeddingNet, TrainConfig)> {
    read_checkpoint_from(File::open(path)?)
}
