//! Cosine distance, the triplet hinge loss, and their closed-form gradients.
//!
//! Everything downstream (training, retrieval, manifold diagnostics) is
//! built on the distance between two feature vectors
//!
//! ```text
//! D(a, b) = 1 - a.b / (|a| |b|)
//! ```
//!
//! which lives in `[0, 2]` and ignores vector scale. The training signal is
//! the hinge `max(0, D(x, x+) - D(x, x-) + margin)` over (anchor, positive,
//! negative) triplets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm threshold under which cosine distance is treated as undefined.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// A dense feature vector with finite entries and at least one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Validates and wraps `values`. Rejects empty vectors and non-finite
    /// entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "feature vector must have at least one dimension".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature entry at position {pos}"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns the vector rescaled to unit norm, or `ZeroNormInput` if its
    /// norm is below [`ZERO_NORM_EPS`].
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n < ZERO_NORM_EPS {
            return Err(Error::ZeroNormInput { index: None });
        }
        Ok(Self(self.0.iter().map(|v| v / n).collect()))
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The two distances that define a triplet: anchor-to-positive and
/// anchor-to-negative. Both must lie in the cosine range `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletDistances {
    pub d_pos: f64,
    pub d_neg: f64,
}

impl TripletDistances {
    pub fn new(d_pos: f64, d_neg: f64) -> Result<Self> {
        for (name, d) in [("d_pos", d_pos), ("d_neg", d_neg)] {
            if !(0.0..=2.0).contains(&d) {
                return Err(Error::InvalidInput(format!(
                    "{name} = {d} is outside the cosine distance range [0, 2]"
                )));
            }
        }
        Ok(Self { d_pos, d_neg })
    }
}

/// Dot product, slice-level.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Slice-level cosine distance; shared by the public API and the training
/// inner loop, which works on raw activations.
pub(crate) fn cosine_distance_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(Error::ZeroNormInput { index: None });
    }
    // Rounding can push |cos| a hair past 1; clamp so the distance stays
    // inside [0, 2] exactly.
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Cosine distance `1 - a.b / (|a| |b|)`, clamped into `[0, 2]`.
pub fn cosine_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    cosine_distance_raw(a.as_slice(), b.as_slice())
}

/// Gradient of the cosine distance with respect to both arguments:
///
/// ```text
/// dD/da = -( b / (|a| |b|) - (a.b) a / (|a|^3 |b|) )
/// ```
///
/// and symmetrically for `b`.
pub(crate) fn cosine_distance_grad_raw(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(Error::ZeroNormInput { index: None });
    }
    let ab = dot(a, b);
    let inv = 1.0 / (na * nb);
    let ga: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| -(bi * inv - ab * ai / (na * na * na * nb)))
        .collect();
    let gb: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| -(ai * inv - ab * bi / (na * nb * nb * nb)))
        .collect();
    Ok((ga, gb))
}

/// Gradients of [`cosine_distance`] with respect to `a` and `b`.
pub fn cosine_distance_grad(
    a: &FeatureVector,
    b: &FeatureVector,
) -> Result<(FeatureVector, FeatureVector)> {
    let (ga, gb) = cosine_distance_grad_raw(a.as_slice(), b.as_slice())?;
    Ok((FeatureVector::new(ga)?, FeatureVector::new(gb)?))
}

/// Hinge loss `max(0, d_pos - d_neg + margin)` of one triplet.
pub fn triplet_hinge_loss(d: &TripletDistances, margin: f64) -> f64 {
    (d.d_pos - d.d_neg + margin).max(0.0)
}

/// Gradients of the triplet hinge with respect to the anchor, positive and
/// negative embeddings, in that order.
///
/// On the flat side of the hinge (`d_pos - d_neg + margin < 0`) all three
/// gradients are exactly zero. At the kink we take the active-side
/// subgradient, matching what a solver does in practice.
pub fn triplet_loss_grads(
    anchor: &FeatureVector,
    positive: &FeatureVector,
    negative: &FeatureVector,
    margin: f64,
) -> Result<(FeatureVector, FeatureVector, FeatureVector)> {
    let (ga, gp, gn) = triplet_loss_grads_raw(
        anchor.as_slice(),
        positive.as_slice(),
        negative.as_slice(),
        margin,
    )?;
    Ok((
        FeatureVector::new(ga)?,
        FeatureVector::new(gp)?,
        FeatureVector::new(gn)?,
    ))
}

pub(crate) fn triplet_loss_grads_raw(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d_pos = cosine_distance_raw(anchor, positive)?;
    let d_neg = cosine_distance_raw(anchor, negative)?;
    let dim = anchor.len();
    if d_pos - d_neg + margin < 0.0 {
        return Ok((vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]));
    }
    let (ga_p, g_pos) = cosine_distance_grad_raw(anchor, positive)?;
    let (ga_n, g_neg) = cosine_distance_grad_raw(anchor, negative)?;
    let g_anchor: Vec<f64> = ga_p.iter().zip(&ga_n).map(|(p, n)| p - n).collect();
    let g_negative: Vec<f64> = g_neg.iter().map(|v| -v).collect();
    Ok((g_anchor, g_pos, g_negative))
}
