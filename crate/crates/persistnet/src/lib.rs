//! Triplet-trained embedding networks for multi-view object data.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`dataset`] — synthetic multi-view datasets with category / object /
//!   view factor structure, plus object-level train/validation/novel
//!   splits and a bit-exact text format.
//! * [`geometry`] — cosine distance, the triplet hinge loss, and their
//!   analytic gradients.
//! * [`triplets`] — positive-pair sampling and in-batch hard-negative
//!   mining.
//! * [`net`] — a small fully connected embedding network trained with
//!   manual backprop, SGD with momentum, weight decay and a staircase
//!   learning-rate schedule; includes a finite-difference gradient check.
//! * [`retrieval`] — instance- and category-level retrieval evaluation:
//!   average precision, MAP and interpolated precision-recall curves.
//! * [`manifold`] — structure diagnostics on an embedding: pairwise
//!   distance matrices, nearest-point agglomerative clustering, cophenetic
//!   distances, rank correlation of trees, and an inter/intra separation
//!   score.
//!
//! Everything that consumes randomness takes an explicit seed and uses a
//! counter-based generator, so every artifact the crate produces is
//! reproducible byte for byte.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod manifold;
pub mod net;
pub mod retrieval;
pub mod triplets;

pub use error::{Error, Result};
