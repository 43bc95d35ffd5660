//! Joint feature matching and robust two-view estimation.
//!
//! The estimator consumes one-to-many match pools, where every source feature
//! keeps its `k` best candidate matches, and hypothesizes essential matrices or
//! homographies from single affine correspondences with a known gravity
//! direction. Guided matching finalizes one-to-one matches for each
//! hypothesis, and local optimization refits the best model from points.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod metrics;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    AffineCorrespondence, CameraIntrinsics, GravityDirection, ImagePoint, ModelHypothesis,
    ModelKind, RelativePose,
};
