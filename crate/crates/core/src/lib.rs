//! Sparse-view radiance fields supervised by pixel correspondences.
//!
//! The crate covers the whole path from raw matches to a trained field:
//! [`corres`] merges, propagates and filters correspondences, [`field`] and
//! [`render`] define the network, the volume renderer and the training loop,
//! and [`synth`] provides analytic scenes with exact ground truth.
//!
//! Numeric code is generic over [`scalar::Real`]; the aliases below fix the
//! scalar for the common cases.

pub mod checkpoint;
pub mod corres;
pub mod field;
pub mod geometry;
pub mod image;
pub mod knn;
pub mod linalg;
pub mod optim;
pub mod render;
pub mod scalar;
pub mod synth;
pub mod tape;

pub type Vec3 = linalg::Vec3<f64>;
pub type Camera = geometry::Camera<f64>;
pub type PixelCoord = geometry::PixelCoord<f64>;
pub type Ray = geometry::Ray<f64>;
/// Single-precision field, the training default.
pub type Field = field::FieldParams<f32>;
pub type Field64 = field::FieldParams<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
