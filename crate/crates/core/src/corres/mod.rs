//! Correspondence priors: augmentation merge, graph propagation and outlier
//! filtering.
//!
//! The stages compose as
//! [`merge_augmented`] → [`build_graph`] → [`propagate`] →
//! [`filter_projection`] → [`filter_statistical`], which
//! [`preprocess_pipeline`] runs in that order.

mod augment;
mod cloud;
mod filter;
mod graph;
pub mod io;
mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PixelCoord};

pub use augment::{merge_augmented, AugmentedSet, MergeOutcome, PixelMap, DEDUP_RADIUS_PX};
pub use cloud::{triangulate_cloud, TriangulatedCloud};
pub use filter::{filter_projection, filter_statistical, filter_statistical_with, FilterReport, SorMode, StageCounts, KNN_RELATIVE_SLACK};
pub use graph::{build_graph, propagate, CorrespondenceGraph, Edge, Vertex};
pub use pipeline::{preprocess_pipeline, PipelineConfig};

/// Index of an image (and its camera) within a [`crate::geometry::CameraSet`].
pub type ImageId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Direct,
    Augmented,
    Propagated,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorresError {
    #[error("correspondence must join two distinct images (got {0} twice)")]
    SameImage(ImageId),
    #[error("confidence {0} outside (0, 1]")]
    Confidence(f64),
    #[error("direct matcher confidence {0} outside [0.5, 1]")]
    DirectConfidence(f64),
    #[error("non-finite pixel coordinate")]
    NonFinite,
    #[error("unknown image id {0}")]
    UnknownImage(ImageId),
    #[error("statistical filter needs more than k = {k} points, got {count}")]
    TooFewPoints { k: usize, count: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A pixel correspondence between a query and a support image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub image_q: ImageId,
    pub image_s: ImageId,
    pub p_q: PixelCoord<f64>,
    pub p_s: PixelCoord<f64>,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl Correspondence {
    pub fn new(
        image_q: ImageId,
        image_s: ImageId,
        p_q: PixelCoord<f64>,
        p_s: PixelCoord<f64>,
        confidence: f64,
        provenance: Provenance,
    ) -> Result<Self, CorresError> {
        let c = Self { image_q, image_s, p_q, p_s, confidence, provenance };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CorresError> {
        if self.image_q == self.image_s {
            return Err(CorresError::SameImage(self.image_q));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(CorresError::Confidence(self.confidence));
        }
        if self.provenance == Provenance::Direct && self.confidence < 0.5 {
            return Err(CorresError::DirectConfidence(self.confidence));
        }
        if !self.p_q.is_finite() || !self.p_s.is_finite() {
            return Err(CorresError::NonFinite);
        }
        Ok(())
    }

    /// The same correspondence with query and support exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            image_q: self.image_s,
            image_s: self.image_q,
            p_q: self.p_s,
            p_s: self.p_q,
            ..*self
        }
    }

    /// Orients the pair so that `image_q < image_s`.
    pub fn canonical(self) -> Self {
        if self.image_q > self.image_s {
            self.swapped()
        } else {
            self
        }
    }
}

/// Fraction of survivors, 1 for an empty input.
pub(crate) fn survival(input: usize, output: usize) -> f64 {
    if input == 0 {
        1.0
    } else {
        output as f64 / input as f64
    }
}
