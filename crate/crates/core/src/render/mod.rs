//! Volume rendering, training losses and the optimization loop.

mod losses;
mod sampling;
mod train;
mod volume;

use thiserror::Error;

pub use losses::{
    clamp_depth_tape, color_loss, color_loss_tape, depth_loss, depth_loss_tape, pixel_loss, pixel_loss_tape, reprojection_error,
    total_loss, CorresPrediction, DepthLoss, LossWeights, PairTarget, ProjectionLine, BEHIND_CAMERA_Z, DEPTH_EPSILON,
};
pub use sampling::{bin_centers, deltas, sample_stratified, sample_with};
pub use train::{
    render_image, train, train_with_observer, MetricsRow, RenderedView, TrainConfig, TrainData, TrainOutcome,
    TrainView, EvalView, PixelUnits,
};
pub use volume::{composite, composite_tape, render_ray, RayRender, RaySampleBatch, TapeRender};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("need at least 2 samples per ray, got {0}")]
    TooFewSamples(usize),
    #[error("sample positions must be strictly increasing inside the ray bounds")]
    InvalidSamples,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error(
        "non-finite loss at iteration {iteration}: color {color}, pixel {pixel}, depth {depth}"
    )]
    NonFiniteLoss { iteration: u64, color: f64, pixel: f64, depth: f64 },
    #[error(transparent)]
    Optimizer(#[from] crate::optim::OptimError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}
