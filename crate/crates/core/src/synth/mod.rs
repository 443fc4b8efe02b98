//! Analytic test scenes, ground-truth rendering, synthetic matches and
//! evaluation metrics.

mod bundle;
mod matches;
pub mod metrics;
mod scene;

pub use bundle::SynthBundle;
pub use matches::{
    synthesize_augmented, synthesize_at, synthesize_correspondences, ConfidenceModel, CorruptionSpec, SynthMatches,
};
pub use metrics::{chamfer_l1, depth_mae, psnr, ssim, EvalReport, ViewMetrics};
pub use scene::{
    camera_rig, canonical_scene, render_ground_truth, AnalyticScene, Hit, Primitive, RigConfig, SceneKind, Texture,
    HIT_EPSILON,
};

/// Scale factors of the synthetic augmentation sets.
pub const AUGMENT_SCALES: [f64; 3] = [1.0, 0.5, 2.0];
