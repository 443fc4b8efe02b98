use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::AnalyticScene;
use crate::corres::{AugmentedSet, Correspondence, ImageId, PixelMap, Provenance};
use crate::geometry::{pixel_to_ray, project, Camera, CameraSet, PixelCoord};

/// Reported confidence as a function of the true support-pixel error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfidenceModel {
    /// `1 − error / falloff_px`.
    Linear { falloff_px: f64 },
    Constant { value: f64 },
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel::Linear { falloff_px: 8.0 }
    }
}

impl ConfidenceModel {
    /// Clamped to `[0.5, 1]`.
    pub fn confidence(&self, error_px: f64) -> f64 {
        let c = match *self {
            ConfidenceModel::Linear { falloff_px } => 1.0 - error_px / falloff_px,
            ConfidenceModel::Constant { value } => value,
        };
        if c.is_nan() {
            0.5
        } else {
            c.clamp(0.5, 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Gaussian noise added to support pixels, per axis.
    pub pixel_noise_std: f64,
    /// Probability that a support pixel is replaced by a uniform one.
    pub outlier_fraction: f64,
    pub confidence_model: ConfidenceModel,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self { pixel_noise_std: 0.0, outlier_fraction: 0.0, confidence_model: ConfidenceModel::default() }
    }
}

impl CorruptionSpec {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn with_noise(std: f64) -> Self {
        Self { pixel_noise_std: std, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.pixel_noise_std.is_finite() && self.pixel_noise_std >= 0.0) {
            return Err(format!("pixel_noise_std {} must be finite and >= 0", self.pixel_noise_std));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(format!("outlier_fraction {} must lie in [0, 1)", self.outlier_fraction));
        }
        if let ConfidenceModel::Linear { falloff_px } = self.confidence_model {
            if !(falloff_px.is_finite() && falloff_px > 0.0) {
                return Err("confidence falloff must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthMatches {
    pub correspondences: Vec<Correspondence>,
    /// Pairs whose support pixel was replaced.
    pub outliers: usize,
    /// Set when no surface point is visible in both views.
    pub no_covisible: bool,
}

/// Matches between two views of `scene`.
///
/// Query pixels are the centers of every `stride`-th pixel in both axes;
/// each surface point visible from both cameras projects into the support
/// image, then receives noise, outlier replacement and a confidence from
/// `corruption`. Noise never moves the query pixel.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_correspondences(
    scene: &AnalyticScene,
    cam_q: &Camera<f64>,
    cam_s: &Camera<f64>,
    ids: (ImageId, ImageId),
    stride: u32,
    corruption: &CorruptionSpec,
    rng: &mut impl Rng,
) -> SynthMatches {
    let queries: Vec<PixelCoord<f64>> = (0..cam_q.height())
        .step_by(stride.max(1) as usize)
        .flat_map(|v| (0..cam_q.width()).step_by(stride.max(1) as usize).map(move |u| PixelCoord::new(u as f64, v as f64)))
        .collect();
    synthesize_at(scene, cam_q, cam_s, ids, &queries, corruption, rng)
}

/// [`synthesize_correspondences`] for explicit query pixels.
pub fn synthesize_at(
    scene: &AnalyticScene,
    cam_q: &Camera<f64>,
    cam_s: &Camera<f64>,
    ids: (ImageId, ImageId),
    queries: &[PixelCoord<f64>],
    corruption: &CorruptionSpec,
    rng: &mut impl Rng,
) -> SynthMatches {
    let noise = Normal::new(0.0, corruption.pixel_noise_std).expect("validated noise std");
    let mut out = SynthMatches::default();
    for p_q in queries {
        let Ok(ray) = pixel_to_ray(cam_q, p_q, 0.0, f64::MAX) else { continue };
        let Some(hit) = scene.intersect(&ray.origin(), &ray.direction()) else { continue };
        if !scene.visible_from(&cam_s.center(), &hit.point) {
            continue;
        }
        let Ok(truth) = project(cam_s, &hit.point) else { continue };
        if !cam_s.contains(&truth) {
            continue;
        }
        let mut p_s = truth;
        if corruption.pixel_noise_std > 0.0 {
            p_s = PixelCoord::new(p_s.u + noise.sample(rng), p_s.v + noise.sample(rng));
        }
        if corruption.outlier_fraction > 0.0 && rng.random::<f64>() < corruption.outlier_fraction {
            let half = 0.5;
            p_s = PixelCoord::new(
                rng.random_range(-half..cam_s.width() as f64 - half),
                rng.random_range(-half..cam_s.height() as f64 - half),
            );
            out.outliers += 1;
        }
        let confidence = corruption.confidence_model.confidence(p_s.distance(&truth));
        out.correspondences.push(Correspondence {
            image_q: ids.0,
            image_s: ids.1,
            p_q: *p_q,
            p_s,
            confidence,
            provenance: Provenance::Direct,
        });
    }
    out.no_covisible = out.correspondences.is_empty();
    out
}

/// Matcher output on every image pair of `views`, once per scale factor.
///
/// Each set samples query pixels on the grid of the scaled query image and
/// stores pixels in scaled coordinates, as a matcher run on resized images
/// would.
pub fn synthesize_augmented(
    scene: &AnalyticScene,
    cameras: &CameraSet,
    views: &[ImageId],
    scales: &[f64],
    stride: u32,
    corruption: &CorruptionSpec,
    rng: &mut impl Rng,
) -> Vec<AugmentedSet> {
    let mut sets = Vec::with_capacity(scales.len());
    for &factor in scales {
        let map = if factor == 1.0 { PixelMap::Identity } else { PixelMap::Scale { factor } };
        let mut corrs = Vec::new();
        for (a, &i) in views.iter().enumerate() {
            for &j in &views[a + 1..] {
                let (cq, cs) = (cameras.get(i).expect("view id"), cameras.get(j).expect("view id"));
                let (w, h) = map.image_size(cq.width(), cq.height());
                let queries: Vec<PixelCoord<f64>> = (0..h)
                    .step_by(stride.max(1) as usize)
                    .flat_map(|v| (0..w).step_by(stride.max(1) as usize).map(move |u| (u, v)))
                    .map(|(u, v)| map.to_original(PixelCoord::new(u as f64, v as f64), cq.width(), cq.height()))
                    .filter(|p| cq.contains(p))
                    .collect();
                let m = synthesize_at(scene, cq, cs, (i, j), &queries, corruption, rng);
                corrs.extend(m.correspondences.into_iter().map(|c| Correspondence {
                    p_q: map.from_original(c.p_q, cq.width(), cq.height()),
                    p_s: map.from_original(c.p_s, cs.width(), cs.height()),
                    ..c
                }));
            }
        }
        sets.push(AugmentedSet::new(corrs, map));
    }
    sets
}
