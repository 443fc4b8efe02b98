use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{survival, Correspondence, CorresError};
use crate::geometry::{projected_ray_distance_of, triangulate_pixels, Camera, CameraSet};
use crate::knn::{mean_knn_distances, KnnStrategy};
use crate::linalg::Vec3;

/// Relative slack on the statistical cutoff, so clouds whose mean kNN
/// distances differ only by roundoff lose nothing.
pub const KNN_RELATIVE_SLACK: f64 = 1e-9;

/// How many rounds of statistical removal to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SorMode {
    /// Repeat on the survivors until a round removes nothing.
    #[default]
    FixedPoint,
    /// One round over the input.
    SinglePass,
}

/// Counts through the earlier pipeline stages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub raw: usize,
    pub dropped_out_of_bounds: usize,
    pub duplicates: usize,
    pub merged: usize,
    pub propagated: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub after_projection_filter: usize,
    pub after_knn_filter: usize,
    pub survival_fraction: f64,
    /// Pairs rejected for degenerate, backward or unprojectable geometry.
    pub degenerate: usize,
    pub threshold_px: Option<f64>,
    pub k: Option<usize>,
    pub std_multiplier: Option<f64>,
    /// Mean-kNN cutoff of the last statistical round.
    pub knn_cutoff: Option<f64>,
    pub knn_rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<StageCounts>,
}

impl FilterReport {
    fn finish(mut self) -> Self {
        self.survival_fraction = survival(self.input_count, self.after_knn_filter);
        self
    }
}

pub(crate) fn cameras_of<'a>(
    c: &Correspondence,
    cameras: &'a CameraSet,
) -> Result<(&'a Camera<f64>, &'a Camera<f64>), CorresError> {
    let q = cameras.get(c.image_q).ok_or(CorresError::UnknownImage(c.image_q))?;
    let s = cameras.get(c.image_s).ok_or(CorresError::UnknownImage(c.image_s))?;
    Ok((q, s))
}

fn check_images(correspondences: &[Correspondence], cameras: &CameraSet) -> Result<(), CorresError> {
    correspondences.iter().try_for_each(|c| cameras_of(c, cameras).map(|_| ()))
}

/// `Some(d_proj)` for a pair with forward, non-degenerate geometry.
fn projection_distance(c: &Correspondence, cameras: &CameraSet) -> Option<f64> {
    let (cq, cs) = cameras_of(c, cameras).ok()?;
    let tri = triangulate_pixels(cq, cs, &c.p_q, &c.p_s).ok()?;
    if !tri.is_forward() {
        return None;
    }
    projected_ray_distance_of(cq, cs, &c.p_q, &c.p_s, &tri).ok()
}

/// Keeps pairs whose projected ray distance is at most `threshold_px` and
/// whose triangulation is non-degenerate and in front of both cameras.
pub fn filter_projection(
    correspondences: &[Correspondence],
    cameras: &CameraSet,
    threshold_px: f64,
) -> Result<(Vec<Correspondence>, FilterReport), CorresError> {
    if !(threshold_px.is_finite() && threshold_px > 0.0) {
        return Err(CorresError::InvalidParameter(format!("threshold_px must be finite and positive, got {threshold_px}")));
    }
    check_images(correspondences, cameras)?;
    let dists: Vec<Option<f64>> = correspondences
        .par_iter()
        .map(|c| projection_distance(c, cameras))
        .collect();
    let mut kept = Vec::with_capacity(correspondences.len());
    let mut degenerate = 0;
    for (c, d) in correspondences.iter().zip(&dists) {
        match d {
            None => degenerate += 1,
            Some(d) if *d <= threshold_px => kept.push(*c),
            Some(_) => {}
        }
    }
    let report = FilterReport {
        input_count: correspondences.len(),
        after_projection_filter: kept.len(),
        after_knn_filter: kept.len(),
        degenerate,
        threshold_px: Some(threshold_px),
        ..Default::default()
    }
    .finish();
    Ok((kept, report))
}

/// [`filter_statistical_with`] in fixed-point mode with the automatic kNN
/// strategy.
pub fn filter_statistical(
    correspondences: &[Correspondence],
    cameras: &CameraSet,
    k: usize,
    std_multiplier: f64,
) -> Result<(Vec<Correspondence>, FilterReport), CorresError> {
    filter_statistical_with(correspondences, cameras, k, std_multiplier, SorMode::FixedPoint, KnnStrategy::Auto)
}

/// Statistical outlier removal on triangulated midpoints.
///
/// Each round computes every point's mean distance to its `k` nearest
/// neighbours and removes points above `mean + std_multiplier * std`
/// (population statistics). In [`SorMode::FixedPoint`] rounds repeat on the
/// survivors until one removes nothing, so a second call removes nothing.
/// Pairs that cannot be
/// triangulated are removed and counted as degenerate.
pub fn filter_statistical_with(
    correspondences: &[Correspondence],
    cameras: &CameraSet,
    k: usize,
    std_multiplier: f64,
    mode: SorMode,
    strategy: KnnStrategy,
) -> Result<(Vec<Correspondence>, FilterReport), CorresError> {
    if k == 0 {
        return Err(CorresError::InvalidParameter("k must be at least 1".into()));
    }
    if !(std_multiplier.is_finite() && std_multiplier > 0.0) {
        return Err(CorresError::InvalidParameter(format!("std_multiplier must be finite and positive, got {std_multiplier}")));
    }
    if correspondences.len() <= k {
        return Err(CorresError::TooFewPoints { k, count: correspondences.len() });
    }
    check_images(correspondences, cameras)?;

    let midpoints: Vec<Option<Vec3<f64>>> = correspondences
        .par_iter()
        .map(|c| {
            let (cq, cs) = cameras_of(c, cameras).ok()?;
            triangulate_pixels(cq, cs, &c.p_q, &c.p_s).ok().map(|t| t.midpoint)
        })
        .collect();
    let mut alive: Vec<usize> = (0..correspondences.len()).filter(|&i| midpoints[i].is_some()).collect();
    let degenerate = correspondences.len() - alive.len();

    let mut cutoff = None;
    let mut rounds = 0;
    while alive.len() > k {
        rounds += 1;
        let pts: Vec<Vec3<f64>> = alive.iter().map(|&i| midpoints[i].unwrap()).collect();
        let means = mean_knn_distances(&pts, k, strategy);
        let n = means.len() as f64;
        let mu = means.iter().sum::<f64>() / n;
        let var = means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / n;
        let thr = (mu + std_multiplier * var.sqrt()) * (1.0 + KNN_RELATIVE_SLACK);
        cutoff = Some(thr);
        let before = alive.len();
        alive = alive
            .iter()
            .zip(&means)
            .filter(|(_, &m)| m <= thr)
            .map(|(&i, _)| i)
            .collect();
        if alive.len() == before || mode == SorMode::SinglePass {
            break;
        }
    }

    let kept: Vec<Correspondence> = alive.iter().map(|&i| correspondences[i]).collect();
    let report = FilterReport {
        input_count: correspondences.len(),
        after_projection_filter: correspondences.len(),
        after_knn_filter: kept.len(),
        degenerate,
        k: Some(k),
        std_multiplier: Some(std_multiplier),
        knn_cutoff: cutoff,
        knn_rounds: rounds,
        ..Default::default()
    }
    .finish();
    Ok((kept, report))
}
