use serde::{Deserialize, Serialize};

use super::{
    build_graph, filter_projection, filter_statistical_with, merge_augmented, SorMode, propagate, AugmentedSet,
    Correspondence, CorresError, FilterReport,
};
use super::filter::StageCounts;
use crate::geometry::CameraSet;
use crate::knn::KnnStrategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub threshold_px: f64,
    pub k: usize,
    pub std_multiplier: f64,
    pub d_max: usize,
    /// Rounds of statistical removal. Repeating to a fixed point is
    /// idempotent but can strip most of a cloud with long-tailed kNN
    /// distances.
    pub sor_mode: SorMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { threshold_px: 2.0, k: 16, std_multiplier: 2.0, d_max: 2, sor_mode: SorMode::SinglePass }
    }
}

/// Merge, propagate, then filter by projected ray distance and kNN statistics.
///
/// `input_count` of the report is the number of correspondences entering the
/// filters; earlier counts are in `stages`. The statistical stage is skipped
/// when at most `k` correspondences reach it.
pub fn preprocess_pipeline(
    sets: &[AugmentedSet],
    cameras: &CameraSet,
    config: &PipelineConfig,
) -> Result<(Vec<Correspondence>, FilterReport), CorresError> {
    if config.d_max == 0 {
        return Err(CorresError::InvalidParameter("d_max must be at least 1".into()));
    }
    let raw: usize = sets.iter().map(|s| s.correspondences.len()).sum();
    let merged = merge_augmented(sets, cameras)?;
    let graph = build_graph(&merged.correspondences);
    let propagated = propagate(&graph, config.d_max);

    let (after_proj, proj) = filter_projection(&propagated, cameras, config.threshold_px)?;
    let (out, knn) = if after_proj.len() > config.k {
        let (out, rep) =
            filter_statistical_with(&after_proj, cameras, config.k, config.std_multiplier, config.sor_mode, KnnStrategy::Auto)?;
        (out, Some(rep))
    } else {
        (after_proj, None)
    };

    let mut report = FilterReport {
        input_count: propagated.len(),
        after_projection_filter: proj.after_projection_filter,
        after_knn_filter: out.len(),
        survival_fraction: super::survival(propagated.len(), out.len()),
        degenerate: proj.degenerate,
        threshold_px: Some(config.threshold_px),
        k: Some(config.k),
        std_multiplier: Some(config.std_multiplier),
        stages: Some(StageCounts {
            raw,
            dropped_out_of_bounds: merged.dropped_out_of_bounds,
            duplicates: merged.duplicates,
            merged: merged.correspondences.len(),
            propagated: propagated.len() - graph.edges().len(),
        }),
        ..Default::default()
    };
    if let Some(knn) = knn {
        report.degenerate += knn.degenerate;
        report.knn_cutoff = knn.knn_cutoff;
        report.knn_rounds = knn.knn_rounds;
    }
    Ok((out, report))
}
