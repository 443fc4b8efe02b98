use rayon::prelude::*;

use super::filter::cameras_of;
use super::{Correspondence, CorresError};
use crate::geometry::triangulate_pixels;
use crate::linalg::Vec3;

/// Midpoints of triangulated correspondences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangulatedCloud {
    pub points: Vec<Vec3<f64>>,
    pub confidences: Vec<f64>,
    /// Index of the generating correspondence for each point.
    pub sources: Vec<usize>,
    /// Correspondences whose rays were near-parallel.
    pub skipped: usize,
}

impl TriangulatedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One midpoint per correspondence, carrying its confidence.
pub fn triangulate_cloud(
    correspondences: &[Correspondence],
    cameras: &crate::geometry::CameraSet,
) -> Result<TriangulatedCloud, CorresError> {
    let mids: Vec<Option<Vec3<f64>>> = correspondences
        .par_iter()
        .map(|c| {
            let (cq, cs) = cameras_of(c, cameras)?;
            Ok(triangulate_pixels(cq, cs, &c.p_q, &c.p_s).ok().map(|t| t.midpoint))
        })
        .collect::<Result<_, CorresError>>()?;
    let mut cloud = TriangulatedCloud::default();
    for (i, (c, m)) in correspondences.iter().zip(mids).enumerate() {
        match m {
            Some(p) => {
                cloud.points.push(p);
                cloud.confidences.push(c.confidence);
                cloud.sources.push(i);
            }
            None => cloud.skipped += 1,
        }
    }
    Ok(cloud)
}
