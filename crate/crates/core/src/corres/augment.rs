use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Correspondence, CorresError};
use crate::geometry::{CameraSet, PixelCoord};

/// Two correspondences closer than this in both images are duplicates.
pub const DEDUP_RADIUS_PX: f64 = 0.5;

/// Invertible map between a transformed image and the original image.
///
/// Flips mirror pixel centers (`u → width − 1 − u`); scaling by `factor`
/// models a matcher run on a resized image, with pixel centers preserved:
/// `u_orig = (u + 0.5) / factor − 0.5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PixelMap {
    #[default]
    Identity,
    FlipHorizontal,
    FlipVertical,
    Scale { factor: f64 },
}

impl PixelMap {
    /// Transformed-image pixel → original-image pixel.
    pub fn to_original(&self, p: PixelCoord<f64>, width: u32, height: u32) -> PixelCoord<f64> {
        match *self {
            PixelMap::Identity => p,
            PixelMap::FlipHorizontal => PixelCoord::new(width as f64 - 1.0 - p.u, p.v),
            PixelMap::FlipVertical => PixelCoord::new(p.u, height as f64 - 1.0 - p.v),
            PixelMap::Scale { factor } => {
                PixelCoord::new((p.u + 0.5) / factor - 0.5, (p.v + 0.5) / factor - 0.5)
            }
        }
    }

    /// Original-image pixel → transformed-image pixel.
    pub fn from_original(&self, p: PixelCoord<f64>, width: u32, height: u32) -> PixelCoord<f64> {
        match *self {
            PixelMap::Identity | PixelMap::FlipHorizontal | PixelMap::FlipVertical => {
                self.to_original(p, width, height)
            }
            PixelMap::Scale { factor } => {
                PixelCoord::new((p.u + 0.5) * factor - 0.5, (p.v + 0.5) * factor - 0.5)
            }
        }
    }

    /// Size of the transformed image.
    pub fn image_size(&self, width: u32, height: u32) -> (u32, u32) {
        match *self {
            PixelMap::Scale { factor } => (
                ((width as f64 * factor).round() as u32).max(1),
                ((height as f64 * factor).round() as u32).max(1),
            ),
            _ => (width, height),
        }
    }

    pub fn validate(&self) -> Result<(), CorresError> {
        match *self {
            PixelMap::Scale { factor } if !(factor.is_finite() && factor > 0.0) => {
                Err(CorresError::InvalidParameter(format!("scale factor {factor}")))
            }
            _ => Ok(()),
        }
    }
}

/// One matcher output expressed in transformed pixel coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedSet {
    pub correspondences: Vec<Correspondence>,
    pub map: PixelMap,
}

impl AugmentedSet {
    pub fn new(correspondences: Vec<Correspondence>, map: PixelMap) -> Self {
        Self { correspondences, map }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeOutcome {
    pub correspondences: Vec<Correspondence>,
    /// Records whose mapped pixels left the original image.
    pub dropped_out_of_bounds: usize,
    /// Records collapsed into an existing duplicate.
    pub duplicates: usize,
}

type CellKey = (usize, usize, i64, i64);

fn cell_of(c: &Correspondence) -> CellKey {
    (c.image_q, c.image_s, c.p_q.u.floor() as i64, c.p_q.v.floor() as i64)
}

fn is_duplicate(a: &Correspondence, b: &Correspondence) -> bool {
    a.image_q == b.image_q
        && a.image_s == b.image_s
        && a.p_q.distance(&b.p_q) <= DEDUP_RADIUS_PX
        && a.p_s.distance(&b.p_s) <= DEDUP_RADIUS_PX
}

/// Maps every set back to original pixel coordinates, orients each pair with
/// the lower image id as query, and collapses duplicates keeping the most
/// confident representative (earliest wins ties).
pub fn merge_augmented(sets: &[AugmentedSet], cameras: &CameraSet) -> Result<MergeOutcome, CorresError> {
    let mut kept: Vec<Correspondence> = Vec::new();
    let mut grid: HashMap<CellKey, Vec<usize>> = HashMap::new();
    let mut out = MergeOutcome::default();

    for set in sets {
        set.map.validate()?;
        for c in &set.correspondences {
            let cam_q = cameras.get(c.image_q).ok_or(CorresError::UnknownImage(c.image_q))?;
            let cam_s = cameras.get(c.image_s).ok_or(CorresError::UnknownImage(c.image_s))?;
            let mut m = *c;
            m.p_q = set.map.to_original(c.p_q, cam_q.width(), cam_q.height());
            m.p_s = set.map.to_original(c.p_s, cam_s.width(), cam_s.height());
            if !cam_q.contains(&m.p_q) || !cam_s.contains(&m.p_s) {
                out.dropped_out_of_bounds += 1;
                continue;
            }
            let m = m.canonical();
            m.validate()?;

            let key = cell_of(&m);
            let mut hit = None;
            'search: for du in -1..=1 {
                for dv in -1..=1 {
                    if let Some(bucket) = grid.get(&(key.0, key.1, key.2 + du, key.3 + dv)) {
                        if let Some(&i) = bucket.iter().find(|&&i| is_duplicate(&kept[i], &m)) {
                            hit = Some(i);
                            break 'search;
                        }
                    }
                }
            }
            match hit {
                Some(i) => {
                    out.duplicates += 1;
                    if m.confidence > kept[i].confidence {
                        let old = cell_of(&kept[i]);
                        if let Some(bucket) = grid.get_mut(&old) {
                            bucket.retain(|&j| j != i);
                        }
                        kept[i] = m;
                        grid.entry(key).or_default().push(i);
                    }
                }
                None => {
                    grid.entry(key).or_default().push(kept.len());
                    kept.push(m);
                }
            }
        }
    }
    out.correspondences = kept;
    Ok(out)
}
