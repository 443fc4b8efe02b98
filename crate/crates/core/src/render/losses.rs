use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::geometry::{Camera, PixelCoord};
use crate::linalg::Vec3;
use crate::scalar::Real;
use crate::tape::{Tape, Var};

/// Targets closer than this to their ray origin are skipped by the depth loss.
pub const DEPTH_EPSILON: f64 = 1e-8;
/// Camera-frame depth at or below which a predicted point counts as behind.
pub const BEHIND_CAMERA_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_pixel: f64,
    pub lambda_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_pixel: 0.1, lambda_depth: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), RenderError> {
        for (name, v) in [("lambda_pixel", self.lambda_pixel), ("lambda_depth", self.lambda_depth)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RenderError::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether any correspondence term contributes.
    pub fn uses_correspondences(&self) -> bool {
        self.lambda_pixel > 0.0 || self.lambda_depth > 0.0
    }
}

/// Predicted and triangulated points of one correspondence pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorresPrediction<T> {
    /// Indices into the camera slice given to [`pixel_loss`].
    pub camera_q: usize,
    pub camera_s: usize,
    pub p_q: PixelCoord<T>,
    pub p_s: PixelCoord<T>,
    pub y_q: Vec3<T>,
    pub y_s: Vec3<T>,
    pub x_q: Vec3<T>,
    pub x_s: Vec3<T>,
    pub o_q: Vec3<T>,
    pub o_s: Vec3<T>,
    pub confidence: T,
}

/// Mean over rays of the squared color error.
pub fn color_loss<T: Real>(rendered: &[[T; 3]], ground_truth: &[[T; 3]]) -> T {
    assert_eq!(rendered.len(), ground_truth.len(), "batch shape");
    if rendered.is_empty() {
        return T::zero();
    }
    let s: T = rendered
        .iter()
        .zip(ground_truth)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum::<T>())
        .sum();
    s / T::from_usize(rendered.len()).unwrap()
}

/// Pixel distance from the projection of `y` to `p`; the image diagonal
/// when `y` is not in front of the camera.
pub fn reprojection_error<T: Real>(camera: &Camera<T>, y: &Vec3<T>, p: &PixelCoord<T>) -> T {
    let c = camera.world_to_camera(y);
    if c.z() <= T::lit(BEHIND_CAMERA_Z) {
        return camera.diagonal();
    }
    let k = camera.intrinsics();
    let h = k.mul_vec(&c);
    PixelCoord::new(h.x() / h.z(), h.y() / h.z()).distance(p)
}

/// Mean over pairs of `α (‖π_q(y_s) − p_q‖ + ‖π_s(y_q) − p_s‖)`.
pub fn pixel_loss<T: Real>(predictions: &[CorresPrediction<T>], cameras: &[Camera<T>]) -> T {
    if predictions.is_empty() {
        return T::zero();
    }
    let s: T = predictions
        .iter()
        .map(|p| {
            let eq = reprojection_error(&cameras[p.camera_q], &p.y_s, &p.p_q);
            let es = reprojection_error(&cameras[p.camera_s], &p.y_q, &p.p_s);
            p.confidence * (eq + es)
        })
        .sum();
    s / T::from_usize(predictions.len()).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthLoss<T> {
    pub value: T,
    /// Pairs whose target lies within [`DEPTH_EPSILON`] of a ray origin.
    pub skipped: usize,
}

/// Mean over pairs of `α (|‖y_q−o_q‖/‖x_q−o_q‖ − 1| + |‖y_s−o_s‖/‖x_s−o_s‖ − 1|)`.
pub fn depth_loss<T: Real>(predictions: &[CorresPrediction<T>]) -> DepthLoss<T> {
    let eps = T::lit(DEPTH_EPSILON);
    let mut sum = T::zero();
    let mut used = 0usize;
    let mut skipped = 0usize;
    for p in predictions {
        let nq = (p.x_q - p.o_q).norm();
        let ns = (p.x_s - p.o_s).norm();
        if !(nq > eps && ns > eps) {
            skipped += 1;
            continue;
        }
        let rq = ((p.y_q - p.o_q).norm() / nq - T::one()).abs();
        let rs = ((p.y_s - p.o_s).norm() / ns - T::one()).abs();
        sum += p.confidence * (rq + rs);
        used += 1;
    }
    let value = if used == 0 { T::zero() } else { sum / T::from_usize(used).unwrap() };
    DepthLoss { value, skipped }
}

/// `L_color + λ_pixel L_pixel + λ_depth L_depth`.
pub fn total_loss<T: Real>(color: T, pixel: T, depth: T, weights: &LossWeights) -> T {
    color + T::lit(weights.lambda_pixel) * pixel + T::lit(weights.lambda_depth) * depth
}

/// Homogeneous pixel coordinates of `o + s·d` in a camera, as `a + s·b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionLine<T> {
    pub a: [T; 3],
    pub b: [T; 3],
}

impl<T: Real> ProjectionLine<T> {
    pub fn new(camera: &Camera<f64>, origin: &Vec3<f64>, direction: &Vec3<f64>) -> Self {
        let k = camera.intrinsics();
        let a = k.mul_vec(&camera.world_to_camera(origin));
        let b = k.mul_vec(&camera.rotation().mul_vec(direction));
        Self { a: a.0.map(T::lit), b: b.0.map(T::lit) }
    }
}

/// Per-pair constants for the differentiable correspondence losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTarget<T> {
    /// Support ray projected into the query camera.
    pub support_in_query: ProjectionLine<T>,
    /// Query ray projected into the support camera.
    pub query_in_support: ProjectionLine<T>,
    pub p_q: PixelCoord<T>,
    pub p_s: PixelCoord<T>,
    pub diagonal_q: T,
    pub diagonal_s: T,
    /// `‖x_q − o_q‖` and `‖x_s − o_s‖`.
    pub target_q: T,
    pub target_s: T,
    pub confidence: T,
}

impl<T: Real> PairTarget<T> {
    /// Whether both targets are far enough from their origins for the depth loss.
    pub fn depth_valid(&self) -> bool {
        let eps = T::lit(DEPTH_EPSILON);
        self.target_q > eps && self.target_s > eps
    }
}

/// Sum over rays of the squared color error; `gt` is row-major `rays x 3`.
pub fn color_loss_tape<T: Real>(tape: &mut Tape<T>, rgb: Var, gt: &[T]) -> Var {
    let neg: Vec<T> = gt.iter().map(|v| -*v).collect();
    let d = tape.add_const(rgb, &neg);
    let sq = tape.mul(d, d);
    tape.sum(sq)
}

fn reprojection_tape<T: Real>(
    tape: &mut Tape<T>,
    depth: Var,
    lines: &[ProjectionLine<T>],
    pixels: &[PixelCoord<T>],
    diagonals: &[T],
) -> Var {
    let n = lines.len();
    let coord = |tape: &mut Tape<T>, k: usize| {
        let b: Vec<T> = lines.iter().map(|l| l.b[k]).collect();
        let a: Vec<T> = lines.iter().map(|l| l.a[k]).collect();
        let v = tape.mul_const(depth, b);
        tape.add_const(v, &a)
    };
    let hu = coord(tape, 0);
    let hv = coord(tape, 1);
    let z = coord(tape, 2);
    let behind: Vec<bool> = tape.value(z).iter().map(|&z| z <= T::lit(BEHIND_CAMERA_Z)).collect();
    let z = tape.masked_fill(z, behind.clone(), T::one());
    let u = tape.div(hu, z);
    let v = tape.div(hv, z);
    let pu: Vec<T> = pixels.iter().map(|p| -p.u).collect();
    let pv: Vec<T> = pixels.iter().map(|p| -p.v).collect();
    let eu = tape.add_const(u, &pu);
    let ev = tape.add_const(v, &pv);
    let e = tape.hypot(eu, ev);
    let e = tape.masked_fill(e, behind.clone(), T::zero());
    let penalty: Vec<T> = (0..n).map(|i| if behind[i] { diagonals[i] } else { T::zero() }).collect();
    tape.add_const(e, &penalty)
}

/// Clamps expected depths to the sampled interval `[near, far]`; clamped
/// entries receive no gradient.
pub fn clamp_depth_tape<T: Real>(tape: &mut Tape<T>, depth: Var, near: T, far: T) -> Var {
    let low: Vec<bool> = tape.value(depth).iter().map(|&d| d < near).collect();
    let d = tape.masked_fill(depth, low, near);
    let high: Vec<bool> = tape.value(d).iter().map(|&d| d > far).collect();
    tape.masked_fill(d, high, far)
}

/// Sum over pairs of the confidence-weighted symmetric reprojection error.
/// `depth_q`, `depth_s` are `pairs x 1` expected depths.
pub fn pixel_loss_tape<T: Real>(tape: &mut Tape<T>, depth_q: Var, depth_s: Var, targets: &[PairTarget<T>]) -> Var {
    let lq: Vec<ProjectionLine<T>> = targets.iter().map(|t| t.support_in_query).collect();
    let ls: Vec<ProjectionLine<T>> = targets.iter().map(|t| t.query_in_support).collect();
    let pq: Vec<PixelCoord<T>> = targets.iter().map(|t| t.p_q).collect();
    let ps: Vec<PixelCoord<T>> = targets.iter().map(|t| t.p_s).collect();
    let dq: Vec<T> = targets.iter().map(|t| t.diagonal_q).collect();
    let ds: Vec<T> = targets.iter().map(|t| t.diagonal_s).collect();
    let eq = reprojection_tape(tape, depth_s, &lq, &pq, &dq);
    let es = reprojection_tape(tape, depth_q, &ls, &ps, &ds);
    let e = tape.add(eq, es);
    let e = tape.mul_const(e, targets.iter().map(|t| t.confidence).collect());
    tape.sum(e)
}

/// Sum over depth-valid pairs of the confidence-weighted ratio deviation.
pub fn depth_loss_tape<T: Real>(tape: &mut Tape<T>, depth_q: Var, depth_s: Var, targets: &[PairTarget<T>]) -> Var {
    let side = |tape: &mut Tape<T>, depth: Var, norm: &dyn Fn(&PairTarget<T>) -> T| {
        let inv: Vec<T> = targets
            .iter()
            .map(|t| if t.depth_valid() { T::one() / norm(t) } else { T::zero() })
            .collect();
        let d = tape.abs(depth);
        let r = tape.mul_const(d, inv);
        let r = tape.add_scalar(r, -T::one());
        tape.abs(r)
    };
    let rq = side(tape, depth_q, &|t| t.target_q);
    let rs = side(tape, depth_s, &|t| t.target_s);
    let r = tape.add(rq, rs);
    let w = targets
        .iter()
        .map(|t| if t.depth_valid() { t.confidence } else { T::zero() })
        .collect();
    let r = tape.mul_const(r, w);
    tape.sum(r)
}
