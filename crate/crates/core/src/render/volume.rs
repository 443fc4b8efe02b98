use super::RenderError;
use crate::field::RadianceField;
use crate::geometry::Ray;
use crate::linalg::Vec3;
use crate::scalar::Real;
use crate::tape::{Tape, Var};

/// Per-sample quantities along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch<T> {
    pub t: Vec<T>,
    pub delta: Vec<T>,
    pub sigma: Vec<T>,
    pub colors: Vec<[T; 3]>,
    pub transmittance: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> RaySampleBatch<T> {
    /// Checks the ordering, transmittance and weight-sum invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("sample positions not strictly increasing".into());
        }
        if self.delta.iter().any(|d| !(*d > T::zero())) {
            return Err("non-positive delta".into());
        }
        if self.transmittance.first().is_some_and(|t| *t != T::one()) {
            return Err("first transmittance is not 1".into());
        }
        if self.transmittance.windows(2).any(|w| w[1] > w[0]) {
            return Err("transmittance increases".into());
        }
        let s: T = self.weights.iter().copied().sum();
        if s > T::one() + T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) {
            return Err(format!("weights sum to {s}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayRender<T> {
    pub color: [T; 3],
    /// `Σ w_i t_i`; with a unit direction this is `‖y − o‖`.
    pub depth: T,
    pub samples: RaySampleBatch<T>,
}

impl<T: Real> RayRender<T> {
    /// Predicted surface point `o + depth · d`.
    pub fn point(&self, ray: &Ray<T>) -> Vec3<T> {
        ray.at(self.depth)
    }
}

/// Alpha compositing of given samples against a black background.
pub fn composite<T: Real>(t: Vec<T>, delta: Vec<T>, sigma: Vec<T>, colors: Vec<[T; 3]>) -> RayRender<T> {
    let m = t.len();
    let mut transmittance = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut optical = T::zero();
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    for i in 0..m {
        let tr = (-optical).exp();
        let sd = sigma[i] * delta[i];
        let alpha = -(-sd).exp_m1();
        let w = tr * alpha;
        transmittance.push(tr);
        weights.push(w);
        for k in 0..3 {
            color[k] += w * colors[i][k];
        }
        depth += w * t[i];
        optical += sd;
    }
    RayRender { color, depth, samples: RaySampleBatch { t, delta, sigma, colors, transmittance, weights } }
}

/// Renders one ray at the given sample positions.
pub fn render_ray<T: Real, F: RadianceField<T> + ?Sized>(
    field: &F,
    ray: &Ray<T>,
    samples: &[T],
) -> Result<RayRender<T>, RenderError> {
    if samples.len() < 2 {
        return Err(RenderError::TooFewSamples(samples.len()));
    }
    let delta = super::deltas(samples, ray.t_far());
    if samples.windows(2).any(|w| !(w[1] > w[0])) || delta.iter().any(|d| !(*d > T::zero())) {
        return Err(RenderError::InvalidSamples);
    }
    let points: Vec<Vec3<T>> = samples.iter().map(|&t| ray.at(t)).collect();
    let (sigma, colors) = field.query(&points, &ray.direction());
    let out = composite(samples.to_vec(), delta, sigma, colors);
    debug_assert!(out.samples.check().is_ok(), "{:?}", out.samples.check());
    Ok(out)
}

/// Tape nodes of a composited batch of `rays` rays with `m` samples each.
pub struct TapeRender {
    /// `rays x 3`
    pub rgb: Var,
    /// `rays x 1`
    pub depth: Var,
    /// `rays x m`
    pub weights: Var,
}

/// Differentiable compositing. `sigma` is `(rays·m) x 1`, `colors` is
/// `(rays·m) x 3`, and `t`, `delta` are row-major `rays x m` constants.
pub fn composite_tape<T: Real>(
    tape: &mut Tape<T>,
    rays: usize,
    m: usize,
    sigma: Var,
    colors: Var,
    t: Vec<T>,
    delta: Vec<T>,
) -> TapeRender {
    let sigma = tape.reshape(sigma, rays, m);
    let sd = tape.mul_const(sigma, delta);
    let cum = tape.cumsum_exclusive_rows(sd);
    let neg = tape.scale(cum, -T::one());
    let trans = tape.exp(neg);
    let nsd = tape.scale(sd, -T::one());
    let att = tape.exp(nsd);
    let natt = tape.scale(att, -T::one());
    let alpha = tape.add_scalar(natt, T::one());
    let weights = tape.mul(trans, alpha);
    let rgb = tape.weighted_sum_rows(weights, colors);
    let tv = tape.constant(rays * m, 1, t);
    let depth = tape.weighted_sum_rows(weights, tv);
    TapeRender { rgb, depth, weights }
}
