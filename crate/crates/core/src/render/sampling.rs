use rand::Rng;

use super::RenderError;
use crate::geometry::Ray;
use crate::scalar::Real;

/// One sample per equal-width bin of `[t_near, t_far]`, placed at fraction
/// `jitter(i) ∈ [0, 1)` of bin `i`.
pub fn sample_with<T: Real>(
    t_near: T,
    t_far: T,
    m: usize,
    mut jitter: impl FnMut(usize) -> T,
) -> Result<Vec<T>, RenderError> {
    if m < 2 {
        return Err(RenderError::TooFewSamples(m));
    }
    let width = (t_far - t_near) / T::from_usize(m).unwrap();
    Ok((0..m)
        .map(|i| {
            let u = jitter(i);
            debug_assert!(u >= T::zero() && u < T::one());
            t_near + (T::from_usize(i).unwrap() + u) * width
        })
        .collect())
}

/// Stratified samples along `ray` with uniform jitter drawn from `rng`.
pub fn sample_stratified<T: Real, R: Rng + ?Sized>(ray: &Ray<T>, m: usize, rng: &mut R) -> Result<Vec<T>, RenderError> {
    sample_with(ray.t_near(), ray.t_far(), m, |_| T::lit(rng.random::<f64>()))
}

/// Bin centers of `[t_near, t_far]`: the deterministic midpoint layout.
pub fn bin_centers<T: Real>(t_near: T, t_far: T, m: usize) -> Result<Vec<T>, RenderError> {
    sample_with(t_near, t_far, m, |_| T::lit(0.5))
}

/// `δ_i = t_{i+1} − t_i`, with the last interval closed at `t_far`.
pub fn deltas<T: Real>(t: &[T], t_far: T) -> Vec<T> {
    let mut d: Vec<T> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&last) = t.last() {
        d.push(t_far - last);
    }
    d
}
