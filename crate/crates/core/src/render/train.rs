use std::collections::HashMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{clamp_depth_tape, color_loss_tape, depth_loss_tape, pixel_loss_tape, PairTarget, ProjectionLine};
use super::volume::composite_tape;
use super::{bin_centers, composite, deltas, LossWeights, RenderError};
use crate::corres::Correspondence;
use crate::field::{encode_into, encoded_len, FieldConfig, FieldParams};
use crate::geometry::{correspondence_ray, pixel_to_ray, triangulate_pixels, Camera, PixelCoord};
use crate::image::{DepthMap, Image};
use crate::linalg::Vec3;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Real;
use crate::synth::metrics::{depth_mae, psnr};
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Rays drawn per iteration for the color loss.
    pub batch_rays: usize,
    /// Cap on correspondence pairs per iteration.
    pub max_pairs: usize,
    /// Samples per ray.
    pub samples: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`; the rate decays
    /// exponentially in between.
    pub lr_decay: f64,
    pub lambda_pixel: f64,
    /// Unit of the reprojection error that `lambda_pixel` weights.
    pub pixel_units: PixelUnits,
    pub lambda_depth: f64,
    pub seed: u64,
    /// Rays per tape; fixes the gradient summation order.
    pub chunk_rays: usize,
    /// Metrics cadence in iterations.
    pub eval_every: u64,
    pub field: FieldConfig,
}

/// `Pixels` weights raw pixel distances. `Focal` divides them by the mean
/// focal length of the training views, i.e. distances on the unit image plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelUnits {
    Pixels,
    #[default]
    Focal,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 15_000,
            batch_rays: 1024,
            max_pairs: 512,
            samples: 64,
            lr: 5e-4,
            lr_decay: 0.1,
            lambda_pixel: 0.1,
            pixel_units: PixelUnits::Focal,
            lambda_depth: 0.1,
            seed: 0,
            chunk_rays: 128,
            eval_every: 1000,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_pixel: self.lambda_pixel, lambda_depth: self.lambda_depth }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        self.weights().validate()?;
        self.field.validate()?;
        let bad = |m: &str| Err(RenderError::InvalidConfig(m.into()));
        if self.samples < 2 {
            return bad("samples must be at least 2");
        }
        if self.batch_rays == 0 {
            return bad("batch_rays must be positive");
        }
        if self.chunk_rays < 2 {
            return bad("chunk_rays must be at least 2");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be finite and positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera<f64>,
    pub image: Image,
}

#[derive(Clone, Debug)]
pub struct EvalView {
    pub name: String,
    pub camera: Camera<f64>,
    pub image: Image,
    pub depth: DepthMap,
}

/// Training inputs; correspondence image ids index into `views`.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub views: Vec<TrainView>,
    pub eval: Vec<EvalView>,
    pub correspondences: Vec<Correspondence>,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    #[serde(rename = "L_color")]
    pub l_color: f64,
    #[serde(rename = "L_pixel")]
    pub l_pixel: f64,
    #[serde(rename = "L_depth")]
    pub l_depth: f64,
    pub total: f64,
    pub psnr: f64,
    pub depth_mae: f64,
}

pub struct TrainOutcome<T> {
    pub params: FieldParams<T>,
    pub adam: AdamState<T>,
    pub trace: Vec<MetricsRow>,
    /// Correspondences dropped for degenerate geometry.
    pub skipped_correspondences: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    pub depth: DepthMap,
}

#[derive(Clone, Copy)]
struct RayT<T> {
    origin: Vec3<T>,
    dir: Vec3<T>,
}

impl<T: Real> RayT<T> {
    fn from_f64(origin: Vec3<f64>, dir: Vec3<f64>) -> Self {
        Self { origin: origin.cast(), dir: dir.cast() }
    }
}

struct PairData<T> {
    ray_q: RayT<T>,
    ray_s: RayT<T>,
    target: PairTarget<T>,
}

/// Encodes samples `t` (row-major `rays x m`) along `rays`.
fn encode_rays<T: Real>(rays: &[RayT<T>], t: &[T], m: usize, cfg: &FieldConfig) -> (Vec<T>, Vec<T>) {
    let mut ex = Vec::with_capacity(rays.len() * m * encoded_len(cfg.freq_position));
    let mut ed = Vec::with_capacity(rays.len() * m * encoded_len(cfg.freq_direction));
    let mut one = Vec::new();
    for (r, ray) in rays.iter().enumerate() {
        one.clear();
        encode_into(&ray.dir, cfg.freq_direction, &mut one);
        for &ti in &t[r * m..(r + 1) * m] {
            encode_into(&(ray.origin + ray.dir * ti), cfg.freq_position, &mut ex);
            ed.extend_from_slice(&one);
        }
    }
    (ex, ed)
}

/// Stratified positions for `n` rays, drawn in ray order.
fn draw_samples<T: Real>(rng: &mut ChaCha8Rng, n: usize, m: usize, near: T, far: T) -> (Vec<T>, Vec<T>) {
    let width = (far - near) / T::from_usize(m).unwrap();
    let mut t = Vec::with_capacity(n * m);
    for _ in 0..n {
        for i in 0..m {
            let u = T::lit(rng.random::<f64>());
            t.push(near + (T::from_usize(i).unwrap() + u) * width);
        }
    }
    let delta = t.chunks_exact(m).flat_map(|row| deltas(row, far)).collect();
    (t, delta)
}

struct ChunkResult<T> {
    grad: Vec<T>,
    color: f64,
    pixel: f64,
    depth: f64,
}

/// Optimizes a field on `data`. Deterministic for a given config, at any
/// rayon thread count.
pub fn train<T: Real>(data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome<T>, RenderError> {
    train_with_observer(data, config, |_| {})
}

/// [`train`] calling `observer` with every metrics row as it is produced.
pub fn train_with_observer<T: Real>(
    data: &TrainData,
    config: &TrainConfig,
    mut observer: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome<T>, RenderError> {
    config.validate()?;
    validate_data(data)?;
    let m = config.samples;
    let (near, far) = (T::lit(data.near), T::lit(data.far));

    // every training pixel
    let mut pixel_rays: Vec<RayT<T>> = Vec::new();
    let mut pixel_colors: Vec<[T; 3]> = Vec::new();
    let mut view_offset = Vec::with_capacity(data.views.len());
    for view in &data.views {
        view_offset.push(pixel_rays.len());
        let cam = &view.camera;
        for v in 0..cam.height() {
            for u in 0..cam.width() {
                let ray = pixel_to_ray(cam, &PixelCoord::new(u as f64, v as f64), data.near, data.far)?;
                pixel_rays.push(RayT::from_f64(ray.origin(), ray.direction()));
                pixel_colors.push(view.image.get(u, v).map(T::lit));
            }
        }
    }

    let weights = config.weights();
    let use_pairs = weights.uses_correspondences() && !data.correspondences.is_empty();
    let mut pairs: Vec<PairData<T>> = Vec::new();
    let mut pair_lookup: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut skipped = 0;
    if use_pairs {
        for c in &data.correspondences {
            match pair_data(c, data) {
                Some(p) => {
                    let id = pairs.len();
                    pairs.push(p);
                    for (img, px) in [(c.image_q, c.p_q), (c.image_s, c.p_s)] {
                        let cam = &data.views[img].camera;
                        let u = (px.u.round().max(0.0) as usize).min(cam.width() as usize - 1);
                        let v = (px.v.round().max(0.0) as usize).min(cam.height() as usize - 1);
                        let key = view_offset[img] + v * cam.width() as usize + u;
                        pair_lookup.entry(key).or_default().push(id);
                    }
                }
                None => skipped += 1,
            }
        }
    }

    let pixel_unit = match config.pixel_units {
        PixelUnits::Pixels => 1.0,
        PixelUnits::Focal => {
            let focal = |c: &Camera<f64>| (c.intrinsics().0[0][0] * c.intrinsics().0[1][1]).sqrt();
            data.views.iter().map(|v| focal(&v.camera)).sum::<f64>() / data.views.len() as f64
        }
    };

    let mut field = FieldParams::<T>::init(config.field.clone(), config.seed)?;
    let mut flat = field.flat().to_vec();
    let mut adam = AdamState::new(flat.len());
    let adam_cfg = AdamConfig { lr: config.lr, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_7A1E);
    let mut trace = Vec::new();
    let pair_chunk = (config.chunk_rays / 2).max(1);

    for it in 0..config.iterations {
        let batch: Vec<usize> = (0..config.batch_rays).map(|_| rng.random_range(0..pixel_rays.len())).collect();
        let mut chosen: Vec<usize> = Vec::new();
        if use_pairs {
            let candidates: Vec<usize> = batch
                .iter()
                .filter_map(|k| pair_lookup.get(k))
                .flatten()
                .copied()
                .collect();
            chosen = if candidates.len() > config.max_pairs {
                sample_indices(&mut rng, candidates.len(), config.max_pairs)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect()
            } else {
                candidates
            };
        }
        let (bt, bd) = draw_samples::<T>(&mut rng, batch.len(), m, near, far);
        let (pt, pd) = draw_samples::<T>(&mut rng, 2 * chosen.len(), m, near, far);

        let n_batch = batch.len();
        let n_pairs = chosen.len();
        let n_valid = chosen.iter().filter(|&&i| pairs[i].target.depth_valid()).count();
        let color_scale = T::one() / T::from_usize(n_batch).unwrap();
        let pixel_scale = if n_pairs > 0 {
            T::lit(weights.lambda_pixel / pixel_unit) / T::from_usize(n_pairs).unwrap()
        } else {
            T::zero()
        };
        let depth_scale = if n_valid > 0 {
            T::lit(weights.lambda_depth) / T::from_usize(n_valid).unwrap()
        } else {
            T::zero()
        };

        enum Job {
            Color(usize, usize),
            Pairs(usize, usize),
        }
        let mut jobs = Vec::new();
        let mut s = 0;
        while s < n_batch {
            let e = (s + config.chunk_rays).min(n_batch);
            jobs.push(Job::Color(s, e));
            s = e;
        }
        s = 0;
        while s < n_pairs {
            let e = (s + pair_chunk).min(n_pairs);
            jobs.push(Job::Pairs(s, e));
            s = e;
        }

        let run = |job: &Job| -> ChunkResult<T> {
            let mut tape = Tape::new(flat.len());
            match *job {
                Job::Color(s, e) => {
                    let rays: Vec<RayT<T>> = batch[s..e].iter().map(|&k| pixel_rays[k]).collect();
                    let t = &bt[s * m..e * m];
                    let d = bd[s * m..e * m].to_vec();
                    let n = e - s;
                    let (ex, ed) = encode_rays(&rays, t, m, &config.field);
                    let vx = tape.constant(n * m, ex.len() / (n * m), ex);
                    let vd = tape.constant(n * m, ed.len() / (n * m), ed);
                    let (sigma, rgb) = field.forward_tape(&mut tape, &flat, vx, vd);
                    let out = composite_tape(&mut tape, n, m, sigma, rgb, t.to_vec(), d);
                    let gt: Vec<T> = batch[s..e].iter().flat_map(|&k| pixel_colors[k]).collect();
                    let l = color_loss_tape(&mut tape, out.rgb, &gt);
                    let color = tape.scalar(l).to_f64_lossy();
                    let root = tape.scale(l, color_scale);
                    let grad = tape.backward(root).expect("scalar root");
                    ChunkResult { grad, color, pixel: 0.0, depth: 0.0 }
                }
                Job::Pairs(s, e) => {
                    let n = e - s;
                    let ids = &chosen[s..e];
                    let rays: Vec<RayT<T>> = ids
                        .iter()
                        .map(|&i| pairs[i].ray_q)
                        .chain(ids.iter().map(|&i| pairs[i].ray_s))
                        .collect();
                    // q rays use sample rows 2s..2s+n of the pair draws, s rays the next n
                    let mut t = Vec::with_capacity(2 * n * m);
                    let mut d = Vec::with_capacity(2 * n * m);
                    for side in 0..2 {
                        for j in s..e {
                            let row = 2 * j + side;
                            t.extend_from_slice(&pt[row * m..(row + 1) * m]);
                            d.extend_from_slice(&pd[row * m..(row + 1) * m]);
                        }
                    }
                    let (ex, ed) = encode_rays(&rays, &t, m, &config.field);
                    let vx = tape.constant(2 * n * m, ex.len() / (2 * n * m), ex);
                    let vd = tape.constant(2 * n * m, ed.len() / (2 * n * m), ed);
                    let (sigma, rgb) = field.forward_tape(&mut tape, &flat, vx, vd);
                    let out = composite_tape(&mut tape, 2 * n, m, sigma, rgb, t, d);
                    let dq = tape.rows(out.depth, 0, n);
                    let ds = tape.rows(out.depth, n, n);
                    let targets: Vec<PairTarget<T>> = ids.iter().map(|&i| pairs[i].target).collect();
                    // reprojected points stay on the sampled segment of each ray
                    let cq = clamp_depth_tape(&mut tape, dq, near, far);
                    let cs = clamp_depth_tape(&mut tape, ds, near, far);
                    let lp = pixel_loss_tape(&mut tape, cq, cs, &targets);
                    let ld = depth_loss_tape(&mut tape, dq, ds, &targets);
                    let (pixel, depth) = (tape.scalar(lp).to_f64_lossy(), tape.scalar(ld).to_f64_lossy());
                    let a = tape.scale(lp, pixel_scale);
                    let b = tape.scale(ld, depth_scale);
                    let root = tape.add(a, b);
                    let grad = tape.backward(root).expect("scalar root");
                    ChunkResult { grad, color: 0.0, pixel, depth }
                }
            }
        };
        let results: Vec<ChunkResult<T>> = jobs.par_iter().map(run).collect();

        let mut grad = vec![T::zero(); flat.len()];
        let (mut color, mut pixel, mut depth) = (0.0, 0.0, 0.0);
        for r in &results {
            for (g, x) in grad.iter_mut().zip(&r.grad) {
                *g += *x;
            }
            color += r.color;
            pixel += r.pixel;
            depth += r.depth;
        }
        let l_color = color / n_batch as f64;
        let l_pixel = if n_pairs > 0 { pixel / n_pairs as f64 } else { 0.0 };
        let l_depth = if n_valid > 0 { depth / n_valid as f64 } else { 0.0 };
        if !(l_color.is_finite() && l_pixel.is_finite() && l_depth.is_finite()) {
            return Err(RenderError::NonFiniteLoss { iteration: it, color: l_color, pixel: l_pixel, depth: l_depth });
        }
        let progress = it as f64 / config.iterations as f64;
        let step_cfg = AdamConfig { lr: config.lr * config.lr_decay.powf(progress), ..adam_cfg };
        adam_step(&mut flat, &grad, &mut adam, &step_cfg)?;

        let done = it + 1;
        if done % config.eval_every == 0 || done == config.iterations {
            field.set_flat(flat.clone())?;
            let (p, mae) = evaluate_views(&field, data, m);
            let row = MetricsRow {
                iteration: done,
                l_color,
                l_pixel,
                l_depth,
                total: l_color + weights.lambda_pixel / pixel_unit * l_pixel + weights.lambda_depth * l_depth,
                psnr: p,
                depth_mae: mae,
            };
            observer(&row);
            trace.push(row);
        }
    }
    field.set_flat(flat)?;
    Ok(TrainOutcome { params: field, adam, trace, skipped_correspondences: skipped })
}

fn validate_data(data: &TrainData) -> Result<(), RenderError> {
    let bad = |m: String| Err(RenderError::InvalidData(m));
    if data.views.is_empty() {
        return bad("at least one training view is required".into());
    }
    if !(data.near >= 0.0 && data.near < data.far && data.far.is_finite()) {
        return bad(format!("invalid bounds near {} far {}", data.near, data.far));
    }
    let sizes = data
        .views
        .iter()
        .map(|v| (&v.camera, (v.image.width, v.image.height), v.image.pixels.len()))
        .chain(data.eval.iter().map(|v| (&v.camera, (v.image.width, v.image.height), v.depth.values.len())));
    for (i, (cam, size, len)) in sizes.enumerate() {
        if (cam.width(), cam.height()) != size || len != (size.0 * size.1) as usize {
            return bad(format!("view {i}: image size does not match camera"));
        }
    }
    for c in &data.correspondences {
        if c.image_q >= data.views.len() || c.image_s >= data.views.len() {
            return bad(format!("correspondence references view {} of {}", c.image_q.max(c.image_s), data.views.len()));
        }
    }
    Ok(())
}

fn pair_data<T: Real>(c: &Correspondence, data: &TrainData) -> Option<PairData<T>> {
    let (cq, cs) = (&data.views[c.image_q].camera, &data.views[c.image_s].camera);
    let tri = triangulate_pixels(cq, cs, &c.p_q, &c.p_s).ok()?;
    if !tri.is_forward() {
        return None;
    }
    let rq = correspondence_ray(cq, &c.p_q).ok()?;
    let rs = correspondence_ray(cs, &c.p_s).ok()?;
    let target = PairTarget {
        support_in_query: ProjectionLine::new(cq, &rs.origin(), &rs.direction()),
        query_in_support: ProjectionLine::new(cs, &rq.origin(), &rq.direction()),
        p_q: c.p_q.cast(),
        p_s: c.p_s.cast(),
        diagonal_q: T::lit(cq.diagonal()),
        diagonal_s: T::lit(cs.diagonal()),
        target_q: T::lit((tri.x_q - rq.origin()).norm()),
        target_s: T::lit((tri.x_s - rs.origin()).norm()),
        confidence: T::lit(c.confidence),
    };
    Some(PairData {
        ray_q: RayT::from_f64(rq.origin(), rq.direction()),
        ray_s: RayT::from_f64(rs.origin(), rs.direction()),
        target,
    })
}

fn evaluate_views<T: Real>(field: &FieldParams<T>, data: &TrainData, m: usize) -> (f64, f64) {
    if data.eval.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut ps = 0.0;
    let mut mae = 0.0;
    for v in &data.eval {
        let r = render_image(field, &v.camera, data.near, data.far, m);
        ps += psnr(&r.image, &v.image);
        mae += depth_mae(&r.depth, &v.depth, data.far);
    }
    let n = data.eval.len() as f64;
    (ps / n, mae / n)
}

/// Renders every pixel center with bin-center samples.
pub fn render_image<T: Real>(field: &FieldParams<T>, camera: &Camera<f64>, near: f64, far: f64, m: usize) -> RenderedView {
    let (w, h) = (camera.width(), camera.height());
    let t: Vec<T> = bin_centers(T::lit(near), T::lit(far), m).expect("at least two samples");
    let delta = deltas(&t, T::lit(far));
    let rows: Vec<Vec<([f64; 3], f64)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let rays: Vec<RayT<T>> = (0..w)
                .map(|u| {
                    let r = pixel_to_ray(camera, &PixelCoord::new(u as f64, v as f64), near, far).expect("pixel in bounds");
                    RayT::from_f64(r.origin(), r.direction())
                })
                .collect();
            let tt: Vec<T> = (0..w).flat_map(|_| t.iter().copied()).collect();
            let (ex, ed) = encode_rays(&rays, &tt, m, field.config());
            let (sigma, colors) = field.forward_encoded(w as usize * m, &ex, &ed);
            (0..w as usize)
                .map(|i| {
                    let r = composite(
                        t.clone(),
                        delta.clone(),
                        sigma[i * m..(i + 1) * m].to_vec(),
                        colors[i * m..(i + 1) * m].to_vec(),
                    );
                    (r.color.map(|c| c.to_f64_lossy()), r.depth.to_f64_lossy())
                })
                .collect()
        })
        .collect();
    let flat: Vec<([f64; 3], f64)> = rows.into_iter().flatten().collect();
    RenderedView {
        image: Image { width: w, height: h, pixels: flat.iter().map(|p| p.0).collect() },
        depth: DepthMap { width: w, height: h, values: flat.iter().map(|p| p.1).collect() },
    }
}
