use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{pixel_to_ray, Camera, CameraSet, GeometryError, PixelCoord};
use crate::image::{DepthMap, Image};
use crate::linalg::Vec3;

/// Hits closer than this along a ray are ignored.
pub const HIT_EPSILON: f64 = 1e-9;

type Color = [f64; 3];

/// Procedural albedo, a function of the world-space hit point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    Constant { color: Color },
    /// 3D checkerboard with cells of side `size`.
    Checker { a: Color, b: Color, size: f64 },
    /// Smooth bands `a + (b − a)(1 + sin(2π x·axis / period)) / 2`.
    Stripes { a: Color, b: Color, axis: Vec3<f64>, period: f64 },
}

impl Texture {
    pub fn albedo(&self, p: &Vec3<f64>) -> Color {
        let mix = |a: &Color, b: &Color, s: f64| [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * s);
        let c = match self {
            Texture::Constant { color } => *color,
            Texture::Checker { a, b, size } => {
                let parity: i64 = p.0.iter().map(|x| (x / size).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Stripes { a, b, axis, period } => {
                let s = 0.5 * (1.0 + (std::f64::consts::TAU * p.dot(axis) / period).sin());
                mix(a, b, s)
            }
        };
        c.map(|x| x.clamp(0.0, 1.0))
    }

    fn validate(&self) -> Result<(), String> {
        let colors: Vec<&Color> = match self {
            Texture::Constant { color } => vec![color],
            Texture::Checker { a, b, size } => {
                if !(size.is_finite() && *size > 0.0) {
                    return Err(format!("checker size {size}"));
                }
                vec![a, b]
            }
            Texture::Stripes { a, b, axis, period } => {
                if !(period.is_finite() && *period != 0.0 && axis.is_finite()) {
                    return Err("stripes need a finite axis and non-zero period".into());
                }
                vec![a, b]
            }
        };
        if colors.iter().flat_map(|c| c.iter()).all(|x| (0.0..=1.0).contains(x)) {
            Ok(())
        } else {
            Err("colors must lie in [0, 1]".into())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere { center: Vec3<f64>, radius: f64, texture: Texture },
    /// Infinite plane through `point`.
    Plane { point: Vec3<f64>, normal: Vec3<f64>, texture: Texture },
    /// Axis-aligned box.
    Box { min: Vec3<f64>, max: Vec3<f64>, texture: Texture },
}

impl Primitive {
    /// Nearest hit distance beyond [`HIT_EPSILON`] for a unit direction.
    pub fn intersect(&self, o: &Vec3<f64>, d: &Vec3<f64>) -> Option<f64> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = *o - *center;
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > HIT_EPSILON)
            }
            Primitive::Plane { point, normal, .. } => {
                let den = normal.dot(d);
                if den == 0.0 {
                    return None;
                }
                let t = (*point - *o).dot(normal) / den;
                (t > HIT_EPSILON).then_some(t)
            }
            Primitive::Box { min, max, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - o[k]) / d[k];
                    let b = (max[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    None
                } else if t0 > HIT_EPSILON {
                    Some(t0)
                } else if t1 > HIT_EPSILON {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    pub fn texture(&self) -> &Texture {
        match self {
            Primitive::Sphere { texture, .. } | Primitive::Plane { texture, .. } | Primitive::Box { texture, .. } => {
                texture
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Primitive::Sphere { center, radius, .. } if !(center.is_finite() && radius.is_finite() && *radius > 0.0) => {
                Err("sphere needs a finite center and positive radius".into())
            }
            Primitive::Plane { point, normal, .. } if !(point.is_finite() && normal.is_finite() && normal.norm() > 0.0) => {
                Err("plane needs a finite point and non-zero normal".into())
            }
            Primitive::Box { min, max, .. } if !(0..3).all(|k| min[k].is_finite() && max[k].is_finite() && min[k] < max[k]) => {
                Err("box needs finite bounds with min < max".into())
            }
            p => p.texture().validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3<f64>,
    pub albedo: Color,
    pub primitive: usize,
}

/// A set of textured primitives in front of a background color, with the
/// depth bounds used for rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub background: Color,
    pub near: f64,
    pub far: f64,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.near >= 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(format!("invalid bounds near {} far {}", self.near, self.far));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err("background must lie in [0, 1]".into());
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate().map_err(|e| format!("primitive {i}: {e}"))?;
        }
        Ok(())
    }

    /// Nearest positive hit along a unit-direction ray.
    pub fn intersect(&self, o: &Vec3<f64>, d: &Vec3<f64>) -> Option<Hit> {
        let (i, t) = self
            .primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(o, d).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let point = *o + *d * t;
        Some(Hit { t, point, albedo: self.primitives[i].texture().albedo(&point), primitive: i })
    }

    /// Whether `p` is the first surface seen from `from`.
    pub fn visible_from(&self, from: &Vec3<f64>, p: &Vec3<f64>) -> bool {
        let delta = *p - *from;
        let dist = delta.norm();
        let Some(d) = delta.normalized() else { return false };
        match self.intersect(from, &d) {
            Some(hit) => (hit.t - dist).abs() <= 1e-7 * dist.max(1.0),
            None => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let scene: Self = serde_json::from_str(s).map_err(|e| e.to_string())?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Albedo and hit distance per pixel center; background pixels get the
/// background color and infinite depth.
pub fn render_ground_truth(scene: &AnalyticScene, camera: &Camera<f64>) -> Result<(Image, DepthMap), GeometryError> {
    let (w, h) = (camera.width(), camera.height());
    let rows: Result<Vec<Vec<(Color, f64)>>, GeometryError> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let ray = pixel_to_ray(camera, &PixelCoord::new(u as f64, v as f64), 0.0, f64::MAX)?;
                    Ok(match scene.intersect(&ray.origin(), &ray.direction()) {
                        Some(hit) => (hit.albedo, hit.t),
                        None => (scene.background, f64::INFINITY),
                    })
                })
                .collect()
        })
        .collect();
    let flat: Vec<(Color, f64)> = rows?.into_iter().flatten().collect();
    Ok((
        Image { width: w, height: h, pixels: flat.iter().map(|p| p.0).collect() },
        DepthMap { width: w, height: h, values: flat.iter().map(|p| p.1).collect() },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Textured backdrop with a sphere in front.
    PlaneSphere,
    /// Three boxes at different depths.
    Boxes,
    /// Concave box cavity with thin posts.
    Horns,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::PlaneSphere, SceneKind::Boxes, SceneKind::Horns];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::PlaneSphere => "plane_sphere",
            SceneKind::Boxes => "boxes",
            SceneKind::Horns => "horns",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
    Vec3::new(x, y, z)
}

fn backdrop(z: f64) -> Primitive {
    Primitive::Plane {
        point: v(0.0, 0.0, z),
        normal: v(0.0, 0.0, -1.0),
        texture: Texture::Stripes { a: [0.15, 0.2, 0.45], b: [0.75, 0.8, 0.5], axis: v(1.0, 0.6, 0.0), period: 2.5 },
    }
}

/// The shipped test scenes, viewed by [`camera_rig`].
pub fn canonical_scene(kind: SceneKind) -> AnalyticScene {
    let primitives = match kind {
        SceneKind::PlaneSphere => vec![
            backdrop(1.5),
            Primitive::Sphere {
                center: v(0.0, 0.0, 0.0),
                radius: 0.8,
                texture: Texture::Stripes { a: [0.9, 0.4, 0.2], b: [0.3, 0.8, 0.3], axis: v(0.0, 1.0, 0.3), period: 1.2 },
            },
        ],
        SceneKind::Boxes => vec![
            backdrop(1.5),
            Primitive::Box {
                min: v(-1.2, -0.9, -0.2),
                max: v(-0.3, 0.1, 0.7),
                texture: Texture::Constant { color: [0.85, 0.3, 0.25] },
            },
            Primitive::Box {
                min: v(0.2, -0.6, -0.8),
                max: v(0.9, 0.2, -0.1),
                texture: Texture::Stripes { a: [0.2, 0.6, 0.9], b: [0.9, 0.9, 0.6], axis: v(1.0, 0.0, 0.0), period: 0.8 },
            },
            Primitive::Box {
                min: v(-0.4, 0.3, -0.5),
                max: v(0.5, 0.9, 0.4),
                texture: Texture::Constant { color: [0.35, 0.75, 0.35] },
            },
        ],
        SceneKind::Horns => {
            let wall = Texture::Stripes { a: [0.75, 0.55, 0.35], b: [0.45, 0.3, 0.2], axis: v(0.0, 1.0, 0.0), period: 1.0 };
            let horn = Texture::Constant { color: [0.95, 0.9, 0.8] };
            vec![
                backdrop(1.5),
                // cavity: floor, two side walls, back panel
                Primitive::Box { min: v(-1.1, 0.6, -0.6), max: v(1.1, 0.8, 1.0), texture: wall.clone() },
                Primitive::Box { min: v(-1.1, -0.8, -0.6), max: v(-0.9, 0.6, 1.0), texture: wall.clone() },
                Primitive::Box { min: v(0.9, -0.8, -0.6), max: v(1.1, 0.6, 1.0), texture: wall.clone() },
                Primitive::Box { min: v(-0.9, -0.8, 0.8), max: v(0.9, 0.6, 1.0), texture: wall },
                Primitive::Box { min: v(-0.45, -0.7, -0.1), max: v(-0.3, 0.6, 0.05), texture: horn.clone() },
                Primitive::Box { min: v(0.25, -0.4, 0.3), max: v(0.4, 0.6, 0.45), texture: horn },
            ]
        }
    };
    AnalyticScene { name: kind.name().into(), primitives, background: [0.0, 0.0, 0.0], near: 2.0, far: 8.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub width: u32,
    pub height: u32,
    /// Focal length in pixels per unit image width.
    pub focal_ratio: f64,
    pub train_views: usize,
    pub test_views: usize,
    /// Camera distance from the scene origin.
    pub distance: f64,
    /// Radius of the circle the training cameras sit on.
    pub baseline: f64,
    /// Radius of the test-camera circle as a multiple of `baseline`.
    pub test_radius: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, focal_ratio: 1.3, train_views: 3, test_views: 8, distance: 4.0, baseline: 0.7, test_radius: 0.5 }
    }
}

/// Forward-facing cameras looking at the origin from `−z`: training views
/// evenly spaced on a circle of radius `baseline`, test views on a circle
/// of radius `test_radius · baseline`, offset in angle.
pub fn camera_rig(config: &RigConfig) -> Result<CameraSet, GeometryError> {
    let focal = config.focal_ratio * config.width as f64;
    let mut set = CameraSet::new();
    let mut add = |name: String, split: &str, radius: f64, angle: f64| -> Result<(), GeometryError> {
        let center = v(radius * angle.cos(), radius * angle.sin(), -config.distance);
        let cam = Camera::look_at(center, Vec3::zero(), v(0.0, 1.0, 0.0), focal, config.width, config.height)?;
        set.push(name, Some(split.to_string()), cam)
            .map_err(|e| GeometryError::InvalidCamera(e.to_string()))?;
        Ok(())
    };
    let tau = std::f64::consts::TAU;
    for i in 0..config.train_views {
        let a = tau * i as f64 / config.train_views.max(1) as f64 + 0.5 * std::f64::consts::PI;
        add(format!("train_{i}"), "train", config.baseline, a)?;
    }
    for i in 0..config.test_views {
        let a = tau * (i as f64 + 0.5) / config.test_views.max(1) as f64;
        add(format!("test_{i}"), "test", config.test_radius * config.baseline, a)?;
    }
    Ok(set)
}
