//! Pinhole cameras, rays, two-ray triangulation and the projected ray distance.
//!
//! Pixel convention: pixel centers sit at integer coordinates, the origin is
//! the top-left pixel, `u` grows rightward and `v` downward. Camera frames
//! follow the same convention with `z` pointing forward.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Tolerance on `|1 - |d_q · d_s||` below which two rays count as parallel.
pub const PARALLEL_TOLERANCE: f64 = 1e-10;

const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point at camera depth {depth} is not in front of the camera")]
    BehindCamera { depth: f64 },
    #[error("pixel ({u}, {v}) outside a {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("rays are near-parallel: |d_q . d_s| = {abs_dot}")]
    Degenerate { abs_dot: f64 },
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Continuous pixel coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> PixelCoord<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, o: &Self) -> T {
        (self.u - o.u).hypot(self.v - o.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn cast<U: Real>(&self) -> PixelCoord<U> {
        PixelCoord::new(U::lit(self.u.to_f64_lossy()), U::lit(self.v.to_f64_lossy()))
    }
}

/// Pinhole camera with a world→camera rigid transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    intrinsics: Mat3<T>,
    rotation: Mat3<T>,
    translation: Vec3<T>,
    width: u32,
    height: u32,
}

impl<T: Real> Camera<T> {
    /// Validates and builds a camera.
    ///
    /// The intrinsics must have the upper-triangular pinhole form
    /// `[[fx, s, cx], [0, fy, cy], [0, 0, 1]]`.
    pub fn new(
        intrinsics: Mat3<T>,
        rotation: Mat3<T>,
        translation: Vec3<T>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidCamera(m));
        if width == 0 || height == 0 {
            return bad(format!("image size {width}x{height}"));
        }
        if !intrinsics.is_finite() || !rotation.is_finite() || !translation.is_finite() {
            return bad("non-finite parameter".into());
        }
        let k = intrinsics.cast::<f64>().0;
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 || k[2][2] != 1.0 {
            return bad("intrinsics must be [[fx,s,cx],[0,fy,cy],[0,0,1]]".into());
        }
        if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
            return bad(format!("focal lengths ({}, {}) must be positive", k[0][0], k[1][1]));
        }
        if !(0.0..width as f64).contains(&k[0][2]) || !(0.0..height as f64).contains(&k[1][2]) {
            return bad(format!("principal point ({}, {}) outside image", k[0][2], k[1][2]));
        }
        let r = rotation.cast::<f64>();
        let rrt = r.mul_mat(&r.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (rrt.0[i][j] - want).abs() > ROTATION_TOLERANCE {
                    return bad("rotation is not orthonormal".into());
                }
            }
        }
        if (r.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return bad("rotation determinant is not +1".into());
        }
        Ok(Self { intrinsics, rotation, translation, width, height })
    }

    /// Camera at `center` looking at `target`, with image `v` axis aligned to
    /// `down` as far as possible; square pixels and centered principal point.
    pub fn look_at(
        center: Vec3<T>,
        target: Vec3<T>,
        down: Vec3<T>,
        focal: T,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - center)
            .normalized()
            .ok_or_else(|| GeometryError::InvalidCamera("target equals center".into()))?;
        let right = down
            .cross(&forward)
            .normalized()
            .ok_or_else(|| GeometryError::InvalidCamera("down hint parallel to view".into()))?;
        let v_axis = forward.cross(&right);
        let rotation = Mat3::from_rows(right, v_axis, forward);
        let translation = -rotation.mul_vec(&center);
        let half = T::lit(0.5);
        let cx = (T::lit(width as f64) - T::one()) * half;
        let cy = (T::lit(height as f64) - T::one()) * half;
        let z = T::zero();
        let k = Mat3([[focal, z, cx], [z, focal, cy], [z, z, T::one()]]);
        Self::new(k, rotation, translation, width, height)
    }

    pub fn intrinsics(&self) -> &Mat3<T> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Mat3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3<T> {
        &self.translation
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Image diagonal in pixels.
    pub fn diagonal(&self) -> T {
        T::lit(self.width as f64).hypot(T::lit(self.height as f64))
    }

    /// Camera center `o = -Rᵀ t` in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        -self.rotation.tr_mul_vec(&self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Whether a pixel lies on the image, pixel footprints included.
    pub fn contains(&self, px: &PixelCoord<T>) -> bool {
        let half = T::lit(0.5);
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        px.is_finite() && px.u >= -half && px.u <= w - half && px.v >= -half && px.v <= h - half
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        Camera {
            intrinsics: self.intrinsics.cast(),
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
            width: self.width,
            height: self.height,
        }
    }

    /// Direction of the viewing ray through a pixel, in camera coordinates
    /// with unit `z`.
    fn back_project(&self, px: &PixelCoord<T>) -> Vec3<T> {
        let k = &self.intrinsics.0;
        let (fx, s, cx, fy, cy) = (k[0][0], k[0][1], k[0][2], k[1][1], k[1][2]);
        let y = (px.v - cy) / fy;
        let x = (px.u - cx - s * y) / fx;
        Vec3::new(x, y, T::one())
    }
}

/// Pinhole projection of a world point to pixel coordinates.
pub fn project<T: Real>(camera: &Camera<T>, point: &Vec3<T>) -> Result<PixelCoord<T>, GeometryError> {
    let pc = camera.world_to_camera(point);
    let z = pc.z();
    if !(z > T::zero()) {
        return Err(GeometryError::BehindCamera { depth: z.to_f64_lossy() });
    }
    let k = &camera.intrinsics.0;
    let (x, y) = (pc.x() / z, pc.y() / z);
    Ok(PixelCoord::new(k[0][0] * x + k[0][1] * y + k[0][2], k[1][1] * y + k[1][2]))
}

/// A ray `o + t d` with unit direction over `[t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    origin: Vec3<T>,
    direction: Vec3<T>,
    t_near: T,
    t_far: T,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>, t_near: T, t_far: T) -> Result<Self, GeometryError> {
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
        if !origin.is_finite() || !direction.is_finite() {
            return Err(GeometryError::InvalidRay("non-finite origin or direction".into()));
        }
        if (direction.norm() - T::one()).abs() > tol {
            return Err(GeometryError::InvalidRay(format!(
                "direction norm {} is not 1",
                direction.norm()
            )));
        }
        if !(t_near >= T::zero() && t_near < t_far) {
            return Err(GeometryError::InvalidRay(format!("bounds [{t_near}, {t_far}]")));
        }
        Ok(Self { origin, direction, t_near, t_far })
    }

    pub fn origin(&self) -> Vec3<T> {
        self.origin
    }

    pub fn direction(&self) -> Vec3<T> {
        self.direction
    }

    pub fn t_near(&self) -> T {
        self.t_near
    }

    pub fn t_far(&self) -> T {
        self.t_far
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction.scale(t)
    }

    pub fn with_bounds(&self, t_near: T, t_far: T) -> Result<Self, GeometryError> {
        Self::new(self.origin, self.direction, t_near, t_far)
    }
}

/// Back-projects a pixel into a world-space ray starting at the camera center.
pub fn pixel_to_ray<T: Real>(
    camera: &Camera<T>,
    pixel: &PixelCoord<T>,
    t_near: T,
    t_far: T,
) -> Result<Ray<T>, GeometryError> {
    if !camera.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds {
            u: pixel.u.to_f64_lossy(),
            v: pixel.v.to_f64_lossy(),
            width: camera.width,
            height: camera.height,
        });
    }
    let dir_cam = camera.back_project(pixel);
    let dir = camera
        .rotation
        .tr_mul_vec(&dir_cam)
        .normalized()
        .ok_or_else(|| GeometryError::InvalidRay("zero direction".into()))?;
    Ray::new(camera.center(), dir, t_near, t_far)
}

/// Closest points between two (infinite) lines and their midpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangulationResult<T> {
    pub x_q: Vec3<T>,
    pub x_s: Vec3<T>,
    pub midpoint: Vec3<T>,
    pub gap: T,
    pub t_q: T,
    pub t_s: T,
}

impl<T: Real> TriangulationResult<T> {
    /// Both closest points lie ahead of their ray origins.
    pub fn is_forward(&self) -> bool {
        self.t_q > T::zero() && self.t_s > T::zero()
    }
}

/// Solves the 2×2 normal equations for the closest points of two lines.
pub fn closest_points<T: Real>(ray_q: &Ray<T>, ray_s: &Ray<T>) -> Result<TriangulationResult<T>, GeometryError> {
    let (dq, ds) = (ray_q.direction, ray_s.direction);
    let w0 = ray_q.origin - ray_s.origin;
    let a = dq.dot(&dq);
    let b = dq.dot(&ds);
    let c = ds.dot(&ds);
    let d = dq.dot(&w0);
    let e = ds.dot(&w0);
    if (T::one() - b.abs()).abs() <= T::lit(PARALLEL_TOLERANCE) {
        return Err(GeometryError::Degenerate { abs_dot: b.abs().to_f64_lossy() });
    }
    let denom = a * c - b * b;
    let t_q = (b * e - c * d) / denom;
    let t_s = (a * e - b * d) / denom;
    let x_q = ray_q.at(t_q);
    let x_s = ray_s.at(t_s);
    Ok(TriangulationResult {
        x_q,
        x_s,
        midpoint: (x_q + x_s).scale(T::lit(0.5)),
        gap: (x_q - x_s).norm(),
        t_q,
        t_s,
    })
}

/// Unbounded ray through a pixel, for triangulation.
pub fn correspondence_ray<T: Real>(camera: &Camera<T>, pixel: &PixelCoord<T>) -> Result<Ray<T>, GeometryError> {
    pixel_to_ray(camera, pixel, T::zero(), T::max_value())
}

/// Triangulates a pixel correspondence between two cameras.
pub fn triangulate_pixels<T: Real>(
    cam_q: &Camera<T>,
    cam_s: &Camera<T>,
    p_q: &PixelCoord<T>,
    p_s: &PixelCoord<T>,
) -> Result<TriangulationResult<T>, GeometryError> {
    let rq = correspondence_ray(cam_q, p_q)?;
    let rs = correspondence_ray(cam_s, p_s)?;
    closest_points(&rq, &rs)
}

/// Mean pixel distance between each correspondence and the reprojection of the
/// other ray's closest point: `(|π_q(x_s) - p_q| + |π_s(x_q) - p_s|) / 2`.
pub fn projected_ray_distance<T: Real>(
    cam_q: &Camera<T>,
    cam_s: &Camera<T>,
    p_q: &PixelCoord<T>,
    p_s: &PixelCoord<T>,
) -> Result<T, GeometryError> {
    let tri = triangulate_pixels(cam_q, cam_s, p_q, p_s)?;
    projected_ray_distance_of(cam_q, cam_s, p_q, p_s, &tri)
}

/// Projected ray distance for an already triangulated pair.
pub fn projected_ray_distance_of<T: Real>(
    cam_q: &Camera<T>,
    cam_s: &Camera<T>,
    p_q: &PixelCoord<T>,
    p_s: &PixelCoord<T>,
    tri: &TriangulationResult<T>,
) -> Result<T, GeometryError> {
    let a = project(cam_q, &tri.x_s)?.distance(p_q);
    let b = project(cam_s, &tri.x_q)?.distance(p_s);
    Ok((a + b) * T::lit(0.5))
}

/// On-disk camera record. Matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub name: String,
    pub intrinsics: [f64; 9],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Error)]
pub enum CameraFileError {
    #[error("camera file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("camera file JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("camera '{name}': {source}")]
    Invalid { name: String, source: GeometryError },
    #[error("duplicate camera name '{0}'")]
    Duplicate(String),
}

/// Named cameras of one scene, indexed by position.
#[derive(Clone, Debug, Default)]
pub struct CameraSet {
    names: Vec<String>,
    splits: Vec<Option<String>>,
    cameras: Vec<Camera<f64>>,
    index: HashMap<String, usize>,
}

impl CameraSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, split: Option<String>, camera: Camera<f64>) -> Result<usize, CameraFileError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CameraFileError::Duplicate(name));
        }
        let id = self.cameras.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.splits.push(split);
        self.cameras.push(camera);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Camera<f64>> {
        self.cameras.get(id)
    }

    pub fn cameras(&self) -> &[Camera<f64>] {
        &self.cameras
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn split(&self, id: usize) -> Option<&str> {
        self.splits[id].as_deref()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Ids whose split tag equals `split`.
    pub fn ids_with_split(&self, split: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split(i) == Some(split)).collect()
    }

    pub fn to_records(&self) -> Vec<CameraRecord> {
        (0..self.len())
            .map(|i| {
                let c = &self.cameras[i];
                CameraRecord {
                    name: self.names[i].clone(),
                    intrinsics: c.intrinsics.to_row_major(),
                    rotation: c.rotation.to_row_major(),
                    translation: c.translation.0,
                    width: c.width,
                    height: c.height,
                    split: self.splits[i].clone(),
                }
            })
            .collect()
    }

    pub fn from_records(records: Vec<CameraRecord>) -> Result<Self, CameraFileError> {
        let mut set = Self::new();
        for r in records {
            let cam = Camera::new(
                Mat3::from_row_major(&r.intrinsics),
                Mat3::from_row_major(&r.rotation),
                Vec3(r.translation),
                r.width,
                r.height,
            )
            .map_err(|source| CameraFileError::Invalid { name: r.name.clone(), source })?;
            set.push(r.name, r.split, cam)?;
        }
        Ok(set)
    }

    pub fn read_json(reader: impl Read) -> Result<Self, CameraFileError> {
        let records: Vec<CameraRecord> = serde_json::from_reader(reader)?;
        Self::from_records(records)
    }

    pub fn write_json(&self, mut writer: impl Write) -> Result<(), CameraFileError> {
        serde_json::to_writer_pretty(&mut writer, &self.to_records())?;
        writer.write_all(b"\n")?;
        Ok(())
    }
}
