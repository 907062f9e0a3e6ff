//! Synthetic multi-view scenes with analytic geometry: a tiny raytracer
//! giving ground-truth images and oracle depth, plus a deterministic
//! per-pixel feature encoder. Together they stand in for a learned image
//! backbone while preserving all downstream shapes (one Gaussian per pixel).

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::geometry::Camera;
use crate::image::Image;
use crate::rng::Rng;

/// Depth assigned to pixels whose ray hits nothing.
pub const DEFAULT_FAR_DEPTH: f64 = 100.0;

/// Channels produced by the feature encoder before padding.
pub const BASE_FEATURE_CHANNELS: usize = 13;

/// Smallest feature dimension the encoder accepts.
pub const MIN_FEAT_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("feature dim too small: {0} < {MIN_FEAT_DIM}")]
    FeatureDimTooSmall(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Albedo {
    Solid {
        color: Rgb,
    },
    Checkerboard {
        color_a: Rgb,
        color_b: Rgb,
        cell: f64,
    },
    Gradient {
        start: Rgb,
        end: Rgb,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: Albedo,
    },
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        extent: f64,
        albedo: Albedo,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub background: Rgb,
}

fn color_valid(c: &Rgb) -> bool {
    c.iter().all(|v| (0.0..=1.0).contains(v))
}

fn albedo_valid(a: &Albedo) -> bool {
    match a {
        Albedo::Solid { color } => color_valid(color),
        Albedo::Checkerboard {
            color_a,
            color_b,
            cell,
        } => color_valid(color_a) && color_valid(color_b) && *cell > 0.0,
        Albedo::Gradient { start, end } => color_valid(start) && color_valid(end),
    }
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !color_valid(&self.background) {
            return Err(SynthError::InvalidScene("background out of [0,1]".into()));
        }
        for p in &self.primitives {
            match p {
                Primitive::Sphere { radius, albedo, .. } => {
                    if !(*radius > 0.0) {
                        return Err(SynthError::InvalidScene(format!(
                            "sphere radius {radius} must be positive"
                        )));
                    }
                    if !albedo_valid(albedo) {
                        return Err(SynthError::InvalidScene("sphere albedo invalid".into()));
                    }
                }
                Primitive::Plane {
                    normal,
                    extent,
                    albedo,
                    ..
                } => {
                    let n = Vector3::from(*normal);
                    if (n.norm() - 1.0).abs() > 1e-9 {
                        return Err(SynthError::InvalidScene(
                            "plane normal must be unit length".into(),
                        ));
                    }
                    if !(*extent > 0.0) {
                        return Err(SynthError::InvalidScene(
                            "plane extent must be positive".into(),
                        ));
                    }
                    if !albedo_valid(albedo) {
                        return Err(SynthError::InvalidScene("plane albedo invalid".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One rendered input view: ground-truth image, oracle depth and the camera.
/// `depth[k]` is the camera-frame z of the hit; misses keep `hit[k] = false`
/// and an infinite sentinel depth.
#[derive(Debug, Clone)]
pub struct ViewBundle {
    pub image: Image,
    pub depth: Vec<f64>,
    pub hit: Vec<bool>,
    pub camera: Camera,
}

impl ViewBundle {
    pub fn pixel_count(&self) -> usize {
        self.camera.pixel_count()
    }
}

/// Orthonormal in-plane frame for a plane normal; deterministic choice.
fn plane_frame(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let abs = normal.map(|v| v.abs());
    let reference = if abs.x <= abs.y && abs.x <= abs.z {
        Vector3::x()
    } else if abs.y <= abs.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let s_axis = reference.cross(normal).normalize();
    let t_axis = normal.cross(&s_axis);
    (s_axis, t_axis)
}

fn checker(parity: i64, a: &Rgb, b: &Rgb) -> Rgb {
    if parity.rem_euclid(2) == 0 {
        *a
    } else {
        *b
    }
}

fn lerp_rgb(a: &Rgb, b: &Rgb, t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

impl Primitive {
    /// Intersection parameter along `dir` (equal to camera-frame depth when
    /// `dir` has unit z in the camera frame), or None.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<f64> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - Point3::from(*center);
                let a = dir.dot(dir);
                let half_b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sqrt_d = disc.sqrt();
                let near = (-half_b - sqrt_d) / a;
                if near > t_min {
                    return Some(near);
                }
                let far = (-half_b + sqrt_d) / a;
                (far > t_min).then_some(far)
            }
            Primitive::Plane {
                point,
                normal,
                extent,
                ..
            } => {
                let n = Vector3::from(*normal);
                let denom = dir.dot(&n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (Point3::from(*point) - origin).dot(&n) / denom;
                if t <= t_min {
                    return None;
                }
                let hit = origin + dir * t;
                let local = hit - Point3::from(*point);
                let (s_axis, t_axis) = plane_frame(&n);
                let s = local.dot(&s_axis);
                let tt = local.dot(&t_axis);
                (s.abs() <= *extent && tt.abs() <= *extent).then_some(t)
            }
        }
    }

    fn albedo_at(&self, hit: &Point3<f64>) -> Rgb {
        match self {
            Primitive::Sphere {
                center,
                radius,
                albedo,
            } => match albedo {
                Albedo::Solid { color } => *color,
                Albedo::Checkerboard {
                    color_a,
                    color_b,
                    cell,
                } => {
                    let parity = (hit.x / cell).floor() as i64
                        + (hit.y / cell).floor() as i64
                        + (hit.z / cell).floor() as i64;
                    checker(parity, color_a, color_b)
                }
                Albedo::Gradient { start, end } => {
                    let t = (hit.y - (center[1] - radius)) / (2.0 * radius);
                    lerp_rgb(start, end, t)
                }
            },
            Primitive::Plane {
                point,
                normal,
                extent,
                albedo,
            } => match albedo {
                Albedo::Solid { color } => *color,
                Albedo::Checkerboard {
                    color_a,
                    color_b,
                    cell,
                } => {
                    // Evaluate in the in-plane frame so numerical noise along
                    // the normal cannot flip cells.
                    let n = Vector3::from(*normal);
                    let (s_axis, t_axis) = plane_frame(&n);
                    let local = hit - Point3::from(*point);
                    let s = local.dot(&s_axis);
                    let tt = local.dot(&t_axis);
                    let parity = (s / cell).floor() as i64 + (tt / cell).floor() as i64;
                    checker(parity, color_a, color_b)
                }
                Albedo::Gradient { start, end } => {
                    let n = Vector3::from(*normal);
                    let (s_axis, _) = plane_frame(&n);
                    let s = (hit - Point3::from(*point)).dot(&s_axis);
                    lerp_rgb(start, end, (s / extent + 1.0) * 0.5)
                }
            },
        }
    }
}

/// Flat-shaded nearest-hit raytrace through every pixel center.
pub fn raytrace(scene: &AnalyticScene, cam: &Camera) -> ViewBundle {
    let (w, h) = (cam.width, cam.height);
    let origin = cam.position();
    let rot_c2w = cam.cam_to_world().fixed_view::<3, 3>(0, 0).into_owned();
    let mut image = Image::new(w, h);
    let mut depth = vec![f64::INFINITY; cam.pixel_count()];
    let mut hit = vec![false; cam.pixel_count()];
    for v in 0..h {
        for u in 0..w {
            let dir_cam = Vector3::new(
                (u as f64 + 0.5 - cam.cx) / cam.fx,
                (v as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            );
            // dir has unit camera-frame z, so the ray parameter t *is* the
            // camera-frame depth of the hit.
            let dir = rot_c2w * dir_cam;
            let mut best: Option<(f64, &Primitive)> = None;
            for prim in &scene.primitives {
                if let Some(t) = prim.intersect(&origin, &dir, cam.z_near()) {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, prim));
                    }
                }
            }
            let k = (v * w + u) as usize;
            match best {
                Some((t, prim)) => {
                    let hit_point = origin + dir * t;
                    image.data[k] = prim.albedo_at(&hit_point);
                    depth[k] = t;
                    hit[k] = true;
                }
                None => {
                    image.data[k] = scene.background;
                }
            }
        }
    }
    ViewBundle {
        image,
        depth,
        hit,
        camera: cam.clone(),
    }
}

/// Deterministic per-pixel feature vector. Channel layout before padding:
/// `[R, G, B, 1/(1+d), no_hit, sin/cos of u at 2 frequencies, sin/cos of v
/// at 2 frequencies]`; truncated or zero-padded to `feat_dim`.
pub fn encode_features(view: &ViewBundle, feat_dim: usize) -> Result<FeatureMatrix, SynthError> {
    if feat_dim < MIN_FEAT_DIM {
        return Err(SynthError::FeatureDimTooSmall(feat_dim));
    }
    let (w, h) = (view.camera.width as f64, view.camera.height as f64);
    let mut out = FeatureMatrix::zeros(view.pixel_count(), feat_dim);
    for v in 0..view.camera.height {
        for u in 0..view.camera.width {
            let k = (v * view.camera.width + u) as usize;
            let rgb = view.image.data[k];
            let d = if view.hit[k] {
                view.depth[k]
            } else {
                DEFAULT_FAR_DEPTH
            };
            let un = (u as f64 + 0.5) / w;
            let vn = (v as f64 + 0.5) / h;
            let tau = std::f64::consts::TAU;
            let base = [
                rgb[0],
                rgb[1],
                rgb[2],
                1.0 / (1.0 + d),
                if view.hit[k] { 0.0 } else { 1.0 },
                (tau * un).sin(),
                (tau * un).cos(),
                (tau * vn).sin(),
                (tau * vn).cos(),
                (2.0 * tau * un).sin(),
                (2.0 * tau * un).cos(),
                (2.0 * tau * vn).sin(),
                (2.0 * tau * vn).cos(),
            ];
            let row = out.row_mut(k);
            for (slot, value) in row.iter_mut().zip(base.iter()) {
                *slot = *value;
            }
        }
    }
    Ok(out)
}

/// Oracle depth with seeded multiplicative log-normal noise. No-hit pixels
/// get `far_depth` so each pixel still lifts to a Gaussian.
pub fn oracle_depth_with_far(
    view: &ViewBundle,
    noise_sigma: f64,
    seed: u64,
    far_depth: f64,
) -> Vec<f64> {
    assert!(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    let mut rng = Rng::new(seed);
    view.depth
        .iter()
        .zip(&view.hit)
        .map(|(&d, &hit)| {
            if !hit {
                far_depth
            } else if noise_sigma == 0.0 {
                d
            } else {
                d * (noise_sigma * rng.normal()).exp()
            }
        })
        .collect()
}

pub fn oracle_depth(view: &ViewBundle, noise_sigma: f64, seed: u64) -> Vec<f64> {
    oracle_depth_with_far(view, noise_sigma, seed, DEFAULT_FAR_DEPTH)
}
