//! Forward splatting on the CPU: project each Gaussian to a 2D elliptical
//! footprint, depth-sort, and alpha-composite front to back per pixel.
//!
//! The per-pixel loop walks splats in a single global order fixed by a
//! stable sort on (depth, input index), so the image is a pure function of
//! the splat set: permuting the input or changing the thread count cannot
//! change a single byte.

use nalgebra::{Matrix2, Matrix2x3, Matrix3};
use rayon::prelude::*;

use crate::gaussians::SceneGaussians;
use crate::geometry::Camera;
use crate::image::Image;

/// Isotropic variance floor added to every projected footprint, in px^2.
pub const COV2D_FLOOR: f64 = 0.3;

/// Transmittance below which a pixel stops compositing.
pub const EARLY_STOP_T: f64 = 1e-4;

/// Mahalanobis half-distance bound: 0.5 * 3^2 for the 3-sigma ellipse.
const POWER_CUTOFF: f64 = 4.5;

const TILE: u32 = 16;

/// One projected Gaussian ready for rasterization.
#[derive(Debug, Clone)]
pub struct Splat2D {
    pub position: [f64; 2],
    /// Upper triangle (a, b, c) of the inverse 2D covariance.
    pub inv_cov: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// 3-sigma footprint radius in pixels.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Splats at or behind the near plane.
    pub culled_behind: usize,
    /// Splats whose projected covariance failed the positive-definite test
    /// even after the variance floor.
    pub skipped_non_psd: usize,
    /// Splats that reached at least one tile.
    pub binned: usize,
}

/// Project splats into screen space, in input order.
fn project_splats(scene: &SceneGaussians, cam: &Camera, stats: &mut RenderStats) -> Vec<Splat2D> {
    let rot = cam.rotation();
    let mut out = Vec::with_capacity(scene.len());
    for splat in &scene.splats {
        let p = cam.to_camera_frame(&splat.mean);
        if p.z <= cam.z_near() {
            stats.culled_behind += 1;
            continue;
        }
        let u = cam.fx * p.x / p.z + cam.cx;
        let v = cam.fy * p.y / p.z + cam.cy;
        let cov_cam: Matrix3<f64> = rot * splat.covariance() * rot.transpose();
        let inv_z = 1.0 / p.z;
        let jac = Matrix2x3::new(
            cam.fx * inv_z,
            0.0,
            -cam.fx * p.x * inv_z * inv_z,
            0.0,
            cam.fy * inv_z,
            -cam.fy * p.y * inv_z * inv_z,
        );
        let cov2: Matrix2<f64> = jac * cov_cam * jac.transpose();
        let a = cov2[(0, 0)] + COV2D_FLOOR;
        let b = cov2[(0, 1)];
        let c = cov2[(1, 1)] + COV2D_FLOOR;
        let det = a * c - b * b;
        if !(a > 0.0 && c > 0.0 && det > 0.0) {
            stats.skipped_non_psd += 1;
            continue;
        }
        let mid = 0.5 * (a + c);
        let lambda_max = mid + ((mid - c) * (mid - c) + b * b).sqrt();
        out.push(Splat2D {
            position: [u, v],
            inv_cov: [c / det, -b / det, a / det],
            depth: p.z,
            opacity: splat.opacity,
            color: splat.color,
            radius: 3.0 * lambda_max.sqrt(),
        });
    }
    out
}

struct Tiles {
    tiles_x: u32,
    /// Splat indices per tile, in global depth order.
    lists: Vec<Vec<u32>>,
}

fn bin_splats(splats: &[Splat2D], order: &[u32], cam: &Camera, stats: &mut RenderStats) -> Tiles {
    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for &idx in order {
        let s = &splats[idx as usize];
        let x0 = (s.position[0] - s.radius).floor().max(0.0) as u32 / TILE;
        let y0 = (s.position[1] - s.radius).floor().max(0.0) as u32 / TILE;
        let x1 = (s.position[0] + s.radius)
            .ceil()
            .min(cam.width as f64 - 1.0);
        let y1 = (s.position[1] + s.radius)
            .ceil()
            .min(cam.height as f64 - 1.0);
        if x1 < 0.0
            || y1 < 0.0
            || s.position[0] - s.radius >= cam.width as f64
            || s.position[1] - s.radius >= cam.height as f64
        {
            continue;
        }
        let x1 = x1 as u32 / TILE;
        let y1 = y1 as u32 / TILE;
        stats.binned += 1;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[(ty * tiles_x + tx) as usize].push(idx);
            }
        }
    }
    Tiles { tiles_x, lists }
}

fn shade_pixel(
    u: u32,
    v: u32,
    splats: &[Splat2D],
    tile_list: &[u32],
    background: [f64; 3],
) -> [f64; 3] {
    let px = u as f64 + 0.5;
    let py = v as f64 + 0.5;
    let mut color = [0.0f64; 3];
    let mut transmittance = 1.0f64;
    for &idx in tile_list {
        let s = &splats[idx as usize];
        let dx = px - s.position[0];
        let dy = py - s.position[1];
        let power =
            0.5 * (s.inv_cov[0] * dx * dx + 2.0 * s.inv_cov[1] * dx * dy + s.inv_cov[2] * dy * dy);
        if power > POWER_CUTOFF {
            continue;
        }
        let w = s.opacity * (-power).exp();
        for (c, sc) in color.iter_mut().zip(s.color) {
            *c += transmittance * w * sc;
        }
        transmittance *= 1.0 - w;
        if transmittance < EARLY_STOP_T {
            break;
        }
    }
    for (c, bg) in color.iter_mut().zip(background) {
        *c += transmittance * bg;
    }
    color
}

fn prepare(scene: &SceneGaussians, cam: &Camera) -> (Vec<Splat2D>, Tiles, RenderStats) {
    let mut stats = RenderStats::default();
    let splats = project_splats(scene, cam, &mut stats);
    // Stable front-to-back order on (depth, input index).
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .partial_cmp(&splats[b as usize].depth)
            .unwrap()
            .then(a.cmp(&b))
    });
    let tiles = bin_splats(&splats, &order, cam, &mut stats);
    (splats, tiles, stats)
}

/// Render with rows processed in parallel. Bytewise identical to
/// [`render_sequential`].
pub fn render(scene: &SceneGaussians, cam: &Camera, background: [f64; 3]) -> (Image, RenderStats) {
    let (splats, tiles, stats) = prepare(scene, cam);
    let width = cam.width;
    let rows: Vec<Vec<[f64; 3]>> = (0..cam.height)
        .into_par_iter()
        .map(|v| {
            let ty = v / TILE;
            (0..width)
                .map(|u| {
                    let list = &tiles.lists[(ty * tiles.tiles_x + u / TILE) as usize];
                    shade_pixel(u, v, &splats, list, background)
                })
                .collect()
        })
        .collect();
    let mut image = Image::new(cam.width, cam.height);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, px) in row.into_iter().enumerate() {
            image.data[v * width as usize + u] = px;
        }
    }
    (image, stats)
}

/// Single-threaded reference path used to pin down the parallel renderer.
pub fn render_sequential(
    scene: &SceneGaussians,
    cam: &Camera,
    background: [f64; 3],
) -> (Image, RenderStats) {
    let (splats, tiles, stats) = prepare(scene, cam);
    let mut image = Image::new(cam.width, cam.height);
    for v in 0..cam.height {
        let ty = v / TILE;
        for u in 0..cam.width {
            let list = &tiles.lists[(ty * tiles.tiles_x + u / TILE) as usize];
            image.data[(v * cam.width + u) as usize] = shade_pixel(u, v, &splats, list, background);
        }
    }
    (image, stats)
}
