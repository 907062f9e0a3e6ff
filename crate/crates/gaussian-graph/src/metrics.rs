//! Image-quality and efficiency metrics: PSNR, single-scale SSIM, Gaussian
//! counts and frame timings collected into one evaluation report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image {0}x{1} is smaller than the {2}x{2} SSIM window")]
    TooSmallForWindow(u32, u32, u32),
}

/// PSNR is capped here; identical images report exactly this value.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// 10 * log10(1 / MSE) over all channels, images in [0, 1].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut sq_sum = 0.0f64;
    for (pa, pb) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            sq_sum += d * d;
        }
    }
    let mse = sq_sum / (a.data.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn luma(px: &[f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = (x as isize - half) as f64;
            let dy = (y as isize - half) as f64;
            let g = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = g;
            sum += g;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Standard single-scale SSIM on the luma channel: 11x11 Gaussian window
/// (sigma 1.5), k1 = 0.01, k2 = 0.03, dynamic range 1, averaged over fully
/// interior window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmallForWindow(
            a.width,
            a.height,
            SSIM_WINDOW as u32,
        ));
    }
    let ga: Vec<f64> = a.data.iter().map(luma).collect();
    let gb: Vec<f64> = b.data.iter().map(luma).collect();
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=(h - SSIM_WINDOW) {
        for x0 in 0..=(w - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for wy in 0..SSIM_WINDOW {
                let row = (y0 + wy) * w + x0;
                for wx in 0..SSIM_WINDOW {
                    let weight = window[wy * SSIM_WINDOW + wx];
                    let va = ga[row + wx];
                    let vb = gb[row + wx];
                    mu_a += weight * va;
                    mu_b += weight * vb;
                    aa += weight * va * va;
                    bb += weight * vb * vb;
                    ab += weight * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            sum += numerator / denominator;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Wall-clock milliseconds per pipeline stage (compute only, no file I/O).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub raytrace_ms: f64,
    pub encode_ms: f64,
    pub lift_ms: f64,
    pub graph_ms: f64,
    pub forward_ms: f64,
    pub pool_ms: f64,
    pub heads_ms: f64,
    pub render_ms: f64,
}

/// Quality and efficiency summary of one pipeline run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_view_psnr: Vec<f64>,
    pub per_view_ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Gaussians right after lifting (the union size).
    pub lifted_count: usize,
    /// Gaussians in the final scene set.
    pub gaussian_count: usize,
    /// Mean per-frame render time, warmup frame excluded.
    pub render_ms_per_frame: f64,
    pub fps: f64,
    pub stage_ms: StageTimings,
    pub config_hash: String,
}

impl EvalReport {
    pub fn set_render_time(&mut self, ms_per_frame: f64) {
        self.render_ms_per_frame = ms_per_frame;
        self.fps = if ms_per_frame > 0.0 {
            1000.0 / ms_per_frame
        } else {
            0.0
        };
    }
}
