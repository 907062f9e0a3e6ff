//! Parameter prediction heads: four small MLPs mapping each pooled
//! Gaussian's feature vector to rotation, scale, opacity and color, plus the
//! activations that force every output into renderer-safe ranges.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gaussians::{sigmoid, SceneGaussians, Splat};
use crate::network::Activation;
use crate::pooling::PooledSet;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum HeadsError {
    #[error("feature dim mismatch: heads expect {expected}, features have {got}")]
    DimMismatch { expected: usize, got: usize },
}

/// Raw scale outputs are clamped to this band before exponentiation.
pub const SCALE_CLAMP: f64 = 5.0;

/// Two-layer perceptron, hidden width chosen by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fan_in: usize,
    pub hidden: usize,
    pub fan_out: usize,
    pub activation: Activation,
    /// Row-major fan_in x hidden.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major hidden x fan_out.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn init(
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let bound1 = (6.0 / (fan_in + hidden) as f64).sqrt();
        let bound2 = (6.0 / (hidden + fan_out) as f64).sqrt();
        Self {
            fan_in,
            hidden,
            fan_out,
            activation,
            w1: (0..fan_in * hidden)
                .map(|_| rng.uniform(-bound1, bound1))
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden * fan_out)
                .map(|_| rng.uniform(-bound2, bound2))
                .collect(),
            b2: vec![0.0; fan_out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (h, _) = self.forward_hidden(x);
        let mut out = self.b2.clone();
        for (k, &hk) in h.iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            for (o, &w) in out
                .iter_mut()
                .zip(&self.w2[k * self.fan_out..(k + 1) * self.fan_out])
            {
                *o += hk * w;
            }
        }
        out
    }

    /// Hidden activations and their pre-activations, for the reverse pass.
    pub fn forward_hidden(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.fan_in);
        let mut pre = self.b1.clone();
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            for (p, &w) in pre
                .iter_mut()
                .zip(&self.w1[k * self.hidden..(k + 1) * self.hidden])
            {
                *p += xk * w;
            }
        }
        let post: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        (post, pre)
    }
}

/// The four prediction heads. Hidden width equals the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub rotation: Mlp,
    pub scale: Mlp,
    pub opacity: Mlp,
    pub color: Mlp,
}

impl HeadWeights {
    /// Near-neutral initialization: second layers are scaled down and the
    /// rotation bias points at the identity quaternion, so an untrained
    /// network already emits renderable splats (identity rotation, scales
    /// close to the pixel footprint, mid opacity and color).
    pub fn init(feat_dim: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut heads = Self {
            rotation: Mlp::init(feat_dim, feat_dim, 4, activation, &mut rng),
            scale: Mlp::init(feat_dim, feat_dim, 3, activation, &mut rng),
            opacity: Mlp::init(feat_dim, feat_dim, 1, activation, &mut rng),
            color: Mlp::init(feat_dim, feat_dim, 3, activation, &mut rng),
        };
        for mlp in heads.all_mut() {
            for w in mlp.w2.iter_mut() {
                *w *= 0.05;
            }
        }
        heads.rotation.b2[0] = 1.0;
        heads
    }

    pub fn feat_dim(&self) -> usize {
        self.rotation.fan_in
    }

    pub fn all(&self) -> [&Mlp; 4] {
        [&self.rotation, &self.scale, &self.opacity, &self.color]
    }

    pub fn all_mut(&mut self) -> [&mut Mlp; 4] {
        [
            &mut self.rotation,
            &mut self.scale,
            &mut self.opacity,
            &mut self.color,
        ]
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct HeadStats {
    /// Gaussians whose raw quaternion had (numerically) zero norm and fell
    /// back to the identity rotation.
    pub zero_quaternion_fallbacks: usize,
}

/// Raw head outputs for one Gaussian mapped to splat parameters.
pub fn activate_params(
    raw_rotation: &[f64],
    raw_scale: &[f64],
    raw_opacity: f64,
    raw_color: &[f64],
    footprint: f64,
) -> (UnitQuaternion<f64>, Vector3<f64>, f64, [f64; 3], bool) {
    let q = Quaternion::new(
        raw_rotation[0],
        raw_rotation[1],
        raw_rotation[2],
        raw_rotation[3],
    );
    let (rotation, fallback) = if q.norm() < 1e-12 {
        (UnitQuaternion::identity(), true)
    } else {
        (UnitQuaternion::from_quaternion(q), false)
    };
    let scales = Vector3::new(
        footprint * raw_scale[0].clamp(-SCALE_CLAMP, SCALE_CLAMP).exp(),
        footprint * raw_scale[1].clamp(-SCALE_CLAMP, SCALE_CLAMP).exp(),
        footprint * raw_scale[2].clamp(-SCALE_CLAMP, SCALE_CLAMP).exp(),
    );
    let opacity = sigmoid(raw_opacity);
    let color = [
        sigmoid(raw_color[0]),
        sigmoid(raw_color[1]),
        sigmoid(raw_color[2]),
    ];
    (rotation, scales, opacity, color, fallback)
}

/// Map pooled features to full splat parameters. Means pass through; the
/// per-Gaussian pixel footprint anchors the predicted scales.
pub fn predict_params(
    pooled: &PooledSet,
    heads: &HeadWeights,
) -> Result<(SceneGaussians, HeadStats), HeadsError> {
    if pooled.features.dim() != heads.feat_dim() {
        return Err(HeadsError::DimMismatch {
            expected: heads.feat_dim(),
            got: pooled.features.dim(),
        });
    }
    let results: Vec<(Splat, bool)> = (0..pooled.len())
        .into_par_iter()
        .map(|k| {
            let f = pooled.features.row(k);
            let raw_r = heads.rotation.forward(f);
            let raw_s = heads.scale.forward(f);
            let raw_a = heads.opacity.forward(f);
            let raw_c = heads.color.forward(f);
            let (rotation, scales, opacity, color, fallback) =
                activate_params(&raw_r, &raw_s, raw_a[0], &raw_c, pooled.footprints[k]);
            (
                Splat {
                    mean: pooled.gaussians[k].mean,
                    rotation,
                    scales,
                    opacity,
                    color,
                },
                fallback,
            )
        })
        .collect();
    let mut splats = Vec::with_capacity(results.len());
    let mut stats = HeadStats::default();
    for (splat, fallback) in results {
        if fallback {
            stats.zero_quaternion_fallbacks += 1;
        }
        splats.push(splat);
    }
    Ok((SceneGaussians { splats }, stats))
}
