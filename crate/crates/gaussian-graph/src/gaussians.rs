//! Core Gaussian data model: per-pixel splats lifted from views, per-view
//! Gaussian groups, the final parameterized scene set, covariance assembly
//! and splat-file I/O in the community binary PLY layout.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::geometry::{Camera, PixelCoord};
use crate::synth::ViewBundle;

/// DC coefficient of the l=0 spherical harmonic basis; colors are stored in
/// splat files as `(c - 0.5) / SH_C0`.
pub const SH_C0: f64 = 0.28209479177387814;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("non-positive depth {depth} at pixel index {index}")]
    InvalidDepth { index: usize, depth: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate scale {0} (must be > 0)")]
    DegenerateScale(f64),
    #[error("splat file parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// One pixel-aligned Gaussian before parameter prediction: a world-space
/// mean plus the feature vector it carries, tagged with its source view and
/// source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Point3<f64>,
    pub feature: Vec<f64>,
    pub source_view: usize,
    pub pixel: PixelCoord,
}

/// One view's group of pixel-aligned Gaussians. Freshly lifted nodes hold
/// exactly `H*W` Gaussians in row-major pixel order; merged nodes may grow
/// past that, but each Gaussian keeps its original source pixel.
#[derive(Debug, Clone)]
pub struct GaussianNode {
    pub gaussians: Vec<Gaussian>,
    pub camera: Camera,
}

impl GaussianNode {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn feat_dim(&self) -> usize {
        self.gaussians.first().map_or(0, |g| g.feature.len())
    }

    /// Copy the per-Gaussian features into a dense matrix, row per Gaussian.
    pub fn feature_matrix(&self) -> FeatureMatrix {
        let dim = self.feat_dim();
        let mut out = FeatureMatrix::zeros(0, dim);
        for g in &self.gaussians {
            out.push_row(&g.feature);
        }
        out
    }
}

/// Lift one view to a Gaussian group: one Gaussian per pixel, mean on the
/// pixel ray at the provided depth, feature row copied.
pub fn lift_view(
    view: &ViewBundle,
    depth: &[f64],
    features: &FeatureMatrix,
    source_view: usize,
) -> Result<GaussianNode, GaussianError> {
    let n = view.pixel_count();
    if depth.len() != n {
        return Err(GaussianError::ShapeMismatch(format!(
            "depth has {} entries for {} pixels",
            depth.len(),
            n
        )));
    }
    if features.rows() != n {
        return Err(GaussianError::ShapeMismatch(format!(
            "features have {} rows for {} pixels",
            features.rows(),
            n
        )));
    }
    let cam = &view.camera;
    let mut gaussians = Vec::with_capacity(n);
    for k in 0..n {
        if !(depth[k] > 0.0) {
            return Err(GaussianError::InvalidDepth {
                index: k,
                depth: depth[k],
            });
        }
        let pixel = PixelCoord::from_index(k, cam.width);
        let mean = cam.unproject(pixel, depth[k])?;
        gaussians.push(Gaussian {
            mean,
            feature: features.row(k).to_vec(),
            source_view,
            pixel,
        });
    }
    Ok(GaussianNode {
        gaussians,
        camera: cam.clone(),
    })
}

/// Sigma = R * diag(S) * diag(S) * R^T. Quaternion is normalized internally;
/// scales must be positive.
pub fn assemble_covariance(
    rotation: &Quaternion<f64>,
    scales: &Vector3<f64>,
) -> Result<Matrix3<f64>, GaussianError> {
    for &s in scales.iter() {
        if !(s > 0.0) {
            return Err(GaussianError::DegenerateScale(s));
        }
    }
    let unit = UnitQuaternion::from_quaternion(*rotation);
    let r = unit.to_rotation_matrix().into_inner();
    let s2 = Matrix3::from_diagonal(&scales.map(|s| s * s));
    Ok(r * s2 * r.transpose())
}

/// Final splat parameters fed to the renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub mean: Point3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scales: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Splat {
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scales.map(|s| s * s));
        r * s2 * r.transpose()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGaussians {
    pub splats: Vec<Splat>,
}

impl SceneGaussians {
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<(), GaussianError> {
        for (i, s) in self.splats.iter().enumerate() {
            if (s.rotation.norm() - 1.0).abs() > 1e-6 {
                return Err(GaussianError::ShapeMismatch(format!(
                    "splat {i}: quaternion norm {}",
                    s.rotation.norm()
                )));
            }
            for &v in s.scales.iter() {
                if !(v > 0.0) {
                    return Err(GaussianError::DegenerateScale(v));
                }
            }
            if !(0.0..=1.0).contains(&s.opacity) {
                return Err(GaussianError::ShapeMismatch(format!(
                    "splat {i}: opacity {} outside [0,1]",
                    s.opacity
                )));
            }
        }
        Ok(())
    }
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

/// Numerically stable logistic; maps +-inf to exactly 1/0 so extreme stored
/// logits survive a round trip.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const PLY_PROPS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

/// Write splats as binary little-endian PLY with the community 3DGS field
/// conventions: color as SH DC coefficients, opacity as logit, scales as
/// logs, rotation as a (w, x, y, z) quaternion. All properties are f32.
pub fn write_splats(scene: &SceneGaussians, path: &Path) -> Result<(), GaussianError> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    write!(
        file,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        scene.splats.len()
    )?;
    for prop in PLY_PROPS {
        writeln!(file, "property float {prop}")?;
    }
    writeln!(file, "end_header")?;
    for s in &scene.splats {
        let q = s.rotation.quaternion();
        let values: [f64; 14] = [
            s.mean.x,
            s.mean.y,
            s.mean.z,
            (s.color[0] - 0.5) / SH_C0,
            (s.color[1] - 0.5) / SH_C0,
            (s.color[2] - 0.5) / SH_C0,
            logit(s.opacity),
            s.scales.x.ln(),
            s.scales.y.ln(),
            s.scales.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in values {
            file.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a splat PLY written by [`write_splats`] (or by compatible tools:
/// extra float properties such as normals are skipped, property order is
/// taken from the header).
pub fn read_splats(path: &Path) -> Result<SceneGaussians, GaussianError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let parse = |offset: usize, reason: &str| GaussianError::Parse {
        offset,
        reason: reason.to_string(),
    };

    // Header is ASCII lines up to and including "end_header".
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let start = offset;
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p)
            .ok_or_else(|| parse(start, "header not terminated"))?;
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| parse(start, "header is not ASCII"))?
            .trim()
            .to_string();
        offset = end + 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(parse(0, "missing ply magic"));
    }
    if !lines.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(parse(0, "expected format binary_little_endian 1.0"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    for line in &lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse().map_err(|_| parse(0, "bad vertex count"))?);
                in_vertex_element = true;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", ty, name] if in_vertex_element => {
                if *ty != "float" {
                    return Err(parse(0, &format!("unsupported property type {ty}")));
                }
                props.push((*name).to_string());
            }
            _ => {}
        }
    }
    let vertex_count = vertex_count.ok_or_else(|| parse(0, "missing element vertex"))?;
    let mut slots = [usize::MAX; 14];
    for (want, slot) in PLY_PROPS.iter().zip(slots.iter_mut()) {
        *slot = props
            .iter()
            .position(|p| p == want)
            .ok_or_else(|| parse(0, &format!("missing property {want}")))?;
    }
    let stride = props.len() * 4;
    let need = vertex_count * stride;
    if bytes.len() < offset + need {
        return Err(parse(
            bytes.len(),
            &format!(
                "payload truncated: need {} bytes from offset {offset}, have {}",
                need,
                bytes.len() - offset
            ),
        ));
    }

    let mut splats = Vec::with_capacity(vertex_count);
    for i in 0..vertex_count {
        let base = offset + i * stride;
        let field = |slot: usize| -> f64 {
            let at = base + slots[slot] * 4;
            f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as f64
        };
        let quat = Quaternion::new(field(10), field(11), field(12), field(13));
        if quat.norm() == 0.0 {
            return Err(parse(base + slots[10] * 4, "zero-norm rotation quaternion"));
        }
        // Quaternions written by this codec are unit up to f32 rounding;
        // renormalizing those would de-stabilize the stored bytes on the
        // next write. Only truly off-unit (foreign) files get normalized.
        let rotation = if (quat.norm() - 1.0).abs() <= 1e-6 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        splats.push(Splat {
            mean: Point3::new(field(0), field(1), field(2)),
            rotation,
            scales: Vector3::new(field(7).exp(), field(8).exp(), field(9).exp()),
            opacity: sigmoid(field(6)),
            color: [
                field(3) * SH_C0 + 0.5,
                field(4) * SH_C0 + 0.5,
                field(5) * SH_C0 + 0.5,
            ],
        });
    }
    Ok(SceneGaussians { splats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Camera;
    use crate::rng::Rng;
    use crate::synth::{raytrace, Albedo, AnalyticScene, Primitive};
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn plane_view(size: u32) -> ViewBundle {
        let scene = AnalyticScene {
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, 2.0],
                normal: [0.0, 0.0, -1.0],
                extent: 50.0,
                albedo: Albedo::Solid {
                    color: [0.3, 0.6, 0.9],
                },
            }],
            background: [0.0; 3],
        };
        let c = size as f64 / 2.0;
        let cam = Camera::new(
            size as f64,
            size as f64,
            c,
            c,
            size,
            size,
            Matrix4::identity(),
        )
        .unwrap();
        raytrace(&scene, &cam)
    }

    fn lift(view: &ViewBundle, feat_dim: usize) -> GaussianNode {
        let feats = crate::synth::encode_features(view, feat_dim).unwrap();
        let depth = crate::synth::oracle_depth(view, 0.0, 0);
        lift_view(view, &depth, &feats, 0).unwrap()
    }

    #[test]
    fn lift_produces_one_gaussian_per_pixel() {
        let view = plane_view(32);
        let node = lift(&view, 8);
        assert_eq!(node.len(), 1024);
        // Flat plane facing the camera: all camera-frame depths equal 2.
        for g in &node.gaussians {
            let z = node.camera.to_camera_frame(&g.mean).z;
            assert!((z - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lifted_gaussians_are_pixel_aligned() {
        let view = plane_view(16);
        let node = lift(&view, 8);
        for (k, g) in node.gaussians.iter().enumerate() {
            assert_eq!(g.pixel, PixelCoord::from_index(k, 16));
            assert_eq!(node.camera.project(&g.mean), Some(g.pixel));
        }
    }

    #[test]
    fn lift_rejects_bad_depth() {
        let view = plane_view(4);
        let feats = crate::synth::encode_features(&view, 8).unwrap();
        let mut depth = crate::synth::oracle_depth(&view, 0.0, 0);
        depth[5] = 0.0;
        assert!(matches!(
            lift_view(&view, &depth, &feats, 0),
            Err(GaussianError::InvalidDepth { index: 5, .. })
        ));
    }

    #[test]
    fn union_count_arithmetic() {
        // 1 Gaussian per pixel: N views of HW pixels lift to N*HW Gaussians.
        let view = plane_view(16);
        let nodes: Vec<GaussianNode> = (0..4)
            .map(|i| {
                let feats = crate::synth::encode_features(&view, 8).unwrap();
                let depth = crate::synth::oracle_depth(&view, 0.0, 0);
                lift_view(&view, &depth, &feats, i).unwrap()
            })
            .collect();
        let total: usize = nodes.iter().map(|n| n.len()).sum();
        assert_eq!(total, 4 * 16 * 16);
        // At 256x256 the same arithmetic gives the full-resolution union sizes.
        assert_eq!(4 * 256 * 256, 262_144);
        assert_eq!(3 * 4 * 256 * 256, 786_432);
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        let q = Quaternion::new(1.0, 0.0, 0.0, 0.0);
        let cov = assemble_covariance(&q, &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert!((cov - Matrix3::identity()).abs().max() < 1e-15);
        let cov = assemble_covariance(&q, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        assert!(
            (cov - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)))
                .abs()
                .max()
                < 1e-15
        );
        assert!(assemble_covariance(&q, &Vector3::new(1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let q = Quaternion::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
            if q.norm() < 1e-6 {
                continue;
            }
            let cov = assemble_covariance(&q, &Vector3::new(3.0, 2.0, 1.0)).unwrap();
            assert!((cov - cov.transpose()).abs().max() < 1e-12, "symmetric");
            let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (have, want) in eig.iter().zip([1.0, 4.0, 9.0]) {
                assert!((have - want).abs() < 1e-9, "eigenvalue {have} vs {want}");
            }
        }
    }

    fn sample_scene() -> SceneGaussians {
        // f32-representable values so the round trip is bit-exact on means.
        SceneGaussians {
            splats: vec![
                Splat {
                    mean: Point3::new(1.5, -0.25, 4.0),
                    rotation: UnitQuaternion::identity(),
                    scales: Vector3::new(0.5, 0.25, 2.0),
                    opacity: 0.5,
                    color: [0.25, 0.5, 0.75],
                },
                Splat {
                    mean: Point3::new(-8.0, 0.125, 0.0625),
                    rotation: UnitQuaternion::from_quaternion(Quaternion::new(1.0, 2.0, -1.0, 0.5)),
                    scales: Vector3::new(1.0, 1.0, 0.125),
                    opacity: 0.9,
                    color: [0.0, 1.0, 0.5],
                },
            ],
        }
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splats.ply");
        let scene = sample_scene();
        write_splats(&scene, &path).unwrap();
        let back = read_splats(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in scene.splats.iter().zip(&back.splats) {
            assert_eq!(a.mean, b.mean, "means bit-exact for f32 inputs");
            assert!((a.opacity - b.opacity).abs() < 1e-6);
            assert!((a.scales - b.scales).norm() < 1e-6);
            for c in 0..3 {
                assert!((a.color[c] - b.color[c]).abs() < 1e-6);
            }
            let dot = a.rotation.quaternion().dot(b.rotation.quaternion()).abs();
            assert!(dot > 1.0 - 1e-6, "rotation mismatch: dot {dot}");
        }
        back.validate().unwrap();
    }

    #[test]
    fn ply_second_round_trip_is_exact() {
        // After one f32 quantization, further round trips are lossless.
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ply");
        let p2 = dir.path().join("b.ply");
        let mut scene = sample_scene();
        scene.splats[0].mean = Point3::new(0.1, 0.2, 0.3); // not f32-exact
        write_splats(&scene, &p1).unwrap();
        let once = read_splats(&p1).unwrap();
        write_splats(&once, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn ply_empty_scene() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ply");
        write_splats(&SceneGaussians::default(), &path).unwrap();
        let back = read_splats(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn opacity_half_stores_zero_logit() {
        assert_eq!(logit(0.5), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ply_write_is_idempotent_after_one_quantization(
            x in -100.0..100.0f64,
            y in -100.0..100.0f64,
            z in -100.0..100.0f64,
            qw in -1.0..1.0f64,
            qx in -1.0..1.0f64,
            qy in -1.0..1.0f64,
            qz in -1.0..1.0f64,
            s0 in 1e-4..10.0f64,
            s1 in 1e-4..10.0f64,
            s2 in 1e-4..10.0f64,
            opacity in 0.001..0.999f64,
            r in 0.0..1.0f64,
            g in 0.0..1.0f64,
            b in 0.0..1.0f64,
        ) {
            let q = Quaternion::new(qw, qx, qy, qz);
            prop_assume!(q.norm() > 1e-3);
            let scene = SceneGaussians {
                splats: vec![Splat {
                    mean: Point3::new(x, y, z),
                    rotation: UnitQuaternion::from_quaternion(q),
                    scales: Vector3::new(s0, s1, s2),
                    opacity,
                    color: [r, g, b],
                }],
            };
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("a.ply");
            let p2 = dir.path().join("b.ply");
            write_splats(&scene, &p1).unwrap();
            let once = read_splats(&p1).unwrap();
            write_splats(&once, &p2).unwrap();
            prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn malformed_ply_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(
            &path,
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\nproperty float opacity\nproperty float scale_0\nproperty float scale_1\nproperty float scale_2\nproperty float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\nend_header\n\x00\x00",
        )
        .unwrap();
        match read_splats(&path) {
            Err(GaussianError::Parse { offset, reason }) => {
                assert!(offset > 0);
                assert!(reason.contains("truncated"), "{reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, b"not a ply\n").unwrap();
        assert!(matches!(
            read_splats(&path),
            Err(GaussianError::Parse { .. })
        ));
    }
}
