//! Pinhole camera model: projection, unprojection, frustum tests and the
//! world-space footprint of a pixel.
//!
//! Conventions, fixed once and relied on everywhere:
//! - Pixel `(u, v)` has `u` growing along image columns and `v` along rows,
//!   origin at the top-left; the ray of a pixel passes through its center
//!   `(u + 0.5, v + 0.5)`.
//! - Camera frame is right-handed with `+z` the viewing direction; a point is
//!   visible only when its camera-frame depth exceeds `z_near`.
//! - Integer pixels come from flooring the continuous projection, so
//!   `project(unproject(px, d)) == px` exactly for any in-bounds pixel.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Near-plane used when no explicit value is configured, in world units.
pub const DEFAULT_Z_NEAR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Integer pixel index, row-major, origin at the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: u32,
    pub v: u32,
}

impl PixelCoord {
    pub fn new(u: u32, v: u32) -> Self {
        Self { u, v }
    }

    /// Row-major flat index within a `width`-wide image.
    pub fn index(&self, width: u32) -> usize {
        self.v as usize * width as usize + self.u as usize
    }

    pub fn from_index(index: usize, width: u32) -> Self {
        Self {
            u: (index % width as usize) as u32,
            v: (index / width as usize) as u32,
        }
    }
}

/// Continuous projection of a world point: sub-pixel position plus the
/// camera-frame depth. Carries everything the rasterizer needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousProjection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Pinhole camera with a rigid world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    world_to_cam: Matrix4<f64>,
    cam_to_world: Matrix4<f64>,
    z_near: f64,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        world_to_cam: Matrix4<f64>,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width < 1 || height < 1 {
            return Err(GeometryError::InvalidCamera(format!(
                "image size must be at least 1x1, got {width}x{height}"
            )));
        }
        let r = world_to_cam.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation block is not orthonormal (max deviation {ortho_err:.3e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "rotation block must have determinant +1".into(),
            ));
        }
        let bottom = world_to_cam.row(3);
        if bottom != Matrix4::identity().row(3) {
            return Err(GeometryError::InvalidCamera(
                "last row of world_to_cam must be [0, 0, 0, 1]".into(),
            ));
        }
        // Rigid inverse: [Rᵀ | -Rᵀ t].
        let t = world_to_cam.fixed_view::<3, 1>(0, 3).into_owned();
        let rt = r.transpose();
        let mut cam_to_world = Matrix4::identity();
        cam_to_world.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        cam_to_world
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(-rt * t));
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_cam,
            cam_to_world,
            z_near: DEFAULT_Z_NEAR,
        })
    }

    /// Camera at `eye` looking toward `target`. `up_hint` fixes the roll;
    /// the image `v` axis points away from it.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        eye: Point3<f64>,
        target: Point3<f64>,
        up_hint: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidCamera(
                "look_at eye and target coincide".into(),
            ));
        }
        let z_axis = forward.normalize();
        let x_axis = z_axis.cross(&up_hint);
        if x_axis.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "look_at direction is parallel to the up hint".into(),
            ));
        }
        let x_axis = x_axis.normalize();
        let y_axis = z_axis.cross(&x_axis);
        let mut world_to_cam = Matrix4::identity();
        for (row, axis) in [x_axis, y_axis, z_axis].iter().enumerate() {
            world_to_cam
                .fixed_view_mut::<1, 3>(row, 0)
                .copy_from(&axis.transpose());
            world_to_cam[(row, 3)] = -axis.dot(&eye.coords);
        }
        Self::new(fx, fy, cx, cy, width, height, world_to_cam)
    }

    pub fn with_z_near(mut self, z_near: f64) -> Self {
        self.z_near = z_near;
        self
    }

    pub fn z_near(&self) -> f64 {
        self.z_near
    }

    pub fn world_to_cam(&self) -> &Matrix4<f64> {
        &self.world_to_cam
    }

    pub fn cam_to_world(&self) -> &Matrix4<f64> {
        &self.cam_to_world
    }

    /// World-space rotation block of the world-to-camera transform.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_cam.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn to_camera_frame(&self, p: &Point3<f64>) -> Point3<f64> {
        self.world_to_cam.transform_point(p)
    }

    pub fn to_world_frame(&self, p_cam: &Point3<f64>) -> Point3<f64> {
        self.cam_to_world.transform_point(p_cam)
    }

    /// Continuous projection; absent when the point lies at or behind the
    /// near plane. No bounds check — the rasterizer needs off-screen splats.
    pub fn project_continuous(&self, p: &Point3<f64>) -> Option<ContinuousProjection> {
        let pc = self.to_camera_frame(p);
        if pc.z <= self.z_near {
            return None;
        }
        Some(ContinuousProjection {
            u: self.fx * pc.x / pc.z + self.cx,
            v: self.fy * pc.y / pc.z + self.cy,
            depth: pc.z,
        })
    }

    /// Integer pixel occupied by a world point, or absent when the point is
    /// behind the near plane or projects outside the image.
    pub fn project(&self, p: &Point3<f64>) -> Option<PixelCoord> {
        let c = self.project_continuous(p)?;
        let u = c.u.floor();
        let v = c.v.floor();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some(PixelCoord::new(u as u32, v as u32))
    }

    /// World point at camera-frame depth `depth` on the ray through the
    /// center of pixel `px`.
    pub fn unproject(&self, px: PixelCoord, depth: f64) -> Result<Point3<f64>, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        let x = (px.u as f64 + 0.5 - self.cx) / self.fx * depth;
        let y = (px.v as f64 + 0.5 - self.cy) / self.fy * depth;
        Ok(self.to_world_frame(&Point3::new(x, y, depth)))
    }

    /// World-space width subtended by one pixel at the given depth.
    pub fn pixel_footprint(&self, depth: f64) -> Result<f64, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        Ok(depth / self.fx)
    }
}

/// On-disk form: `world_to_cam` flattened row-major.
#[derive(Debug, Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    world_to_cam: Vec<f64>,
}

impl Serialize for Camera {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let m = &self.world_to_cam;
        let flat: Vec<f64> = (0..4)
            .flat_map(|r| (0..4).map(move |c| m[(r, c)]))
            .collect();
        CameraJson {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            world_to_cam: flat,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Camera {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = CameraJson::deserialize(deserializer)?;
        if raw.world_to_cam.len() != 16 {
            return Err(serde::de::Error::custom(format!(
                "world_to_cam must hold 16 values, got {}",
                raw.world_to_cam.len()
            )));
        }
        let m = Matrix4::from_fn(|r, c| raw.world_to_cam[r * 4 + c]);
        Camera::new(raw.fx, raw.fy, raw.cx, raw.cy, raw.width, raw.height, m)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn identity_camera(fx: f64, cx: f64, size: u32) -> Camera {
        Camera::new(fx, fx, cx, cx, size, size, Matrix4::identity()).unwrap()
    }

    #[test]
    fn principal_axis_hits_principal_point() {
        let cam = identity_camera(128.0, 128.0, 256);
        let px = cam.project(&Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, PixelCoord::new(128, 128));
    }

    #[test]
    fn behind_camera_is_absent() {
        let cam = identity_camera(128.0, 128.0, 256);
        assert!(cam.project(&Point3::new(0.0, 0.0, -1.0)).is_none());
        assert!(cam.project(&Point3::new(0.0, 0.0, 0.0)).is_none());
        // At the near plane exactly: still absent.
        assert!(cam
            .project(&Point3::new(0.0, 0.0, DEFAULT_Z_NEAR))
            .is_none());
    }

    #[test]
    fn unproject_principal_ray() {
        // Principal point on a pixel center: cx = cy = 128.5 puts the
        // principal ray through pixel (128, 128).
        let cam = Camera::new(128.0, 128.0, 128.5, 128.5, 256, 256, Matrix4::identity()).unwrap();
        let p = cam.unproject(PixelCoord::new(128, 128), 2.0).unwrap();
        assert!((p - Point3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_corner_closed_form() {
        let cam = Camera::new(128.0, 128.0, 128.5, 128.5, 256, 256, Matrix4::identity()).unwrap();
        let p = cam.unproject(PixelCoord::new(0, 0), 1.0).unwrap();
        assert!((p - Point3::new(-1.0, -1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_rejects_bad_depth() {
        let cam = identity_camera(128.0, 128.0, 256);
        assert!(cam.unproject(PixelCoord::new(0, 0), 0.0).is_err());
        assert!(cam.unproject(PixelCoord::new(0, 0), -1.0).is_err());
    }

    #[test]
    fn project_unproject_round_trip() {
        let cam = identity_camera(128.0, 128.0, 256);
        let p = cam.unproject(PixelCoord::new(37, 191), 3.5).unwrap();
        assert_eq!(cam.project(&p), Some(PixelCoord::new(37, 191)));
    }

    #[test]
    fn footprint_closed_form() {
        let cam = identity_camera(128.0, 128.0, 256);
        assert_eq!(cam.pixel_footprint(2.0).unwrap(), 0.015625);
        let unit = Camera::new(1.0, 1.0, 0.5, 0.5, 1, 1, Matrix4::identity()).unwrap();
        assert_eq!(unit.pixel_footprint(1.0).unwrap(), 1.0);
        // Linearity in depth.
        assert_eq!(
            cam.pixel_footprint(4.0).unwrap(),
            2.0 * cam.pixel_footprint(2.0).unwrap()
        );
        assert!(cam.pixel_footprint(0.0).is_err());
    }

    #[test]
    fn rejects_malformed_cameras() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, Matrix4::identity()).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 4, Matrix4::identity()).is_err());
        let mut skewed = Matrix4::identity();
        skewed[(0, 1)] = 0.5;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, skewed).is_err());
        // Determinant -1 (reflection).
        let mut mirror = Matrix4::identity();
        mirror[(0, 0)] = -1.0;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, mirror).is_err());
    }

    #[test]
    fn json_round_trip_matches_schema() {
        let cam = Camera::look_at(
            128.0,
            130.0,
            127.5,
            128.5,
            256,
            240,
            Point3::new(1.0, 2.0, -3.0),
            Point3::origin(),
            Vector3::y(),
        )
        .unwrap();
        let json = serde_json::to_value(&cam).unwrap();
        for key in ["fx", "fy", "cx", "cy", "width", "height", "world_to_cam"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["world_to_cam"].as_array().unwrap().len(), 16);
        let back: Camera = serde_json::from_value(json).unwrap();
        assert_eq!(back.world_to_cam(), cam.world_to_cam());
        assert_eq!(back.fx, cam.fx);
    }

    #[test]
    fn look_at_sees_target_at_principal_point() {
        let cam = Camera::look_at(
            64.0,
            64.0,
            32.0,
            32.0,
            64,
            64,
            Point3::new(3.0, 1.0, -4.0),
            Point3::origin(),
            Vector3::y(),
        )
        .unwrap();
        let c = cam.project_continuous(&Point3::origin()).unwrap();
        assert!((c.u - 32.0).abs() < 1e-9);
        assert!((c.v - 32.0).abs() < 1e-9);
    }

    fn arb_rotation() -> impl Strategy<Value = Matrix3<f64>> {
        (
            0.0..std::f64::consts::TAU,
            -1.0..1.0f64,
            0.0..std::f64::consts::TAU,
        )
            .prop_map(|(yaw, pitch_t, roll)| {
                let pitch = pitch_t * std::f64::consts::FRAC_PI_2 * 0.99;
                (nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw)).into_inner()
            })
    }

    fn arb_camera() -> impl Strategy<Value = Camera> {
        (
            arb_rotation(),
            -5.0..5.0f64,
            -5.0..5.0f64,
            -5.0..5.0f64,
            32.0..256.0f64,
        )
            .prop_map(|(r, tx, ty, tz, fx)| {
                let mut m = Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
                m[(0, 3)] = tx;
                m[(1, 3)] = ty;
                m[(2, 3)] = tz;
                Camera::new(fx, fx * 1.1, 31.0, 33.5, 64, 64, m).unwrap()
            })
    }

    proptest! {
        #[test]
        fn round_trip_any_pixel(cam in arb_camera(), u in 0u32..64, v in 0u32..64, depth in 1.01e-4..1e6f64) {
            let px = PixelCoord::new(u, v);
            let p = cam.unproject(px, depth).unwrap();
            prop_assert_eq!(cam.project(&p), Some(px));
        }

        #[test]
        fn pose_equivariance(cam in arb_camera(), rig in arb_rotation(), x in -2.0..2.0f64, y in -2.0..2.0f64, z in 1.0..8.0f64) {
            let p = Point3::new(x, y, z);
            let Some(before) = cam.project_continuous(&p) else {
                return Ok(());
            };
            if before.depth < 0.05 {
                // x/z amplifies rounding noise without bound as the point
                // approaches the camera plane; the invariant is about
                // non-degenerate geometry.
                return Ok(());
            }
            // Apply the same rigid transform to the point and to the camera.
            let shift = Vector3::new(0.7, -0.2, -1.3);
            let mut t = Matrix4::identity();
            t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rig);
            t.fixed_view_mut::<3, 1>(0, 3).copy_from(&shift);
            let mut t_inv = Matrix4::identity();
            t_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rig.transpose());
            t_inv
                .fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&(-rig.transpose() * shift));
            let moved_cam = Camera::new(
                cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                cam.world_to_cam() * t_inv,
            );
            // Products of near-orthonormal blocks can brush the constructor's
            // 1e-9 gate; skip those draws.
            let Ok(moved_cam) = moved_cam else { return Ok(()); };
            let after = moved_cam.project_continuous(&t.transform_point(&p)).unwrap();
            prop_assert!((before.u - after.u).abs() < 1e-9, "{} vs {}", before.u, after.u);
            prop_assert!((before.v - after.v).abs() < 1e-9);
            prop_assert!((before.depth - after.depth).abs() < 1e-9);
        }
    }
}
