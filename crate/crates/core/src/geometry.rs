// SPDX-License-Identifier: Apache-2.0

//! Rigid transforms, pinhole cameras and depth-binned frustums.
//!
//! Frames: the ego frame is x forward, y left, z up. Camera frames are
//! x right, y down, z along the optical axis. Pixel `(col, row)` covers
//! `[col, col + 1) x [row, row + 1)` in continuous image coordinates, so its
//! center sits at `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Minimum camera-frame depth for a point to count as in front of the lens.
pub const MIN_DEPTH: f64 = 1e-6;

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Rejects rotations that are not orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("rigid transform", "non-finite entry"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if gram_err > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "rigid transform",
                format!("rotation is not orthonormal (|RᵀR - I| = {gram_err:e})"),
            ));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "rigid transform",
                format!("rotation determinant is {det}, expected +1"),
            ));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds from a `[w, x, y, z]` quaternion. Non-unit quaternions are
    /// normalized; a zero quaternion is rejected.
    pub fn from_quaternion_wxyz(q: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid("quaternion", format!("degenerate {q:?}")));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Self::new(unit.to_rotation_matrix().into_inner(), translation)
    }

    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        [q.w, q.i, q.j, q.k]
    }

    /// Camera pose looking horizontally along `yaw` (radians, CCW from ego x)
    /// from `position` in the ego frame, returned as `cam_from_ego`.
    pub fn camera_looking_along(yaw: f64, position: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let forward = Vector3::new(c, s, 0.0);
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        RigidTransform {
            rotation,
            translation: -(rotation * position),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Pinhole projection result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Index of the pixel containing `(u, v)`, i.e. the nearest pixel center.
    #[inline]
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

/// Undistorted pinhole camera with its extrinsic pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    cam_from_ego: RigidTransform,
    ego_from_cam: RigidTransform,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        cam_from_ego: RigidTransform,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid(
                "camera",
                format!("focal lengths must be positive, got ({fx}, {fy})"),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera", "image dimensions must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::invalid(
                "camera",
                format!("principal point ({cx}, {cy}) outside the {width}x{height} image"),
            ));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            ego_from_cam: cam_from_ego.inverse(),
            cam_from_ego,
        })
    }

    /// Symmetric camera with the principal point at the image center and
    /// square pixels, sized for a horizontal field of view in degrees.
    pub fn with_hfov(width: u32, height: u32, hfov_deg: f64, cam_from_ego: RigidTransform) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::invalid(
                "camera",
                format!("horizontal fov {hfov_deg} out of (0, 180)"),
            ));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
            cam_from_ego,
        )
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn cam_from_ego(&self) -> &RigidTransform {
        &self.cam_from_ego
    }
    pub fn ego_from_cam(&self) -> &RigidTransform {
        &self.ego_from_cam
    }

    /// Optical center in the ego frame.
    pub fn center(&self) -> Vector3<f64> {
        *self.ego_from_cam.translation()
    }

    /// Projects an ego-frame point. `None` when it is at or behind the lens
    /// (depth ≤ 1e-6) or lands outside `[0, width) x [0, height)`.
    pub fn project(&self, p_ego: &Vector3<f64>) -> Option<Projection> {
        let pc = self.cam_from_ego.apply(p_ego);
        if !(pc.z > MIN_DEPTH) {
            return None;
        }
        let u = self.fx * pc.x / pc.z + self.cx;
        let v = self.fy * pc.y / pc.z + self.cy;
        if u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64 {
            Some(Projection { u, v, depth: pc.z })
        } else {
            None
        }
    }

    /// Ego-frame point at camera depth `depth` behind pixel coordinate `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::invalid(
                "depth",
                format!("must be positive and finite, got {depth}"),
            ));
        }
        let pc = Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        Ok(self.ego_from_cam.apply(&pc))
    }

    /// Ego-frame direction of the ray through `(u, v)`, scaled so that its
    /// camera-frame z component is 1.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let dc = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.ego_from_cam.rotation() * dc
    }
}

/// Uniform depth bins. Bin `i` is sampled at its center `d0 + (i + 0.5) * delta`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthBinning {
    pub d0: f64,
    pub delta: f64,
    pub count: usize,
}

impl Default for DepthBinning {
    /// 118 bins of 0.5 m from 1 m, covering 1-60 m.
    fn default() -> Self {
        DepthBinning {
            d0: 1.0,
            delta: 0.5,
            count: 118,
        }
    }
}

impl DepthBinning {
    pub fn new(d0: f64, delta: f64, count: usize) -> Result<Self> {
        let bins = DepthBinning { d0, delta, count };
        bins.validate()?;
        Ok(bins)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::invalid(
                "depth binning",
                format!("d0 must be positive, got {}", self.d0),
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(
                "depth binning",
                format!("delta must be positive, got {}", self.delta),
            ));
        }
        if self.count == 0 || self.count > u16::MAX as usize {
            return Err(Error::invalid(
                "depth binning",
                format!("bin count {} out of range", self.count),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.d0 + (i as f64 + 0.5) * self.delta
    }

    pub fn far(&self) -> f64 {
        self.d0 + self.count as f64 * self.delta
    }

    /// Bin containing camera depth `depth`, if inside `[d0, far)`.
    pub fn bin_of(&self, depth: f64) -> Option<usize> {
        if depth < self.d0 {
            return None;
        }
        let i = ((depth - self.d0) / self.delta).floor() as usize;
        (i < self.count).then_some(i)
    }
}

/// Mapping from a feature grid to the full-resolution image by uniform stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSampling {
    pub feature_w: u32,
    pub feature_h: u32,
    pub image_w: u32,
    pub image_h: u32,
}

impl FeatureSampling {
    pub fn new(feature_w: u32, feature_h: u32, image_w: u32, image_h: u32) -> Result<Self> {
        if feature_w == 0 || feature_h == 0 {
            return Err(Error::invalid("feature grid", "dimensions must be positive"));
        }
        if image_w == 0 || image_h == 0 {
            return Err(Error::invalid("image", "dimensions must be positive"));
        }
        Ok(FeatureSampling {
            feature_w,
            feature_h,
            image_w,
            image_h,
        })
    }

    /// Continuous image coordinate of the center of feature cell `(fx, fy)`.
    #[inline]
    pub fn cell_center(&self, fx: u32, fy: u32) -> (f64, f64) {
        let su = self.image_w as f64 / self.feature_w as f64;
        let sv = self.image_h as f64 / self.feature_h as f64;
        ((fx as f64 + 0.5) * su, (fy as f64 + 0.5) * sv)
    }

    /// Full-resolution pixel sampled for feature cell `(fx, fy)`.
    #[inline]
    pub fn sample_pixel(&self, fx: u32, fy: u32) -> (u32, u32) {
        let (u, v) = self.cell_center(fx, fy);
        (
            (u.floor() as u32).min(self.image_w - 1),
            (v.floor() as u32).min(self.image_h - 1),
        )
    }

    pub fn cells(&self) -> usize {
        self.feature_w as usize * self.feature_h as usize
    }
}

/// Depth-binned pseudo points of every feature cell, row-major over cells
/// and ascending in depth within a cell.
#[derive(Debug, Clone)]
pub struct Frustum {
    pub feature_w: u32,
    pub feature_h: u32,
    pub n_bins: usize,
    pub positions: Vec<Vector3<f64>>,
}

impl Frustum {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `(pixel_index, ego_position)` pairs in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> + '_ {
        let n = self.n_bins;
        self.positions.iter().enumerate().map(move |(i, p)| (i / n, p))
    }
}

/// Lifts every feature cell's pixel center to all depth-bin centers.
pub fn generate_frustum(feature_w: u32, feature_h: u32, cam: &CameraModel, bins: &DepthBinning) -> Result<Frustum> {
    bins.validate()?;
    let sampling = FeatureSampling::new(feature_w, feature_h, cam.width, cam.height)?;
    let origin = cam.center();
    let depths: Vec<f64> = (0..bins.count).map(|i| bins.center(i)).collect();
    let mut positions = Vec::with_capacity(sampling.cells() * bins.count);
    for fy in 0..feature_h {
        for fx in 0..feature_w {
            let (u, v) = sampling.cell_center(fx, fy);
            let dir = cam.ray_direction(u, v);
            positions.extend(depths.iter().map(|&d| origin + dir * d));
        }
    }
    Ok(Frustum {
        feature_w,
        feature_h,
        n_bins: bins.count,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn simple_cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, RigidTransform::identity()).unwrap()
    }

    fn rotated_cam() -> CameraModel {
        let pose = RigidTransform::camera_looking_along(0.7, Vector3::new(0.3, -0.2, 1.6));
        CameraModel::new(420.0, 410.0, 320.5, 181.0, 640, 360, pose).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = rotated_cam();
        let p = cam.ego_from_cam().apply(&Vector3::new(0.0, 0.0, 7.5));
        let proj = cam.project(&p).unwrap();
        assert_abs_diff_eq!(proj.u, cam.cx(), epsilon = 1e-9);
        assert_abs_diff_eq!(proj.v, cam.cy(), epsilon = 1e-9);
        assert_abs_diff_eq!(proj.depth, 7.5, epsilon = 1e-9);
    }

    #[test]
    fn hand_evaluated_projection() {
        // u = fx * x / z + cx = 100 * 0.5 / 2 + 50
        let proj = simple_cam().project(&Vector3::new(0.5, 0.0, 2.0)).unwrap();
        assert_eq!((proj.u, proj.v, proj.depth), (75.0, 50.0, 2.0));
        let back = simple_cam().unproject(75.0, 50.0, 2.0).unwrap();
        assert_abs_diff_eq!(back, Vector3::new(0.5, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_and_outside_are_culled() {
        let cam = simple_cam();
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.0)).is_none());
        // u = 100 * 2 / 2 + 50 = 150 > width
        assert!(cam.project(&Vector3::new(2.0, 0.0, 2.0)).is_none());
        // u == width exactly is outside the half-open range
        assert!(cam.project(&Vector3::new(1.0, 0.0, 2.0)).is_none());
    }

    #[test]
    fn unproject_principal_point_lies_on_axis() {
        let cam = rotated_cam();
        let p = cam.unproject(cam.cx(), cam.cy(), 4.0).unwrap();
        let pc = cam.cam_from_ego().apply(&p);
        assert_abs_diff_eq!(pc, Vector3::new(0.0, 0.0, 4.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_rejects_nonpositive_depth() {
        let cam = simple_cam();
        assert!(cam.unproject(10.0, 10.0, 0.0).is_err());
        assert!(cam.unproject(10.0, 10.0, -2.0).is_err());
    }

    #[test]
    fn camera_validation() {
        let id = RigidTransform::identity();
        assert!(CameraModel::new(0.0, 1.0, 5.0, 5.0, 10, 10, id).is_err());
        assert!(CameraModel::new(1.0, 1.0, 10.0, 5.0, 10, 10, id).is_err());
        assert!(CameraModel::new(1.0, 1.0, 5.0, 0.0, 10, 10, id).is_err());
    }

    #[test]
    fn transform_validation_rejects_reflection_and_skew() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let t = RigidTransform::from_quaternion_wxyz([0.9, 0.1, -0.3, 0.2], Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let q = t.to_quaternion_wxyz();
        let t2 = RigidTransform::from_quaternion_wxyz(q, *t.translation()).unwrap();
        assert_abs_diff_eq!(*t.rotation(), *t2.rotation(), epsilon = 1e-12);
        assert!(RigidTransform::from_quaternion_wxyz([0.0; 4], Vector3::zeros()).is_err());
    }

    #[test]
    fn camera_pose_axes() {
        // Looking along +y (yaw 90°): a point 5 m to the left is straight ahead.
        let pose = RigidTransform::camera_looking_along(std::f64::consts::FRAC_PI_2, Vector3::new(0.0, 0.0, 1.5));
        let pc = pose.apply(&Vector3::new(0.0, 5.0, 1.5));
        assert_abs_diff_eq!(pc, Vector3::new(0.0, 0.0, 5.0), epsilon = 1e-12);
        // Points above the camera have negative image y.
        let up = pose.apply(&Vector3::new(0.0, 5.0, 2.5));
        assert!(up.y < 0.0);
    }

    #[test]
    fn frustum_counts_and_depth_range() {
        let cam = rotated_cam();
        let bins = DepthBinning::new(1.0, 0.5, 10).unwrap();
        let f = generate_frustum(4, 4, &cam, &bins).unwrap();
        assert_eq!(f.len(), 160);
        for p in &f.positions {
            let z = cam.cam_from_ego().apply(p).z;
            assert!(z >= bins.d0 - 1e-9 && z <= bins.far() + 1e-9);
        }
        let pixels: Vec<usize> = f.entries().map(|(pix, _)| pix).collect();
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[9], 0);
        assert_eq!(pixels[10], 1);
        assert_eq!(pixels[159], 15);
    }

    #[test]
    fn frustum_rays_are_collinear_with_camera_center() {
        let cam = simple_cam();
        let bins = DepthBinning::new(2.0, 1.0, 8).unwrap();
        let f = generate_frustum(5, 3, &cam, &bins).unwrap();
        for pix in 0..15 {
            let ray = &f.positions[pix * 8..(pix + 1) * 8];
            let dir = ray[0].normalize();
            for p in ray {
                assert!(p.cross(&dir).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn frustum_rejects_bad_dims() {
        let cam = simple_cam();
        assert!(generate_frustum(0, 4, &cam, &DepthBinning::default()).is_err());
        assert!(generate_frustum(
            4,
            4,
            &cam,
            &DepthBinning {
                d0: 1.0,
                delta: 0.5,
                count: 0
            }
        )
        .is_err());
    }

    #[test]
    fn bin_centers_and_lookup() {
        let bins = DepthBinning::default();
        assert_eq!(bins.center(0), 1.25);
        assert_eq!(bins.far(), 60.0);
        assert_eq!(bins.bin_of(1.0), Some(0));
        assert_eq!(bins.bin_of(1.49), Some(0));
        assert_eq!(bins.bin_of(1.5), Some(1));
        assert_eq!(bins.bin_of(60.0), None);
        assert_eq!(bins.bin_of(0.9), None);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| RigidTransform::from_quaternion_wxyz(q, Vector3::from(t)).unwrap())
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform()) {
            let id = t.compose(&t.inverse());
            prop_assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!(id.translation().abs().max() < 1e-9);
        }

        #[test]
        fn inverse_is_involution(t in arb_transform()) {
            let back = t.inverse().inverse();
            prop_assert!((back.rotation() - t.rotation()).abs().max() < 1e-12);
            prop_assert!((back.translation() - t.translation()).abs().max() < 1e-12);
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.rotation() - r.rotation()).abs().max() < 1e-12);
            prop_assert!((l.translation() - r.translation()).abs().max() < 1e-12);
        }

        #[test]
        fn project_unproject_round_trip(u in 0.01f64..639.99, v in 0.01f64..359.99, d in 0.5f64..80.0) {
            let cam = rotated_cam();
            let p = cam.unproject(u, v, d).unwrap();
            let proj = cam.project(&p).unwrap();
            prop_assert!((proj.u - u).abs() < 1e-9);
            prop_assert!((proj.v - v).abs() < 1e-9);
            prop_assert!((proj.depth - d).abs() < 1e-9);
        }
    }
}
