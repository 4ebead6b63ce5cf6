//! Pinhole camera model, RGB-D frames and back-projection to world-space
//! point clouds.
//!
//! Conventions:
//! * a pose maps world to camera: `x_cam = R * x_world + t`;
//! * pixel `(i, j)` has its center at continuous coordinates `(i + 0.5, j + 0.5)`;
//! * depth 0 marks an invalid pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgbuf::{DepthImage, RgbImage};
use crate::linalg::{Mat3, Vec3};

const MIN_CAMERA_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if !ok {
            return Err(Error::InvalidCamera(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn k_matrix(&self) -> Mat3 {
        Mat3([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])
    }

    /// Build from a 3x3 `K` matrix plus image size. Skew must be zero.
    pub fn from_k(k: &Mat3, width: usize, height: usize) -> Result<Self> {
        if k[(0, 1)].abs() > 1e-9 || k[(1, 0)].abs() > 1e-9 || (k[(2, 2)] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera(format!("unsupported K matrix {k:?}")));
        }
        let intr = CameraIntrinsics {
            fx: k[(0, 0)],
            fy: k[(1, 1)],
            cx: k[(0, 2)],
            cy: k[(1, 2)],
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Intrinsics for the same camera resampled to `width x height`.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Camera-space point for continuous pixel coordinates `(u, v)` at depth `d`
    /// (`d * K^-1 [u v 1]^T`).
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new(
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for CameraPose {
    fn default() -> Self {
        CameraPose::IDENTITY
    }
}

impl CameraPose {
    pub const IDENTITY: CameraPose = CameraPose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        CameraPose {
            rotation,
            translation,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        (self.rotation.transpose() * self.rotation).max_abs_diff(&Mat3::IDENTITY) <= tol
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `R^-1 (x_cam - t)`; `R^-1 = R^T` for a rotation.
    pub fn camera_to_world(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(&(*x - self.translation))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose().mul_vec(&self.translation)
    }

    /// Pose of a camera at `eye` looking at `target`, with image y pointing
    /// along `-up` (x right, y down, z forward).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = target - eye;
        let forward = forward.scale(1.0 / forward.norm());
        let right = forward.cross(&up);
        let right = right.scale(1.0 / right.norm());
        let down = forward.cross(&right);
        let rotation = Mat3([right.0, down.0, forward.0]);
        let translation = -rotation.mul_vec(&eye);
        CameraPose {
            rotation,
            translation,
        }
    }
}

/// Intrinsics plus pose: everything needed to render a view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbdFrame {
    pub color: RgbImage,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub frame_id: u32,
}

impl RgbdFrame {
    pub fn camera(&self) -> Camera {
        Camera {
            intrinsics: self.intrinsics,
            pose: self.pose,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Frame {
            frame: self.frame_id.to_string(),
            message,
        };
        self.intrinsics.validate()?;
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        if self.color.width != w || self.color.height != h || self.color.pixels.len() != w * h {
            return Err(err(format!(
                "color is {}x{}, intrinsics expect {w}x{h}",
                self.color.width, self.color.height
            )));
        }
        if self.depth.width != w || self.depth.height != h || self.depth.values.len() != w * h {
            return Err(err(format!(
                "depth is {}x{}, intrinsics expect {w}x{h}",
                self.depth.width, self.depth.height
            )));
        }
        if let Some(i) = self.depth.values.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(err(format!("invalid depth value at pixel {i}")));
        }
        if !self.pose.is_orthonormal(1e-6) {
            return Err(err("pose rotation is not orthonormal".into()));
        }
        Ok(())
    }
}

/// Colored world-space points, one row per back-projected pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub source_view: Vec<u32>,
    pub source_pixel: Vec<[u32; 2]>,
    pub visible_mask: Vec<bool>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visible_mask[i]).collect()
    }

    pub fn visible_count(&self) -> usize {
        self.visible_mask.iter().filter(|v| **v).count()
    }

    pub fn push(&mut self, p: Vec3, color: [f64; 3], view: u32, pixel: [u32; 2]) {
        self.positions.push(p);
        self.colors.push(color);
        self.source_view.push(view);
        self.source_pixel.push(pixel);
        self.visible_mask.push(true);
    }

    /// Concatenate clouds in order.
    pub fn merge(clouds: &[PointCloud]) -> PointCloud {
        let mut out = PointCloud::default();
        for c in clouds {
            out.positions.extend_from_slice(&c.positions);
            out.colors.extend_from_slice(&c.colors);
            out.source_view.extend_from_slice(&c.source_view);
            out.source_pixel.extend_from_slice(&c.source_pixel);
            out.visible_mask.extend_from_slice(&c.visible_mask);
        }
        out
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
            source_view: idx.iter().map(|&i| self.source_view[i]).collect(),
            source_pixel: idx.iter().map(|&i| self.source_pixel[i]).collect(),
            visible_mask: idx.iter().map(|&i| self.visible_mask[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        if self.is_empty() {
            return Vec3::ZERO;
        }
        let sum = self.positions.iter().fold(Vec3::ZERO, |a, p| a + *p);
        sum.scale(1.0 / self.len() as f64)
    }
}

/// World point for continuous pixel `(u, v)` at depth `d` seen from `pose`.
pub fn back_project_pixel(
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    u: f64,
    v: f64,
    depth: f64,
) -> Vec3 {
    pose.camera_to_world(&intrinsics.unproject(u, v, depth))
}

/// One point per pixel with positive depth, sampled at the pixel center.
pub fn back_project(frame: &RgbdFrame) -> PointCloud {
    back_project_view(frame, frame.frame_id)
}

/// Like [`back_project`] but tags points with an explicit view index.
pub fn back_project_view(frame: &RgbdFrame, view: u32) -> PointCloud {
    let (w, h) = (frame.width(), frame.height());
    let mut cloud = PointCloud::default();
    for j in 0..h {
        for i in 0..w {
            let d = frame.depth.get(i, j);
            if d > 0.0 {
                let p = back_project_pixel(
                    &frame.intrinsics,
                    &frame.pose,
                    i as f64 + 0.5,
                    j as f64 + 0.5,
                    d,
                );
                cloud.push(p, frame.color.get(i, j), view, [i as u32, j as u32]);
            }
        }
    }
    cloud
}

/// Continuous pixel coordinates and camera-space depth of world point `p`.
pub fn project_point(
    p: &Vec3,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<(f64, f64, f64)> {
    let c = pose.world_to_camera(p);
    if c.z() <= MIN_CAMERA_Z {
        return Err(Error::BehindCamera { z: c.z() });
    }
    Ok((
        intrinsics.fx * c.x() / c.z() + intrinsics.cx,
        intrinsics.fy * c.y() / c.z() + intrinsics.cy,
        c.z(),
    ))
}

/// Rotation `Rz(θz) * Ry(θy) * Rx(θx)`.
pub fn augmentation_rotation(angles: [f64; 3]) -> Mat3 {
    Mat3::rot_z(angles[2]) * Mat3::rot_y(angles[1]) * Mat3::rot_x(angles[0])
}

/// Apply one rigid rotation about `pivot` to every cloud and camera, so that
/// each camera sees exactly what it saw before.
pub fn rotate_augment(
    clouds: &mut [PointCloud],
    poses: &mut [CameraPose],
    angles: [f64; 3],
    pivot: Vec3,
) {
    let rot = augmentation_rotation(angles);
    if rot == Mat3::IDENTITY {
        return;
    }
    for cloud in clouds.iter_mut() {
        for p in cloud.positions.iter_mut() {
            *p = rot.mul_vec(&(*p - pivot)) + pivot;
        }
    }
    let rot_t = rot.transpose();
    for pose in poses.iter_mut() {
        // x_cam = R (Rot^T (p' - pivot) + pivot) + t
        let new_r = pose.rotation * rot_t;
        let new_t = pose.translation + pose.rotation.mul_vec(&pivot) - new_r.mul_vec(&pivot);
        *pose = CameraPose::new(new_r, new_t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
        }
    }

    fn random_pose(rng: &mut impl Rng) -> CameraPose {
        let angles = [
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
        ];
        CameraPose::new(
            augmentation_rotation(angles),
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        )
    }

    fn random_frame(rng: &mut impl Rng, w: usize, h: usize) -> RgbdFrame {
        let intrinsics = CameraIntrinsics {
            fx: 40.0,
            fy: 42.0,
            cx: w as f64 / 2.0 + 0.3,
            cy: h as f64 / 2.0 - 0.2,
            width: w,
            height: h,
        };
        let mut color = RgbImage::new(w, h);
        let mut depth = DepthImage::new(w, h);
        for j in 0..h {
            for i in 0..w {
                color.set(i, j, [rng.gen(), rng.gen(), rng.gen()]);
                let d = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.3..5.0) };
                depth.set(i, j, d);
            }
        }
        RgbdFrame {
            color,
            depth,
            intrinsics,
            pose: random_pose(rng),
            frame_id: 0,
        }
    }

    #[test]
    fn principal_point_ray() {
        let p = back_project_pixel(&intr(), &CameraPose::IDENTITY, 160.0, 120.0, 2.0);
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn off_axis_pixel_matches_matrix_evaluation() {
        // Independent evaluation: R^-1 (d K^-1 [u v 1]^T - t) with explicit matrix inverses.
        let k_inv = intr().k_matrix().inverse().unwrap();
        let pose = CameraPose::IDENTITY;
        let r_inv = pose.rotation.inverse().unwrap();
        let expect = r_inv.mul_vec(&(k_inv.mul_vec(&Vec3::new(260.0, 120.0, 1.0)).scale(1.0) - pose.translation));
        let got = back_project_pixel(&intr(), &pose, 260.0, 120.0, 1.0);
        assert!((got - expect).norm() < 1e-12);
        assert!((got - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn back_project_matches_explicit_formula_with_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let (u, v, d) = (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0), rng.gen_range(0.1..9.0));
            let k_inv = intr().k_matrix().inverse().unwrap();
            let r_inv = pose.rotation.inverse().unwrap();
            let expect = r_inv.mul_vec(&(k_inv.mul_vec(&Vec3::new(u, v, 1.0)).scale(d) - pose.translation));
            let got = back_project_pixel(&intr(), &pose, u, v, d);
            assert!((got - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_depth_is_excluded_and_counts_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = random_frame(&mut rng, 12, 9);
        let cloud = back_project(&frame);
        let valid = frame.depth.values.iter().filter(|d| **d > 0.0).count();
        assert_eq!(cloud.len(), valid);
        assert!(cloud.visible_mask.iter().all(|v| *v));
        for (k, px) in cloud.source_pixel.iter().enumerate() {
            assert!(frame.depth.get(px[0] as usize, px[1] as usize) > 0.0);
            assert_eq!(cloud.colors[k], frame.color.get(px[0] as usize, px[1] as usize));
        }
    }

    #[test]
    fn all_invalid_depth_gives_empty_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut frame = random_frame(&mut rng, 5, 4);
        frame.depth.values.iter_mut().for_each(|d| *d = 0.0);
        assert!(back_project(&frame).is_empty());
    }

    #[test]
    fn round_trip_recovers_pixel_and_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let frame = random_frame(&mut rng, 20, 15);
            let cloud = back_project(&frame);
            for (k, p) in cloud.positions.iter().enumerate() {
                let [i, j] = cloud.source_pixel[k];
                let (u, v, d) = project_point(p, &frame.intrinsics, &frame.pose).unwrap();
                assert!((u - (i as f64 + 0.5)).abs() < 1e-6);
                assert!((v - (j as f64 + 0.5)).abs() < 1e-6);
                assert!((d - frame.depth.get(i as usize, j as usize)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_basics() {
        let (u, v, d) = project_point(&Vec3::new(0.0, 0.0, 2.0), &intr(), &CameraPose::IDENTITY).unwrap();
        assert_eq!((u, v, d), (160.0, 120.0, 2.0));
        assert!(matches!(
            project_point(&Vec3::new(1.0, 0.0, 0.0), &intr(), &CameraPose::IDENTITY),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn zero_angles_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frame = random_frame(&mut rng, 6, 5);
        let mut clouds = vec![back_project(&frame)];
        let before = clouds.clone();
        let mut poses = vec![frame.pose];
        rotate_augment(&mut clouds, &mut poses, [0.0; 3], Vec3::new(0.3, 0.1, 2.0));
        assert_eq!(clouds, before);
        assert!(poses[0].rotation.max_abs_diff(&frame.pose.rotation) < 1e-15);
        assert!((poses[0].translation - frame.pose.translation).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let mut cloud = PointCloud::default();
        cloud.push(Vec3::new(1.0, 0.0, 0.0), [0.0; 3], 0, [0, 0]);
        let mut clouds = vec![cloud];
        rotate_augment(&mut clouds, &mut [], [0.0, 0.0, PI / 2.0], Vec3::ZERO);
        assert!((clouds[0].positions[0] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn augmentation_keeps_projections_and_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let frame = random_frame(&mut rng, 10, 8);
            let cloud = back_project(&frame);
            let angles = [
                rng.gen_range(-PI / 64.0..PI / 64.0),
                rng.gen_range(-PI / 64.0..PI / 64.0),
                rng.gen_range(-PI..PI),
            ];
            let pivot = cloud.centroid();
            let mut clouds = vec![cloud.clone()];
            let mut poses = vec![frame.pose];
            rotate_augment(&mut clouds, &mut poses, angles, pivot);
            for (a, b) in cloud.positions.iter().zip(&clouds[0].positions) {
                let p0 = project_point(a, &frame.intrinsics, &frame.pose).unwrap();
                let p1 = project_point(b, &frame.intrinsics, &poses[0]).unwrap();
                assert!((p0.0 - p1.0).abs() < 1e-6 && (p0.1 - p1.1).abs() < 1e-6 && (p0.2 - p1.2).abs() < 1e-6);
            }
            let n = cloud.len().min(30);
            for i in 0..n {
                for j in 0..n {
                    let d0 = (cloud.positions[i] - cloud.positions[j]).norm();
                    let d1 = (clouds[0].positions[i] - clouds[0].positions[j]).norm();
                    assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn look_at_sees_target_on_axis() {
        let pose = CameraPose::look_at(Vec3::new(1.0, 2.0, -3.0), Vec3::new(0.5, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0));
        assert!(pose.is_orthonormal(1e-12));
        let c = pose.world_to_camera(&Vec3::new(0.5, 0.0, 1.0));
        assert!(c.x().abs() < 1e-12 && c.y().abs() < 1e-12 && c.z() > 0.0);
        assert!((pose.center() - Vec3::new(1.0, 2.0, -3.0)).norm() < 1e-12);
    }
}
