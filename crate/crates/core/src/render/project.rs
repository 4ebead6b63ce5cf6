use crate::camera::Camera;
use crate::gaussian::{eval_sh_unclamped, Gaussian, GaussianSet};
use crate::linalg::{unit_quat_to_rotation, Mat3, Sym2, Vec3};
use crate::par;

use super::RenderOptions;

/// A Gaussian after EWA projection into one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Index into the source [`GaussianSet`].
    pub index: usize,
    pub mean2d: [f64; 2],
    pub cov2d: Sym2,
    pub inv_cov2d: Sym2,
    /// Camera-space depth, meters.
    pub depth: f64,
    /// Camera-space center.
    pub cam: Vec3,
    pub rgb: [f64; 3],
    pub rgb_unclamped: [f64; 3],
    pub opacity: f64,
    pub radius: f64,
    /// Inclusive pixel rectangle `[x0, y0, x1, y1]` of pixel centers inside
    /// the bounding box; pixels outside it get no contribution.
    pub rect: [usize; 4],
    /// Unit direction from the camera center to the mean, world frame.
    pub view_dir: Vec3,
    pub view_dist: f64,
}

impl ProjectedGaussian {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.rect[0] && x <= self.rect[2] && y >= self.rect[1] && y <= self.rect[3]
    }
}

/// Jacobian of `(fx x / z + cx, fy y / z + cy)` at camera-space point `t`.
pub fn ewa_jacobian(t: &Vec3, fx: f64, fy: f64) -> [[f64; 3]; 2] {
    let (x, y, z) = (t.x(), t.y(), t.z());
    [
        [fx / z, 0.0, -fx * x / (z * z)],
        [0.0, fy / z, -fy * y / (z * z)],
    ]
}

/// `J Sigma J^T` for a 2x3 `J` and symmetric 3x3 `Sigma`.
pub(crate) fn jsjt(j: &[[f64; 3]; 2], s: &Mat3) -> Sym2 {
    let mut js = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = j[r][0] * s.0[0][c] + j[r][1] * s.0[1][c] + j[r][2] * s.0[2][c];
        }
    }
    let e = |r: usize, c: usize| js[r][0] * j[c][0] + js[r][1] * j[c][1] + js[r][2] * j[c][2];
    Sym2::new(e(0, 0), e(0, 1), e(1, 1))
}

/// Project one Gaussian; `None` when it is culled (behind the near plane or
/// with a bounding box that misses every pixel center).
pub fn project_gaussian(
    g: &Gaussian,
    index: usize,
    sh_degree: usize,
    camera: &Camera,
    opts: &RenderOptions,
) -> Option<ProjectedGaussian> {
    let intr = &camera.intrinsics;
    let w = &camera.pose.rotation;
    let t = camera.pose.world_to_camera(&g.mean);
    if t.z() <= opts.near {
        return None;
    }
    let j = ewa_jacobian(&t, intr.fx, intr.fy);
    let m = unit_quat_to_rotation(&g.rotation) * Mat3::diag(g.scale);
    let sigma_cam = *w * (m * m.transpose()) * w.transpose();
    let mut cov2d = jsjt(&j, &sigma_cam);
    cov2d.a += opts.low_pass;
    cov2d.c += opts.low_pass;
    let inv_cov2d = cov2d.inverse().ok()?;

    let mean2d = [
        intr.fx * t.x() / t.z() + intr.cx,
        intr.fy * t.y() / t.z() + intr.cy,
    ];
    let radius = opts.sigma_extent * cov2d.max_eigenvalue().sqrt();
    // pixel centers i + 0.5 inside [mean - r, mean + r]
    let lo_x = (mean2d[0] - radius - 0.5).ceil().max(0.0);
    let hi_x = (mean2d[0] + radius - 0.5).floor().min(intr.width as f64 - 1.0);
    let lo_y = (mean2d[1] - radius - 0.5).ceil().max(0.0);
    let hi_y = (mean2d[1] + radius - 0.5).floor().min(intr.height as f64 - 1.0);
    if !(lo_x <= hi_x && lo_y <= hi_y) {
        return None;
    }

    let offset = g.mean - camera.pose.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 {
        offset.scale(1.0 / view_dist)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    };
    let rgb_unclamped = eval_sh_unclamped(&g.sh, &view_dir, sh_degree).ok()?;
    Some(ProjectedGaussian {
        index,
        mean2d,
        cov2d,
        inv_cov2d,
        depth: t.z(),
        cam: t,
        rgb: rgb_unclamped.map(|v| v.clamp(0.0, 1.0)),
        rgb_unclamped,
        opacity: g.opacity,
        radius,
        rect: [lo_x as usize, lo_y as usize, hi_x as usize, hi_y as usize],
        view_dir,
        view_dist,
    })
}

/// Project every Gaussian of the set, dropping culled ones.
pub fn project_all(set: &GaussianSet, camera: &Camera, opts: &RenderOptions) -> Vec<ProjectedGaussian> {
    par::map_range(opts.exec, set.len(), |i| {
        project_gaussian(&set.gaussians[i], i, set.sh_degree, camera, opts)
    })
    .into_iter()
    .flatten()
    .collect()
}
