use crate::error::{Error, Result};
use crate::gaussian::{eval_sh_backward, GaussianGrad, GaussianSet};
use crate::imgbuf::{DepthImage, RgbImage};
use crate::linalg::{unit_quat_rotation_vjp, unit_quat_to_rotation, Mat3, Vec3};
use crate::par;

use super::forward::raw_alpha;
use super::project::ewa_jacobian;
use super::{ProjectedGaussian, RenderOptions, RenderOutput};

/// Loss gradient w.r.t. the screen-space quantities of one projected Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectedGrad {
    pub mean2d: [f64; 2],
    /// Entries `(a, b, c)` of the inverse covariance `[[a, b], [b, c]]`, with
    /// `b` treated as a single scalar.
    pub inv_cov2d: [f64; 3],
    pub opacity: f64,
    pub rgb: [f64; 3],
    pub depth: f64,
}

impl ProjectedGrad {
    fn add(&mut self, o: &ProjectedGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.inv_cov2d[k] += o.inv_cov2d[k];
            self.rgb[k] += o.rgb[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

/// Screen-space gradients, one per entry of `out.projected`.
pub fn projected_backward(
    out: &RenderOutput,
    d_image: &RgbImage,
    d_depth: Option<&DepthImage>,
    opts: &RenderOptions,
) -> Result<Vec<ProjectedGrad>> {
    out.image.check_same_shape(d_image)?;
    if let Some(d) = d_depth {
        if d.width != out.width() || d.height != out.height() {
            return Err(Error::Shape(format!(
                "depth gradient is {}x{}, render is {}x{}",
                d.width,
                d.height,
                out.width(),
                out.height()
            )));
        }
    }
    let (width, height) = (out.width(), out.height());
    let bins = &out.bins;

    let per_tile = par::map_range(opts.exec, bins.tile_count(), |t| {
        let list = &bins.lists[t];
        let mut local = vec![ProjectedGrad::default(); list.len()];
        if list.is_empty() {
            return local;
        }
        let r = bins.tile_rect(t, width, height);
        for y in r[1]..=r[3] {
            for x in r[0]..=r[2] {
                let idx = y * width + x;
                let g = d_image.pixels[idx];
                let gd = d_depth.map_or(0.0, |d| d.values[idx]);
                // g . (color behind) + gd . (depth behind), starting from the background
                let mut behind = g[0] * opts.background[0] + g[1] * opts.background[1] + g[2] * opts.background[2];
                for c in out.pixel_contributors(x, y).iter().rev() {
                    let p = &out.projected[c.gaussian as usize];
                    let own = g[0] * p.rgb[0] + g[1] * p.rgb[1] + g[2] * p.rgb[2] + gd * p.depth;
                    let w = c.alpha * c.transmittance;
                    let d_alpha = c.transmittance * (own - behind);
                    behind = own * c.alpha + behind * (1.0 - c.alpha);

                    let pg = &mut local[c.slot as usize];
                    for k in 0..3 {
                        pg.rgb[k] += g[k] * w;
                    }
                    pg.depth += gd * w;
                    if raw_alpha(p, x, y) > opts.alpha_max {
                        continue;
                    }
                    let dx = x as f64 + 0.5 - p.mean2d[0];
                    let dy = y as f64 + 0.5 - p.mean2d[1];
                    let falloff = c.alpha / p.opacity;
                    pg.opacity += d_alpha * falloff;
                    let d_power = d_alpha * c.alpha;
                    let inv = &p.inv_cov2d;
                    pg.mean2d[0] += d_power * (inv.a * dx + inv.b * dy);
                    pg.mean2d[1] += d_power * (inv.b * dx + inv.c * dy);
                    pg.inv_cov2d[0] -= 0.5 * d_power * dx * dx;
                    pg.inv_cov2d[1] -= d_power * dx * dy;
                    pg.inv_cov2d[2] -= 0.5 * d_power * dy * dy;
                }
            }
        }
        local
    });

    let mut grads = vec![ProjectedGrad::default(); out.projected.len()];
    for (t, local) in per_tile.iter().enumerate() {
        for (slot, g) in local.iter().enumerate() {
            grads[bins.lists[t][slot] as usize].add(g);
        }
    }
    Ok(grads)
}

/// Chain one screen-space gradient back to the 3D Gaussian parameters.
fn gaussian_backward(
    p: &ProjectedGaussian,
    pg: &ProjectedGrad,
    set: &GaussianSet,
    out: &RenderOutput,
) -> GaussianGrad {
    let g = &set.gaussians[p.index];
    let cam = &out.camera;
    let (fx, fy) = (cam.intrinsics.fx, cam.intrinsics.fy);
    let w = cam.pose.rotation;
    let t = p.cam;
    let (tx, ty, tz) = (t.x(), t.y(), t.z());

    // inverse covariance -> covariance: dL/dSigma = -inv G inv
    let inv = [[p.inv_cov2d.a, p.inv_cov2d.b], [p.inv_cov2d.b, p.inv_cov2d.c]];
    let gi = [
        [pg.inv_cov2d[0], 0.5 * pg.inv_cov2d[1]],
        [0.5 * pg.inv_cov2d[1], pg.inv_cov2d[2]],
    ];
    let mut g2 = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += inv[r][i] * gi[i][j] * inv[j][c];
                }
            }
            g2[r][c] = -s;
        }
    }

    // Sigma_2d = J Sigma_cam J^T + low-pass
    let j = ewa_jacobian(&t, fx, fy);
    let rot = unit_quat_to_rotation(&g.rotation);
    let m = rot * Mat3::diag(g.scale);
    let sigma_cam = w * (m * m.transpose()) * w.transpose();
    let mut g_sc = Mat3::ZERO;
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    s += j[r][a] * g2[r][c] * j[c][b];
                }
            }
            g_sc.0[a][b] = s;
        }
    }
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..3 {
                    s += g2[r][k] * j[k][l] * sigma_cam.0[l][c];
                }
            }
            g_j[r][c] = 2.0 * s;
        }
    }

    // camera-space center
    let mut dt = [
        pg.mean2d[0] * fx / tz,
        pg.mean2d[1] * fy / tz,
        -pg.mean2d[0] * fx * tx / (tz * tz) - pg.mean2d[1] * fy * ty / (tz * tz),
    ];
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    dt[0] += g_j[0][2] * (-fx / tz2);
    dt[1] += g_j[1][2] * (-fy / tz2);
    dt[2] += g_j[0][0] * (-fx / tz2)
        + g_j[1][1] * (-fy / tz2)
        + g_j[0][2] * (2.0 * fx * tx / tz3)
        + g_j[1][2] * (2.0 * fy * ty / tz3);
    dt[2] += pg.depth;
    let mut d_mean = w.transpose().mul_vec(&Vec3(dt));

    // Sigma = M M^T, M = R S
    let g_sigma = w.transpose() * g_sc * w;
    let g_m = (g_sigma * m).scale(2.0);
    let mut g_r = Mat3::ZERO;
    let mut g_s = Vec3::ZERO;
    for r in 0..3 {
        for c in 0..3 {
            g_r.0[r][c] = g_m.0[r][c] * g.scale[c];
            g_s[c] += g_m.0[r][c] * rot.0[r][c];
        }
    }
    let log_scale = Vec3::new(g_s[0] * g.scale[0], g_s[1] * g.scale[1], g_s[2] * g.scale[2]);
    let rotation = unit_quat_rotation_vjp(&g.rotation, &g_r);

    let (sh, d_dir) = eval_sh_backward(&p.rgb_unclamped, &p.view_dir, &g.sh, set.sh_degree, &pg.rgb);
    if d_dir != Vec3::ZERO && p.view_dist > 0.0 {
        let along = p.view_dir.dot(&d_dir);
        d_mean += (d_dir - p.view_dir.scale(along)).scale(1.0 / p.view_dist);
    }

    GaussianGrad {
        mean: d_mean,
        rotation,
        log_scale,
        opacity_logit: pg.opacity * g.opacity * (1.0 - g.opacity),
        sh,
    }
}

/// Gradient of a loss w.r.t. every Gaussian of `set`, given the loss
/// gradient w.r.t. the rendered image (and optionally the depth map).
/// Culled Gaussians get a zero gradient.
pub fn rasterize_backward(
    out: &RenderOutput,
    d_image: &RgbImage,
    d_depth: Option<&DepthImage>,
    set: &GaussianSet,
    opts: &RenderOptions,
) -> Result<Vec<GaussianGrad>> {
    if out.gaussian_count != set.len() {
        return Err(Error::Mismatch(format!(
            "render has {} Gaussians, set has {}",
            out.gaussian_count,
            set.len()
        )));
    }
    let pgrads = projected_backward(out, d_image, d_depth, opts)?;
    let chained = par::map_range(opts.exec, out.projected.len(), |k| {
        gaussian_backward(&out.projected[k], &pgrads[k], set, out)
    });
    let mut grads = vec![GaussianGrad::default(); set.len()];
    for (p, g) in out.projected.iter().zip(chained) {
        grads[p.index] = g;
    }
    Ok(grads)
}
