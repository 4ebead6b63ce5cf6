use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::imgbuf::{DepthImage, RgbImage};

use super::{depth_order, project_all, RenderOptions};

/// Brute-force renderer: every pixel walks every projected Gaussian in global
/// depth order. No tiles and no early exit; the support rectangle and the
/// transmittance floor are applied as masks so the result is comparable to
/// the tiled path.
pub fn render_reference(set: &GaussianSet, camera: &Camera, opts: &RenderOptions) -> Result<(RgbImage, DepthImage)> {
    if let Some(index) = set.first_non_finite() {
        return Err(Error::NonFinite {
            what: "gaussian".into(),
            index,
        });
    }
    let (width, height) = (camera.intrinsics.width, camera.intrinsics.height);
    let mut projected = project_all(set, camera, opts);
    projected.sort_by(depth_order);

    let mut image = RgbImage::new(width, height);
    let mut depth = DepthImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut rgb = [0.0; 3];
            let mut d = 0.0;
            let mut t = 1.0;
            let mut live = true;
            for g in &projected {
                let inside = g.covers(x, y);
                let dx = px - g.mean2d[0];
                let dy = py - g.mean2d[1];
                let q = g.inv_cov2d.a * dx * dx + 2.0 * g.inv_cov2d.b * dx * dy + g.inv_cov2d.c * dy * dy;
                let alpha = (g.opacity * (-0.5 * q).exp()).min(opts.alpha_max);
                let accepted = inside && alpha >= opts.alpha_min;
                if accepted && t * (1.0 - alpha) < opts.min_transmittance {
                    live = false;
                }
                let w = if live && accepted { alpha * t } else { 0.0 };
                for c in 0..3 {
                    rgb[c] += g.rgb[c] * w;
                }
                d += g.depth * w;
                if live && accepted {
                    t *= 1.0 - alpha;
                }
            }
            for c in 0..3 {
                rgb[c] += t * opts.background[c];
            }
            image.set(x, y, rgb);
            depth.set(x, y, d);
        }
    }
    Ok((image, depth))
}

pub fn render_reference_depth(set: &GaussianSet, camera: &Camera, opts: &RenderOptions) -> Result<DepthImage> {
    Ok(render_reference(set, camera, opts)?.1)
}
