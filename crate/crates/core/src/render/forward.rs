use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::imgbuf::{DepthImage, RgbImage};
use crate::par;

use super::{bin_and_sort, project_all, ProjectedGaussian, RenderOptions, TileBins};

/// One accepted Gaussian at one pixel, in compositing order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contributor {
    /// Position in the tile list.
    pub slot: u32,
    /// Index into [`RenderOutput::projected`].
    pub gaussian: u32,
    pub alpha: f64,
    /// Transmittance before this Gaussian.
    pub transmittance: f64,
}

/// Rendered view plus everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub camera: Camera,
    pub image: RgbImage,
    /// Composited camera-space depth, `sum Z_i alpha_i T_i`.
    pub depth: DepthImage,
    pub final_transmittance: Vec<f64>,
    pub projected: Vec<ProjectedGaussian>,
    pub bins: TileBins,
    pub contributors: Vec<Contributor>,
    /// `[start, len]` into `contributors` for every pixel (row-major).
    pub pixel_ranges: Vec<[u32; 2]>,
    pub gaussian_count: usize,
    pub sh_degree: usize,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn pixel_contributors(&self, x: usize, y: usize) -> &[Contributor] {
        let [start, len] = self.pixel_ranges[y * self.width() + x];
        &self.contributors[start as usize..(start + len) as usize]
    }

    /// Per-pixel sum of compositing weights, `1 - T_final`.
    pub fn accumulated_weight(&self, x: usize, y: usize) -> f64 {
        1.0 - self.final_transmittance[y * self.width() + x]
    }
}

pub(crate) struct PixelResult {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub transmittance: f64,
}

/// Screen-space opacity of `g` at pixel `(x, y)` before thresholds:
/// `o * exp(-1/2 d^T Sigma^-1 d)` with `d` from the mean to the pixel center.
#[inline]
pub(crate) fn raw_alpha(g: &ProjectedGaussian, x: usize, y: usize) -> f64 {
    let dx = x as f64 + 0.5 - g.mean2d[0];
    let dy = y as f64 + 0.5 - g.mean2d[1];
    let power = -0.5 * g.inv_cov2d.quad_form(dx, dy);
    g.opacity * power.exp()
}

fn composite_pixel(
    x: usize,
    y: usize,
    list: &[u32],
    projected: &[ProjectedGaussian],
    opts: &RenderOptions,
    out: &mut Vec<Contributor>,
) -> PixelResult {
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    let mut t = 1.0;
    for (slot, &k) in list.iter().enumerate() {
        let g = &projected[k as usize];
        if !g.covers(x, y) {
            continue;
        }
        let alpha = raw_alpha(g, x, y).min(opts.alpha_max);
        if alpha < opts.alpha_min {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < opts.min_transmittance {
            break;
        }
        let w = alpha * t;
        for c in 0..3 {
            rgb[c] += g.rgb[c] * w;
        }
        depth += g.depth * w;
        out.push(Contributor {
            slot: slot as u32,
            gaussian: k,
            alpha,
            transmittance: t,
        });
        t = next_t;
    }
    for c in 0..3 {
        rgb[c] += t * opts.background[c];
    }
    PixelResult {
        rgb,
        depth,
        transmittance: t,
    }
}

struct TileOutput {
    pixels: Vec<(usize, PixelResult, u32)>,
    contributors: Vec<Contributor>,
}

/// Render `set` from `camera` with the tiled rasterizer.
pub fn rasterize_forward(set: &GaussianSet, camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    if let Some(index) = set.first_non_finite() {
        return Err(Error::NonFinite {
            what: "gaussian".into(),
            index,
        });
    }
    let (width, height) = (camera.intrinsics.width, camera.intrinsics.height);
    let projected = project_all(set, camera, opts);
    let bins = bin_and_sort(&projected, width, height, opts.tile_size);

    let tiles = par::map_range(opts.exec, bins.tile_count(), |t| {
        let r = bins.tile_rect(t, width, height);
        let list = &bins.lists[t];
        let mut out = TileOutput {
            pixels: Vec::with_capacity(opts.tile_size * opts.tile_size),
            contributors: Vec::new(),
        };
        for y in r[1]..=r[3] {
            for x in r[0]..=r[2] {
                let before = out.contributors.len();
                let px = composite_pixel(x, y, list, &projected, opts, &mut out.contributors);
                let n = (out.contributors.len() - before) as u32;
                out.pixels.push((y * width + x, px, n));
            }
        }
        out
    });

    let mut image = RgbImage::new(width, height);
    let mut depth = DepthImage::new(width, height);
    let mut final_transmittance = vec![1.0; width * height];
    let mut pixel_ranges = vec![[0u32; 2]; width * height];
    let total: usize = tiles.iter().map(|t| t.contributors.len()).sum();
    let mut contributors = Vec::with_capacity(total);
    for tile in tiles {
        let mut start = contributors.len() as u32;
        for (idx, px, n) in tile.pixels {
            image.pixels[idx] = px.rgb;
            depth.values[idx] = px.depth;
            final_transmittance[idx] = px.transmittance;
            pixel_ranges[idx] = [start, n];
            start += n;
        }
        contributors.extend(tile.contributors);
    }

    Ok(RenderOutput {
        camera: *camera,
        image,
        depth,
        final_transmittance,
        projected,
        bins,
        contributors,
        pixel_ranges,
        gaussian_count: set.len(),
        sh_degree: set.sh_degree,
    })
}

/// Composited depth map, `D(v) = sum Z_i alpha_i prod (1 - alpha_j)`.
pub fn render_depth(set: &GaussianSet, camera: &Camera, opts: &RenderOptions) -> Result<DepthImage> {
    Ok(rasterize_forward(set, camera, opts)?.depth)
}
