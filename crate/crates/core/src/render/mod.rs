//! Differentiable tile-based Gaussian rasterizer.
//!
//! Pipeline: EWA projection of every Gaussian to screen space, binning into
//! 16x16 tiles, depth sort, per-pixel front-to-back alpha compositing, and an
//! analytic backward pass over the retained per-pixel contributor lists.
//! [`render_reference`] is a brute-force renderer with no tiles, used as the
//! oracle for the tiled path.

mod backward;
mod binning;
mod forward;
mod project;
mod reference;

pub use backward::{projected_backward, rasterize_backward, ProjectedGrad};
pub use binning::{bin_and_sort, depth_order, TileBins};
pub use forward::{rasterize_forward, render_depth, Contributor, RenderOutput};
pub use project::{ewa_jacobian, project_gaussian, project_all, ProjectedGaussian};
pub use reference::{render_reference, render_reference_depth};

use serde::{Deserialize, Serialize};

use crate::par::Execution;

/// Rasterizer constants. The defaults are the usual splatting conventions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub tile_size: usize,
    pub background: [f64; 3],
    /// Added to the diagonal of every screen-space covariance, pixels^2.
    pub low_pass: f64,
    pub alpha_max: f64,
    pub alpha_min: f64,
    /// Compositing stops before transmittance would fall below this.
    pub min_transmittance: f64,
    /// Gaussians with camera-space depth at or below this are culled, meters.
    pub near: f64,
    /// Bounding radius in standard deviations.
    pub sigma_extent: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            tile_size: 16,
            background: [0.0; 3],
            low_pass: 0.3,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            min_transmittance: 1e-4,
            near: 0.01,
            sigma_extent: 3.0,
            exec: Execution::Parallel,
        }
    }
}

impl RenderOptions {
    pub fn with_exec(self, exec: Execution) -> Self {
        RenderOptions { exec, ..self }
    }
}
