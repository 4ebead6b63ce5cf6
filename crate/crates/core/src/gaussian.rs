//! Gaussian primitives: activation of raw (pre-activation) parameters,
//! covariance assembly, density evaluation and spherical-harmonics color.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize_vjp, unit_quat_to_rotation, Mat3, Quaternion, Vec3};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SH_COEFFS: usize = 4;

/// Activation constants shared by every Gaussian of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    pub sh_degree: usize,
    /// Bound on `|mu - anchor|` per axis, meters.
    pub offset_bound: f64,
    /// Upper scale clamp, meters.
    pub max_scale: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            sh_degree: 0,
            offset_bound: 0.05,
            max_scale: 1.0,
        }
    }
}

pub fn sh_coeff_count(degree: usize) -> Result<usize> {
    match degree {
        0 => Ok(1),
        1 => Ok(4),
        d => Err(Error::ShDegree(d)),
    }
}

/// Number of reals in one raw parameter tuple.
pub fn raw_dim(degree: usize) -> Result<usize> {
    Ok(3 + 4 + 3 + 1 + 3 * sh_coeff_count(degree)?)
}

/// Raw (pre-activation) parameters of one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawGaussian {
    pub offset: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    /// SH coefficients, `sh[k]` holds the RGB triple of basis function `k`.
    pub sh: [[f64; 3]; MAX_SH_COEFFS],
}

impl RawGaussian {
    /// Unpack the flat layout `offset(3) rotation(4) log_scale(3) logit(1) sh(3 * n)`.
    pub fn from_slice(v: &[f64], degree: usize) -> Result<Self> {
        let n = sh_coeff_count(degree)?;
        if v.len() != raw_dim(degree)? {
            return Err(Error::Shape(format!("raw gaussian has {} values", v.len())));
        }
        let mut raw = RawGaussian {
            offset: [v[0], v[1], v[2]],
            rotation: [v[3], v[4], v[5], v[6]],
            log_scale: [v[7], v[8], v[9]],
            opacity_logit: v[10],
            sh: [[0.0; 3]; MAX_SH_COEFFS],
        };
        for k in 0..n {
            raw.sh[k].copy_from_slice(&v[11 + 3 * k..14 + 3 * k]);
        }
        Ok(raw)
    }

    pub fn write_slice(&self, out: &mut [f64], degree: usize) {
        let n = sh_coeff_count(degree).expect("validated degree");
        out[0..3].copy_from_slice(&self.offset);
        out[3..7].copy_from_slice(&self.rotation);
        out[7..10].copy_from_slice(&self.log_scale);
        out[10] = self.opacity_logit;
        for k in 0..n {
            out[11 + 3 * k..14 + 3 * k].copy_from_slice(&self.sh[k]);
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        let mut flat = [0.0; 11 + 3 * MAX_SH_COEFFS];
        self.write_slice(&mut flat, 1);
        flat.iter().position(|v| !v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Unit quaternion.
    pub rotation: Quaternion,
    pub scale: Vec3,
    pub opacity: f64,
    pub sh: [[f64; 3]; MAX_SH_COEFFS],
    /// Index of the generating point.
    pub anchor: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub sh_degree: usize,
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn new(sh_degree: usize) -> Self {
        GaussianSet {
            sh_degree,
            gaussians: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Index of the first Gaussian holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.gaussians.iter().position(|g| {
            !(g.mean.is_finite()
                && g.rotation.to_array().iter().all(|v| v.is_finite())
                && g.scale.is_finite()
                && g.opacity.is_finite()
                && g.sh.iter().flatten().all(|v| v.is_finite()))
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Activate raw parameters around `anchor`:
/// `mu = anchor + bound * tanh(offset)`, `scale = clamp(exp(log_scale))`,
/// `opacity = sigmoid(logit)`, rotation normalized.
pub fn activate(
    raw: &RawGaussian,
    anchor: Vec3,
    anchor_index: usize,
    cfg: &GaussianConfig,
) -> Result<Gaussian> {
    if let Some(index) = raw.first_non_finite() {
        return Err(Error::NonFinite {
            what: format!("raw gaussian (anchor {anchor_index})"),
            index,
        });
    }
    let offset = Vec3(raw.offset.map(|o| cfg.offset_bound * o.tanh()));
    Ok(Gaussian {
        mean: anchor + offset,
        rotation: Quaternion::from_array(raw.rotation).normalized()?,
        scale: Vec3(raw.log_scale.map(|s| s.exp().clamp(MIN_SCALE, cfg.max_scale))),
        opacity: sigmoid(raw.opacity_logit),
        sh: raw.sh,
        anchor: anchor_index,
    })
}

/// Activate with the mean taken directly from `raw.offset` (no anchor or bound).
/// Used when Gaussians are optimized as free parameters.
pub fn activate_free(raw: &RawGaussian, index: usize, cfg: &GaussianConfig) -> Result<Gaussian> {
    let unbounded = GaussianConfig {
        offset_bound: 1.0,
        ..*cfg
    };
    let mut g = activate(raw, Vec3::ZERO, index, &unbounded)?;
    g.mean = Vec3(raw.offset);
    Ok(g)
}

/// Gradient of a scalar w.r.t. one Gaussian: mean, unit-quaternion rotation,
/// log-scale, opacity logit and SH coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: [[f64; 3]; MAX_SH_COEFFS],
}

impl GaussianGrad {
    pub fn add_assign(&mut self, o: &GaussianGrad) {
        self.mean += o.mean;
        for k in 0..4 {
            self.rotation[k] += o.rotation[k];
        }
        self.log_scale += o.log_scale;
        self.opacity_logit += o.opacity_logit;
        for (a, b) in self.sh.iter_mut().flatten().zip(o.sh.iter().flatten()) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mean == Vec3::ZERO
            && self.rotation == [0.0; 4]
            && self.log_scale == Vec3::ZERO
            && self.opacity_logit == 0.0
            && self.sh.iter().flatten().all(|v| *v == 0.0)
    }
}

/// Map a [`GaussianGrad`] back onto the raw parameters of [`activate`].
pub fn activate_backward(raw: &RawGaussian, grad: &GaussianGrad, cfg: &GaussianConfig) -> RawGaussian {
    let mut out = RawGaussian {
        opacity_logit: grad.opacity_logit,
        sh: grad.sh,
        ..Default::default()
    };
    for k in 0..3 {
        let t = raw.offset[k].tanh();
        out.offset[k] = grad.mean[k] * cfg.offset_bound * (1.0 - t * t);
        let s = raw.log_scale[k].exp();
        out.log_scale[k] = if s > MIN_SCALE && s <= cfg.max_scale {
            grad.log_scale[k]
        } else {
            0.0
        };
    }
    out.rotation = normalize_vjp(&Quaternion::from_array(raw.rotation), grad.rotation);
    out
}

/// Backward of [`activate_free`].
pub fn activate_free_backward(raw: &RawGaussian, grad: &GaussianGrad, cfg: &GaussianConfig) -> RawGaussian {
    let mut out = activate_backward(raw, grad, cfg);
    out.offset = grad.mean.0;
    out
}

/// `Sigma = R S S^T R^T`; `rotation` is normalized internally.
pub fn build_covariance(rotation: &Quaternion, scale: &Vec3) -> Result<Mat3> {
    let r = unit_quat_to_rotation(&rotation.normalized()?);
    let m = r * Mat3::diag(*scale);
    Ok(m * m.transpose())
}

/// Unnormalized Gaussian `exp(-1/2 (x - mu)^T Sigma^-1 (x - mu))`.
pub fn gaussian_density(mean: &Vec3, cov: &Mat3, x: &Vec3) -> Result<f64> {
    let inv = cov.inverse()?;
    let d = *x - *mean;
    Ok((-0.5 * d.dot(&inv.mul_vec(&d))).exp())
}

/// Real SH basis values up to degree 1 for a unit direction.
pub fn sh_basis(dir: &Vec3, degree: usize) -> Result<[f64; MAX_SH_COEFFS]> {
    let n = sh_coeff_count(degree)?;
    let mut b = [0.0; MAX_SH_COEFFS];
    b[0] = SH_C0;
    if n > 1 {
        b[1] = -SH_C1 * dir.y();
        b[2] = SH_C1 * dir.z();
        b[3] = -SH_C1 * dir.x();
    }
    Ok(b)
}

/// View-dependent color before clamping: `0.5 + sum_k c_k Y_k(dir)`.
pub fn eval_sh_unclamped(coeffs: &[[f64; 3]; MAX_SH_COEFFS], dir: &Vec3, degree: usize) -> Result<[f64; 3]> {
    let basis = sh_basis(dir, degree)?;
    let n = sh_coeff_count(degree)?;
    let mut rgb = [0.5; 3];
    for k in 0..n {
        for c in 0..3 {
            rgb[c] += coeffs[k][c] * basis[k];
        }
    }
    Ok(rgb)
}

/// `clamp(0.5 + sum_k c_k Y_k(dir), 0, 1)` per channel.
pub fn eval_sh(coeffs: &[[f64; 3]; MAX_SH_COEFFS], dir: &Vec3, degree: usize) -> Result<[f64; 3]> {
    Ok(eval_sh_unclamped(coeffs, dir, degree)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Backward of [`eval_sh`] given the unclamped color; returns gradients for
/// the coefficients and for the (unit) direction.
pub fn eval_sh_backward(
    unclamped: &[f64; 3],
    dir: &Vec3,
    coeffs: &[[f64; 3]; MAX_SH_COEFFS],
    degree: usize,
    d_rgb: &[f64; 3],
) -> ([[f64; 3]; MAX_SH_COEFFS], Vec3) {
    let mut g = [0.0; 3];
    for c in 0..3 {
        if unclamped[c] > 0.0 && unclamped[c] < 1.0 {
            g[c] = d_rgb[c];
        }
    }
    let basis = sh_basis(dir, degree).expect("validated degree");
    let n = sh_coeff_count(degree).expect("validated degree");
    let mut d_coeffs = [[0.0; 3]; MAX_SH_COEFFS];
    for k in 0..n {
        for c in 0..3 {
            d_coeffs[k][c] = g[c] * basis[k];
        }
    }
    let mut d_dir = Vec3::ZERO;
    if n > 1 {
        let dot = |k: usize| g[0] * coeffs[k][0] + g[1] * coeffs[k][1] + g[2] * coeffs[k][2];
        d_dir = Vec3::new(-SH_C1 * dot(3), -SH_C1 * dot(1), SH_C1 * dot(2));
    }
    (d_coeffs, d_dir)
}
