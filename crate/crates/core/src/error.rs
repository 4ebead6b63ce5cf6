use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-length quaternion cannot be converted to a rotation")]
    ZeroQuaternion,
    #[error("singular matrix (det = {det:e})")]
    Singular { det: f64 },
    #[error("point is behind the camera (camera-space z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported spherical harmonics degree {0} (expected 0 or 1)")]
    ShDegree(usize),
    #[error("image {width}x{height} is smaller than the perceptual net receptive field {field}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        field: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mask ratio {0} must lie in [0, 1)")]
    MaskRatio(f64),
    #[error("no visible points to encode")]
    EmptyCloud,
    #[error("backward called without retained forward state")]
    NoForwardState,
    #[error("scene has no frame pair with id gap {interval}")]
    NoViewPair { interval: u32 },
    #[error("frame {frame}: {message}")]
    Frame { frame: String, message: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("bad binary file: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
