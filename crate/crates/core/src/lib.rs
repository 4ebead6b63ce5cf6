pub mod camera;
pub mod encoder;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod imgbuf;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod par;
pub mod render;
pub mod scene_io;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
