//! Scene directories and checkpoint files.
//!
//! Scene layout:
//!
//! ```text
//! <scene>/intrinsics.txt      3x3 K, row-major, whitespace separated
//! <scene>/pose/<id>.txt       4x4 camera-to-world, row-major
//! <scene>/color/<id>.png      8-bit RGB
//! <scene>/depth/<id>.png      16-bit grayscale, millimeters (0 = invalid)
//! ```
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "SPCK"
//! version    u32      = 1
//! step       u64
//! seed       u64
//! config     32 bytes SHA-256 of the config JSON
//! n_meta     u32, then n_meta x (key: u32 len + UTF-8, value: u32 len + UTF-8)
//! n_tensors  u32, then n_tensors x
//!            (name: u32 len + UTF-8, ndim: u32, dims: ndim x u64, data: prod(dims) x f64)
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::camera::{CameraIntrinsics, CameraPose, RgbdFrame};
use crate::error::{Error, Result};
use crate::imgbuf::{quantize_u8, DepthImage, RgbImage};
use crate::linalg::{Mat3, Mat4, Vec3};

/// Depth PNG units per meter.
pub const DEPTH_SCALE: f64 = 1000.0;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub frames: Vec<RgbdFrame>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for pair in self.frames.windows(2) {
            if pair[1].frame_id <= pair[0].frame_id {
                return Err(Error::Frame {
                    frame: pair[1].frame_id.to_string(),
                    message: "frame ids must be strictly increasing".into(),
                });
            }
            if (pair[1].width(), pair[1].height()) != (pair[0].width(), pair[0].height()) {
                return Err(Error::Frame {
                    frame: pair[1].frame_id.to_string(),
                    message: "frame size differs from the rest of the scene".into(),
                });
            }
        }
        self.frames.iter().try_for_each(RgbdFrame::validate)
    }

    pub fn frame_by_id(&self, id: u32) -> Option<&RgbdFrame> {
        self.frames
            .binary_search_by_key(&id, |f| f.frame_id)
            .ok()
            .map(|i| &self.frames[i])
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn parse_numbers(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("{t:?}: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != expected || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected {expected} finite numbers, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Parse a 3x3 row-major intrinsics file.
pub fn read_intrinsics_matrix(path: &Path) -> Result<Mat3> {
    let v = parse_numbers(path, 9)?;
    Ok(Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]))
}

/// Parse a camera-to-world 4x4 pose file and return the world-to-camera pose.
pub fn read_pose(path: &Path) -> Result<CameraPose> {
    let v = parse_numbers(path, 16)?;
    let mut m = Mat4::IDENTITY;
    for r in 0..4 {
        for c in 0..4 {
            m.0[r][c] = v[r * 4 + c];
        }
    }
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if !m.is_affine(1e-9) {
        return Err(bad("last row must be 0 0 0 1"));
    }
    let inv = m.affine_inverse().map_err(|_| bad("pose is not invertible"))?;
    let pose = CameraPose::new(inv.rotation(), inv.translation());
    if !pose.is_orthonormal(1e-4) {
        return Err(bad("pose rotation is not orthonormal"));
    }
    Ok(pose)
}

fn frame_ids(color_dir: &Path) -> Result<Vec<u32>> {
    if !color_dir.is_dir() {
        return Err(Error::MissingFile(color_dir.to_path_buf()));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(color_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let id = stem.parse::<u32>().map_err(|_| Error::Parse {
            path: path.clone(),
            message: "color file name must be a frame number".into(),
        })?;
        ids.push(id);
    }
    ids.sort_unstable();
    Ok(ids)
}

fn decode_color(path: &Path) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

fn decode_depth(path: &Path) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_luma16())
}

fn rgb_from_u8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> RgbImage {
    RgbImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img
            .pixels()
            .map(|p| p.0.map(|c| f64::from(c) / 255.0))
            .collect(),
    }
}

fn depth_from_u16(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> DepthImage {
    DepthImage {
        width: img.width() as usize,
        height: img.height() as usize,
        values: img.pixels().map(|p| f64::from(p.0[0]) / DEPTH_SCALE).collect(),
    }
}

/// Load a scene directory. With `resolution = Some((w, h))` color is resampled
/// bilinearly, depth by nearest neighbor, and the intrinsics scaled to match.
pub fn load_scene(dir: &Path, resolution: Option<(usize, usize)>) -> Result<Scene> {
    let k = read_intrinsics_matrix(&dir.join("intrinsics.txt"))?;
    let ids = frame_ids(&dir.join("color"))?;
    let mut frames = Vec::with_capacity(ids.len());
    let mut native: Option<(u32, u32)> = None;
    for id in ids {
        let frame_err = |message: String| Error::Frame {
            frame: id.to_string(),
            message,
        };
        let mut color = decode_color(&dir.join("color").join(format!("{id}.png")))?;
        let mut depth = decode_depth(&dir.join("depth").join(format!("{id}.png")))?;
        let pose = read_pose(&dir.join("pose").join(format!("{id}.txt")))?;
        if color.dimensions() != depth.dimensions() {
            return Err(frame_err(format!(
                "color is {:?} but depth is {:?}",
                color.dimensions(),
                depth.dimensions()
            )));
        }
        match native {
            None => native = Some(color.dimensions()),
            Some(d) if d != color.dimensions() => {
                return Err(frame_err(format!("size {:?} differs from {d:?}", color.dimensions())))
            }
            _ => {}
        }
        let (w0, h0) = color.dimensions();
        let mut intrinsics = CameraIntrinsics::from_k(&k, w0 as usize, h0 as usize)
            .map_err(|e| frame_err(e.to_string()))?;
        if let Some((w, h)) = resolution {
            if (w as u32, h as u32) != (w0, h0) {
                color = imageops::resize(&color, w as u32, h as u32, FilterType::Triangle);
                depth = imageops::resize(&depth, w as u32, h as u32, FilterType::Nearest);
                intrinsics = intrinsics.rescaled(w, h);
            }
        }
        let frame = RgbdFrame {
            color: rgb_from_u8(&color),
            depth: depth_from_u16(&depth),
            intrinsics,
            pose,
            frame_id: id,
        };
        frame.validate()?;
        frames.push(frame);
    }
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let scene = Scene { id, frames };
    scene.validate()?;
    Ok(scene)
}

/// Every immediate subdirectory of `root` holding an `intrinsics.txt`, sorted
/// by name. If `root` itself is a scene it is the only entry.
pub fn list_scenes(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("intrinsics.txt").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingFile(root.join("intrinsics.txt")));
    }
    Ok(dirs)
}

/// Encode a depth map as 16-bit millimeters (rounded, saturating).
pub fn encode_depth_mm(depth: &DepthImage) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
        let d = depth.get(x as usize, y as usize);
        Luma([(d * DEPTH_SCALE).round().clamp(0.0, f64::from(u16::MAX)) as u16])
    })
}

pub fn encode_color(color: &RgbImage) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    ImageBuffer::from_fn(color.width as u32, color.height as u32, |x, y| {
        Rgb(color.get(x as usize, y as usize).map(quantize_u8))
    })
}

pub fn write_color_png(path: &Path, color: &RgbImage) -> Result<()> {
    encode_color(color).save(path)?;
    Ok(())
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    encode_depth_mm(depth).save(path)?;
    Ok(())
}

fn format_matrix<const N: usize>(rows: &[[f64; N]; N]) -> String {
    rows.iter()
        .map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Write one frame (color, depth, camera-to-world pose) into a scene directory.
pub fn write_frame(dir: &Path, frame: &RgbdFrame) -> Result<()> {
    for sub in ["color", "depth", "pose"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let id = frame.frame_id;
    write_color_png(&dir.join("color").join(format!("{id}.png")), &frame.color)?;
    write_depth_png(&dir.join("depth").join(format!("{id}.png")), &frame.depth)?;
    let r_t = frame.pose.rotation.transpose();
    let c2w = Mat4::from_rt(&r_t, &frame.pose.center());
    fs::write(dir.join("pose").join(format!("{id}.txt")), format_matrix(&c2w.0))?;
    Ok(())
}

/// Write a whole scene; intrinsics come from the first frame.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(first) = scene.frames.first() {
        fs::write(dir.join("intrinsics.txt"), format_matrix(&first.intrinsics.k_matrix().0))?;
    }
    scene.frames.iter().try_for_each(|f| write_frame(dir, f))
}

/// Frame indices `(a, b)` with `id(b) = id(a) + interval`, anchor drawn
/// uniformly over all valid anchors.
pub fn sample_view_pair(scene: &Scene, interval: u32, rng: &mut impl Rng) -> Result<(usize, usize)> {
    let anchors = valid_anchors(scene, interval);
    if anchors.is_empty() {
        return Err(Error::NoViewPair { interval });
    }
    Ok(anchors[rng.gen_range(0..anchors.len())])
}

/// All `(a, b)` frame index pairs whose ids differ by `interval`.
pub fn valid_anchors(scene: &Scene, interval: u32) -> Vec<(usize, usize)> {
    scene
        .frames
        .iter()
        .enumerate()
        .filter_map(|(a, f)| {
            let target = f.frame_id.checked_add(interval)?;
            let b = scene.frames.binary_search_by_key(&target, |g| g.frame_id).ok()?;
            (interval > 0).then_some((a, b))
        })
        .collect()
}

/// Named dense tensor of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

pub fn config_hash(config_json: &str) -> [u8; 32] {
    Sha256::digest(config_json.as_bytes()).into()
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.write_u64::<LittleEndian>(self.step).unwrap();
        out.write_u64::<LittleEndian>(self.seed).unwrap();
        out.extend_from_slice(&self.config_hash);
        out.write_u32::<LittleEndian>(self.metadata.len() as u32).unwrap();
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.write_u32::<LittleEndian>(self.tensors.len() as u32).unwrap();
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.write_u32::<LittleEndian>(t.shape.len() as u32).unwrap();
            for d in &t.shape {
                out.write_u64::<LittleEndian>(*d as u64).unwrap();
            }
            for v in &t.data {
                out.write_f64::<LittleEndian>(*v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let trunc = |_| Error::Format("truncated checkpoint".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let remaining = |r: &Cursor<&[u8]>| bytes.len() as u64 - r.position();
        let get_str = |r: &mut Cursor<&[u8]>| -> Result<String> {
            let n = r.read_u32::<LittleEndian>().map_err(trunc)? as u64;
            if n > remaining(r) {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let mut buf = vec![0u8; n as usize];
            r.read_exact(&mut buf).map_err(trunc)?;
            String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 string".into()))
        };
        let step = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let seed = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash).map_err(trunc)?;
        let n_meta = r.read_u32::<LittleEndian>().map_err(trunc)?;
        let mut metadata = Vec::new();
        for _ in 0..n_meta {
            let k = get_str(&mut r)?;
            let v = get_str(&mut r)?;
            metadata.push((k, v));
        }
        let n_tensors = r.read_u32::<LittleEndian>().map_err(trunc)?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = get_str(&mut r)?;
            let ndim = r.read_u32::<LittleEndian>().map_err(trunc)?;
            let mut shape = Vec::new();
            for _ in 0..ndim {
                shape.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            if (count as u64).saturating_mul(8) > remaining(&r) {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let mut data = vec![0.0; count];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(trunc)?;
            tensors.push(Tensor { name, shape, data });
        }
        if remaining(&r) != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            step,
            seed,
            config_hash,
            metadata,
            tensors,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// World-to-camera pose of a camera at `center` with world-to-camera `rotation`.
pub fn pose_from_center(rotation: Mat3, center: Vec3) -> CameraPose {
    CameraPose::new(rotation, -rotation.mul_vec(&center))
}
