//! Seeded synthetic inputs: random Gaussian scenes for the rasterizer checks
//! and small ray-cast RGB-D rooms for training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Camera, CameraIntrinsics, CameraPose, RgbdFrame};
use crate::error::Result;
use crate::gaussian::{activate_free, GaussianConfig, GaussianSet, RawGaussian, SH_C0};
use crate::imgbuf::{quantize_u8, DepthImage, RgbImage};
use crate::linalg::Vec3;
use crate::scene_io::{Scene, DEPTH_SCALE};

/// Pinhole camera at the origin looking down +z with a ~60 degree field of view.
pub fn test_camera(width: usize, height: usize) -> Camera {
    let f = 0.85 * width as f64;
    Camera {
        intrinsics: CameraIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        },
        pose: CameraPose::IDENTITY,
    }
}

/// `n` raw Gaussians (free parameterization: `offset` is the mean) inside the
/// frustum of `camera`, at camera depths in `[1.5, 4]`.
pub fn random_raw_gaussians(rng: &mut impl Rng, n: usize, camera: &Camera, sh_degree: usize) -> Vec<RawGaussian> {
    let intr = &camera.intrinsics;
    (0..n)
        .map(|_| {
            let z = rng.gen_range(1.5..4.0);
            let u = rng.gen_range(0.0..intr.width as f64);
            let v = rng.gen_range(0.0..intr.height as f64);
            let mean = camera.pose.camera_to_world(&intr.unproject(u, v, z));
            let mut raw = RawGaussian {
                offset: mean.0,
                rotation: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
                log_scale: [0.0; 3].map(|_: f64| rng.gen_range(0.03f64.ln()..0.25f64.ln())),
                opacity_logit: rng.gen_range(-1.5..2.5),
                sh: [[0.0; 3]; 4],
            };
            if raw.rotation.iter().all(|q| q.abs() < 1e-3) {
                raw.rotation[0] = 1.0;
            }
            raw.sh[0] = [0.0; 3].map(|_: f64| rng.gen_range(-0.4..0.4) / SH_C0);
            if sh_degree > 0 {
                for k in 1..4 {
                    raw.sh[k] = [0.0; 3].map(|_: f64| rng.gen_range(-0.3..0.3));
                }
            }
            raw
        })
        .collect()
}

/// Activate free-parameterized raw Gaussians.
pub fn activate_free_set(raw: &[RawGaussian], sh_degree: usize) -> Result<GaussianSet> {
    let cfg = GaussianConfig {
        sh_degree,
        ..Default::default()
    };
    Ok(GaussianSet {
        sh_degree,
        gaussians: raw
            .iter()
            .enumerate()
            .map(|(i, r)| activate_free(r, i, &cfg))
            .collect::<Result<_>>()?,
    })
}

/// Random scene of `n` Gaussians seen by [`test_camera`].
pub fn random_scene(rng: &mut impl Rng, n: usize, width: usize, height: usize, sh_degree: usize) -> (GaussianSet, Camera) {
    let camera = test_camera(width, height);
    let raw = random_raw_gaussians(rng, n, &camera, sh_degree);
    (activate_free_set(&raw, sh_degree).expect("finite parameters"), camera)
}

/// Camera on a circle of `radius` around `target`, looking at it.
pub fn orbit_pose(target: Vec3, radius: f64, angle: f64, height: f64) -> CameraPose {
    let eye = target + Vec3::new(radius * angle.sin(), height, -radius * angle.cos());
    CameraPose::look_at(eye, target, Vec3::new(0.0, -1.0, 0.0))
}

/// Room description for [`render_room_frame`]. World is z-up; the room is
/// the box `[-half.x, half.x] x [-half.y, half.y] x [0, half.z * 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Room {
    pub half: Vec3,
    /// Floor, ceiling, then the four walls (-x, +x, -y, +y).
    pub surface_colors: [[f64; 3]; 6],
    /// Spatial frequency of the per-surface shading pattern.
    pub pattern_freq: f64,
    pub spheres: Vec<(Vec3, f64, [f64; 3])>,
    /// Axis-aligned boxes `(min, max, color)`.
    pub boxes: Vec<(Vec3, Vec3, [f64; 3])>,
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [0.0; 3].map(|_: f64| rng.gen_range(0.15..0.9))
}

impl Room {
    pub fn random(rng: &mut impl Rng) -> Self {
        let half = Vec3::new(rng.gen_range(1.8..2.6), rng.gen_range(1.8..2.6), rng.gen_range(1.1..1.4));
        let mut spheres = Vec::new();
        let mut boxes = Vec::new();
        // objects stay inside the camera orbit (see `room_pose`)
        let inner = 0.55 * half.x().min(half.y());
        for _ in 0..rng.gen_range(1..=3) {
            let r = rng.gen_range(0.15..0.35);
            let c = Vec3::new(rng.gen_range(-inner..inner), rng.gen_range(-inner..inner), r);
            spheres.push((c, r, random_color(rng)));
        }
        for _ in 0..rng.gen_range(1..=2) {
            let size = Vec3::new(rng.gen_range(0.25..0.6), rng.gen_range(0.25..0.6), rng.gen_range(0.3..0.8));
            let cx = rng.gen_range(-inner..inner);
            let cy = rng.gen_range(-inner..inner);
            let min = Vec3::new(cx - size.x() / 2.0, cy - size.y() / 2.0, 0.0);
            boxes.push((min, min + size, random_color(rng)));
        }
        Room {
            half,
            surface_colors: [0; 6].map(|_| random_color(rng)),
            pattern_freq: rng.gen_range(1.0..2.5),
            spheres,
            boxes,
        }
    }

    /// Nearest hit along `o + t d`: distance and color.
    fn trace(&self, o: Vec3, d: Vec3) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        let mut take = |t: f64, color: [f64; 3]| {
            if t > 1e-6 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, color));
            }
        };
        let lo = [-self.half.x(), -self.half.y(), 0.0];
        let hi = [self.half.x(), self.half.y(), 2.0 * self.half.z()];
        for a in 0..3 {
            if d[a] == 0.0 {
                continue;
            }
            let (plane, surface) = if d[a] > 0.0 { (hi[a], [3, 5, 1][a]) } else { (lo[a], [2, 4, 0][a]) };
            let t = (plane - o[a]) / d[a];
            let p = o + d.scale(t);
            take(t, self.shade(surface, p));
        }
        for (c, r, color) in &self.spheres {
            let oc = o - *c;
            let b = oc.dot(&d);
            let disc = b * b - (oc.dot(&oc) - r * r);
            if disc >= 0.0 {
                let t = -b - disc.sqrt();
                let n = (o + d.scale(t) - *c).scale(1.0 / r);
                let light = 0.6 + 0.4 * n.z().max(-1.0);
                take(t, color.map(|v| v * light));
            }
        }
        for (min, max, color) in &self.boxes {
            let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            for a in 0..3 {
                let inv = 1.0 / d[a];
                let (mut ta, mut tb) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                if ta > t0 {
                    t0 = ta;
                    axis = a;
                }
                t1 = t1.min(tb);
            }
            if t0 <= t1 && t0 > 0.0 {
                let light = [0.8, 0.7, 1.0][axis];
                take(t0, color.map(|v| v * light));
            }
        }
        best
    }

    fn shade(&self, surface: usize, p: Vec3) -> [f64; 3] {
        let f = self.pattern_freq;
        let wave = 0.85 + 0.15 * ((f * p.x()).sin() * (f * p.y()).cos() + (f * p.z()).sin()) / 2.0;
        self.surface_colors[surface].map(|v| v * wave)
    }
}

/// Camera for frame `id` of a room sequence: slow orbit near the ceiling,
/// looking across the room at the floor center.
pub fn room_pose(half: Vec3, id: u32) -> CameraPose {
    let angle = 0.06 * id as f64;
    let r = 0.85 * half.x().min(half.y());
    let eye = Vec3::new(r * angle.cos(), r * angle.sin(), 1.5 * half.z());
    let target = Vec3::new(-0.3 * r * angle.cos(), -0.3 * r * angle.sin(), 0.2);
    CameraPose::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0))
}

/// Ray-cast one RGB-D frame. Colors are quantized to 8 bits and depth to
/// millimeters, matching a round trip through PNG files.
pub fn render_room_frame(room: &Room, camera: &Camera, frame_id: u32) -> RgbdFrame {
    let intr = camera.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let mut color = RgbImage::new(w, h);
    let mut depth = DepthImage::new(w, h);
    let origin = camera.pose.center();
    for j in 0..h {
        for i in 0..w {
            let dir_cam = intr.unproject(i as f64 + 0.5, j as f64 + 0.5, 1.0);
            let dir = camera.pose.camera_to_world(&dir_cam) - origin;
            let dir = dir.scale(1.0 / dir.norm());
            if let Some((t, c)) = room.trace(origin, dir) {
                let z = camera.pose.world_to_camera(&(origin + dir.scale(t))).z();
                depth.set(i, j, (z * DEPTH_SCALE).round() / DEPTH_SCALE);
                color.set(i, j, c.map(|v| quantize_u8(v) as f64 / 255.0));
            }
        }
    }
    RgbdFrame {
        color,
        depth,
        intrinsics: intr,
        pose: camera.pose,
        frame_id,
    }
}

/// Seeded room scene with `frames` consecutive frame ids starting at 0.
pub fn room_scene(seed: u64, frames: u32, width: usize, height: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = Room::random(&mut rng);
    let intrinsics = test_camera(width, height).intrinsics;
    Scene {
        id: format!("room_{seed:04}"),
        frames: (0..frames)
            .map(|id| {
                let camera = Camera {
                    intrinsics,
                    pose: room_pose(room.half, id),
                };
                render_room_frame(&room, &camera, id)
            })
            .collect(),
    }
}

/// `count` room scenes with seeds `base_seed..base_seed + count`.
pub fn room_dataset(base_seed: u64, count: usize, frames: u32, width: usize, height: usize) -> Vec<Scene> {
    (0..count as u64)
        .map(|i| room_scene(base_seed + i, frames, width, height))
        .collect()
}
