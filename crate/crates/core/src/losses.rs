//! Image losses and their gradients w.r.t. the rendered image.
//!
//! The perceptual loss compares channel-normalized feature maps of a fixed
//! convolutional network:
//! `sum_l 1/M_l sum_i || w_l (f^_l(I_r)_i - f^_l(I_gt)_i) ||^2`.
//!
//! Perceptual weight file (little-endian):
//!
//! ```text
//! magic     4 bytes "SPPN"
//! version   u32 = 1
//! id        u32 len + UTF-8
//! n_layers  u32, then per layer:
//!   name            u32 len + UTF-8
//!   stride          u32
//!   relu            u8 (0 or 1)
//!   out_c, in_c, k  u32 each
//!   kernel          out_c * in_c * k * k f64, index ((o * in_c + i) * k + ky) * k + kx
//!   channel_weight  out_c f64
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgbuf::{DepthImage, RgbImage};
use crate::par::{self, Execution};

pub const PERCEPTUAL_MAGIC: &[u8; 4] = b"SPPN";
pub const PERCEPTUAL_VERSION: u32 = 1;
/// Loss weight of the perceptual term.
pub const DEFAULT_LAMBDA: f64 = 0.05;
const NORM_EPS: f64 = 1e-10;
const DEFAULT_NET_SEED: u64 = 0x5eed_0008;

/// The default network, as shipped.
pub static DEFAULT_NET_BYTES: &[u8] = include_bytes!("../assets/perceptual_v1.sppn");

/// Mean over pixels of the per-pixel squared error averaged over channels,
/// and its gradient `2 (I_r - I_gt) / (3 H W)`.
pub fn color_loss(rendered: &RgbImage, target: &RgbImage) -> Result<(f64, RgbImage)> {
    rendered.check_same_shape(target)?;
    let n = (rendered.len() * 3) as f64;
    let mut sum = 0.0;
    let mut grad = RgbImage::new(rendered.width, rendered.height);
    for ((r, t), g) in rendered.pixels.iter().zip(&target.pixels).zip(grad.pixels.iter_mut()) {
        for c in 0..3 {
            let d = r[c] - t[c];
            sum += d * d;
            g[c] = 2.0 * d / n;
        }
    }
    Ok((sum / n, grad))
}

/// Mean squared depth error over pixels valid in the target (depth > 0).
pub fn depth_loss(rendered: &DepthImage, target: &DepthImage) -> Result<(f64, DepthImage)> {
    if (rendered.width, rendered.height) != (target.width, target.height) {
        return Err(Error::Shape(format!(
            "depth {}x{} vs {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let valid = target.values.iter().filter(|d| **d > 0.0).count().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = DepthImage::new(rendered.width, rendered.height);
    for ((r, t), g) in rendered.values.iter().zip(&target.values).zip(grad.values.iter_mut()) {
        if *t > 0.0 {
            let d = r - t;
            sum += d * d;
            *g = 2.0 * d / valid;
        }
    }
    Ok((sum / valid, grad))
}

/// One fixed convolution stage (valid padding, no bias).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub stride: usize,
    pub relu: bool,
    pub out_c: usize,
    pub in_c: usize,
    pub k: usize,
    pub kernel: Vec<f64>,
    pub channel_weight: Vec<f64>,
}

impl ConvLayer {
    fn out_size(&self, w: usize, h: usize) -> Option<(usize, usize)> {
        if w < self.k || h < self.k {
            return None;
        }
        Some(((w - self.k) / self.stride + 1, (h - self.k) / self.stride + 1))
    }

    #[inline]
    fn kidx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + i) * self.k + ky) * self.k + kx
    }

    /// `x` is channel-major `in_c x h x w`.
    fn forward(&self, x: &[f64], w: usize, h: usize, exec: Execution) -> (Vec<f64>, usize, usize) {
        let (ow, oh) = self.out_size(w, h).expect("size checked");
        let planes = par::map_range(exec, self.out_c, |o| {
            let mut plane = vec![0.0; ow * oh];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..self.in_c {
                        for ky in 0..self.k {
                            let row = (i * h + oy * self.stride + ky) * w + ox * self.stride;
                            for kx in 0..self.k {
                                acc += self.kernel[self.kidx(o, i, ky, kx)] * x[row + kx];
                            }
                        }
                    }
                    plane[oy * ow + ox] = if self.relu { acc.max(0.0) } else { acc };
                }
            }
            plane
        });
        (planes.concat(), ow, oh)
    }

    /// Gradient w.r.t. the input given the gradient w.r.t. the output `y`.
    fn backward(&self, x_dims: (usize, usize), y: &[f64], dy: &[f64], ow: usize, oh: usize) -> Vec<f64> {
        let (w, h) = x_dims;
        let mut dx = vec![0.0; self.in_c * w * h];
        for o in 0..self.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let j = (o * oh + oy) * ow + ox;
                    let mut g = dy[j];
                    if self.relu && y[j] <= 0.0 {
                        g = 0.0;
                    }
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..self.in_c {
                        for ky in 0..self.k {
                            let row = (i * h + oy * self.stride + ky) * w + ox * self.stride;
                            for kx in 0..self.k {
                                dx[row + kx] += g * self.kernel[self.kidx(o, i, ky, kx)];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fixed feature network for the perceptual loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualNet {
    pub id: String,
    pub layers: Vec<ConvLayer>,
}

struct Features {
    /// `maps[0]` is the network input; `maps[l + 1]` the output of layer `l`.
    maps: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
}

impl PerceptualNet {
    /// Random 3x3 stride-2 ReLU stages with 8/16/16 channels, all channel
    /// weights one. Weights are drawn from a fixed seed.
    pub fn generate_default() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_NET_SEED);
        let mut layers = Vec::new();
        let mut in_c = 3;
        for (l, out_c) in [8usize, 16, 16].into_iter().enumerate() {
            let k = 3;
            let bound = (6.0 / (in_c * k * k) as f64).sqrt();
            layers.push(ConvLayer {
                name: format!("conv{}", l + 1),
                stride: 2,
                relu: true,
                out_c,
                in_c,
                k,
                kernel: (0..out_c * in_c * k * k).map(|_| rng.gen_range(-bound..bound)).collect(),
                channel_weight: vec![1.0; out_c],
            });
            in_c = out_c;
        }
        PerceptualNet {
            id: "random-conv3x3-8-16-16-v1".into(),
            layers,
        }
    }

    /// The shipped default network.
    pub fn default_net() -> Self {
        Self::from_bytes(DEFAULT_NET_BYTES).expect("embedded perceptual weights are valid")
    }

    /// Identifier plus the SHA-256 of the serialized weights.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("{}:{hex}", self.id)
    }

    /// Input pixels seen by one output pixel of the last layer.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.layers {
            rf += (l.k - 1) * jump;
            jump *= l.stride;
        }
        rf
    }

    fn validate(&self) -> Result<()> {
        let mut in_c = 3;
        for l in &self.layers {
            if l.in_c != in_c || l.k == 0 || l.stride == 0 {
                return Err(Error::Format(format!("layer {} does not chain", l.name)));
            }
            if l.kernel.len() != l.out_c * l.in_c * l.k * l.k || l.channel_weight.len() != l.out_c {
                return Err(Error::Format(format!("layer {} has wrong tensor sizes", l.name)));
            }
            if l.channel_weight.iter().any(|w| *w < 0.0 || !w.is_finite()) || l.kernel.iter().any(|w| !w.is_finite()) {
                return Err(Error::Format(format!("layer {} has invalid weights", l.name)));
            }
            in_c = l.out_c;
        }
        if self.layers.is_empty() {
            return Err(Error::Format("perceptual net has no layers".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(PERCEPTUAL_MAGIC);
        out.write_u32::<LittleEndian>(PERCEPTUAL_VERSION).unwrap();
        put_str(&mut out, &self.id);
        out.write_u32::<LittleEndian>(self.layers.len() as u32).unwrap();
        for l in &self.layers {
            put_str(&mut out, &l.name);
            out.write_u32::<LittleEndian>(l.stride as u32).unwrap();
            out.push(u8::from(l.relu));
            for v in [l.out_c, l.in_c, l.k] {
                out.write_u32::<LittleEndian>(v as u32).unwrap();
            }
            for v in l.kernel.iter().chain(&l.channel_weight) {
                out.write_f64::<LittleEndian>(*v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let trunc = |_| Error::Format("truncated perceptual weight file".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != PERCEPTUAL_MAGIC {
            return Err(Error::Format("not a perceptual weight file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != PERCEPTUAL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: PERCEPTUAL_VERSION,
            });
        }
        let remaining = |r: &Cursor<&[u8]>| bytes.len() as u64 - r.position();
        let get_str = |r: &mut Cursor<&[u8]>| -> Result<String> {
            let n = r.read_u32::<LittleEndian>().map_err(trunc)? as u64;
            if n > remaining(r) {
                return Err(Error::Format("truncated perceptual weight file".into()));
            }
            let mut buf = vec![0u8; n as usize];
            r.read_exact(&mut buf).map_err(trunc)?;
            String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 string".into()))
        };
        let id = get_str(&mut r)?;
        let n_layers = r.read_u32::<LittleEndian>().map_err(trunc)?;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let name = get_str(&mut r)?;
            let stride = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let relu = match r.read_u8().map_err(trunc)? {
                0 => false,
                1 => true,
                v => return Err(Error::Format(format!("bad relu flag {v}"))),
            };
            let out_c = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let in_c = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let k = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let count = out_c * in_c * k * k + out_c;
            if (count as u64) * 8 > remaining(&r) {
                return Err(Error::Format("truncated perceptual weight file".into()));
            }
            let mut data = vec![0.0; count];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(trunc)?;
            let channel_weight = data.split_off(out_c * in_c * k * k);
            layers.push(ConvLayer {
                name,
                stride,
                relu,
                out_c,
                in_c,
                k,
                kernel: data,
                channel_weight,
            });
        }
        if remaining(&r) != 0 {
            return Err(Error::Format("trailing bytes after perceptual weights".into()));
        }
        let net = PerceptualNet { id, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    fn check_size(&self, img: &RgbImage) -> Result<()> {
        let (mut w, mut h) = (img.width, img.height);
        for l in &self.layers {
            match l.out_size(w, h) {
                Some((ow, oh)) => (w, h) = (ow, oh),
                None => {
                    return Err(Error::ImageTooSmall {
                        width: img.width,
                        height: img.height,
                        field: self.receptive_field(),
                    })
                }
            }
        }
        Ok(())
    }

    fn features(&self, img: &RgbImage, exec: Execution) -> Features {
        let (w, h) = (img.width, img.height);
        let mut x = vec![0.0; 3 * w * h];
        for (p, px) in img.pixels.iter().enumerate() {
            for c in 0..3 {
                x[c * w * h + p] = 2.0 * px[c] - 1.0;
            }
        }
        let mut maps = vec![x];
        let mut dims = vec![(w, h)];
        for l in &self.layers {
            let (cw, ch) = *dims.last().expect("input");
            let (y, ow, oh) = l.forward(maps.last().expect("input"), cw, ch, exec);
            maps.push(y);
            dims.push((ow, oh));
        }
        Features { maps, dims }
    }

    /// Which feature activations are positive; the loss is smooth while this
    /// pattern is unchanged.
    pub fn activation_pattern(&self, img: &RgbImage) -> Result<Vec<bool>> {
        self.check_size(img)?;
        let f = self.features(img, Execution::Sequential);
        Ok(f.maps[1..].iter().flatten().map(|v| *v > 0.0).collect())
    }

    /// Perceptual distance and its gradient w.r.t. `rendered`.
    pub fn loss(&self, rendered: &RgbImage, target: &RgbImage, exec: Execution) -> Result<(f64, RgbImage)> {
        rendered.check_same_shape(target)?;
        self.check_size(rendered)?;
        let fr = self.features(rendered, exec);
        let ft = self.features(target, exec);
        let mut total = 0.0;
        let mut d_next: Option<Vec<f64>> = None;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (w, h) = fr.dims[l + 1];
            let m = (w * h) as f64;
            let (a, b) = (&fr.maps[l + 1], &ft.maps[l + 1]);
            let mut d = d_next.take().unwrap_or_else(|| vec![0.0; a.len()]);
            let plane = w * h;
            let mut layer_sum = 0.0;
            for p in 0..plane {
                let norm = |f: &Vec<f64>| (0..layer.out_c).map(|c| f[c * plane + p].powi(2)).sum::<f64>().sqrt();
                let (na, nb) = (norm(a), norm(b));
                let mut g = vec![0.0; layer.out_c];
                for c in 0..layer.out_c {
                    let diff = a[c * plane + p] / (na + NORM_EPS) - b[c * plane + p] / (nb + NORM_EPS);
                    let wc = layer.channel_weight[c];
                    layer_sum += wc * wc * diff * diff;
                    g[c] = 2.0 * wc * wc * diff / m;
                }
                // through f / (|f| + eps)
                let fg: f64 = (0..layer.out_c).map(|c| a[c * plane + p] * g[c]).sum();
                let denom = na + NORM_EPS;
                for c in 0..layer.out_c {
                    let mut v = g[c] / denom;
                    if na > 0.0 {
                        v -= a[c * plane + p] * fg / (na * denom * denom);
                    }
                    d[c * plane + p] += v;
                }
            }
            total += layer_sum / m;
            d_next = Some(layer.backward(fr.dims[l], a, &d, w, h));
        }
        let dx = d_next.expect("at least one layer");
        let (w, h) = (rendered.width, rendered.height);
        let mut grad = RgbImage::new(w, h);
        for (p, g) in grad.pixels.iter_mut().enumerate() {
            for c in 0..3 {
                g[c] = 2.0 * dx[c * w * h + p];
            }
        }
        Ok((total, grad))
    }
}

/// Components and gradient of `L = L_color + lambda * L_lpips`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub color: f64,
    pub lpips: f64,
    pub total: f64,
    pub grad: RgbImage,
}

pub fn total_loss(
    rendered: &RgbImage,
    target: &RgbImage,
    net: &PerceptualNet,
    lambda: f64,
    exec: Execution,
) -> Result<LossOutput> {
    let (color, gc) = color_loss(rendered, target)?;
    let (lpips, gl) = if lambda != 0.0 {
        net.loss(rendered, target, exec)?
    } else {
        net.check_size(rendered)?;
        (0.0, RgbImage::new(rendered.width, rendered.height))
    };
    let mut grad = gc;
    for (g, l) in grad.pixels.iter_mut().zip(&gl.pixels) {
        for c in 0..3 {
            g[c] += lambda * l[c];
        }
    }
    Ok(LossOutput {
        color,
        lpips,
        total: color + lambda * lpips,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
        RgbImage {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
        }
    }

    fn toy_net(rng: &mut impl Rng) -> PerceptualNet {
        PerceptualNet {
            id: "toy".into(),
            layers: vec![ConvLayer {
                name: "c".into(),
                stride: 2,
                relu: true,
                out_c: 4,
                in_c: 3,
                k: 3,
                kernel: (0..108).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                channel_weight: (0..4).map(|_| rng.gen_range(0.2..1.5)).collect(),
            }],
        }
    }

    /// Direct evaluation of the perceptual formula for a one-layer net.
    fn direct_one_layer(net: &PerceptualNet, a: &RgbImage, b: &RgbImage) -> f64 {
        let l = &net.layers[0];
        let (ow, oh) = ((a.width - l.k) / l.stride + 1, (a.height - l.k) / l.stride + 1);
        let feat = |img: &RgbImage, o: usize, x: usize, y: usize| {
            let mut s = 0.0;
            for i in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let v = 2.0 * img.get(x * 2 + kx, y * 2 + ky)[i] - 1.0;
                        s += l.kernel[((o * 3 + i) * 3 + ky) * 3 + kx] * v;
                    }
                }
            }
            s.max(0.0)
        };
        let mut total = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let fa: Vec<f64> = (0..l.out_c).map(|o| feat(a, o, x, y)).collect();
                let fb: Vec<f64> = (0..l.out_c).map(|o| feat(b, o, x, y)).collect();
                let na = fa.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                let nb = fb.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                for o in 0..l.out_c {
                    let d = l.channel_weight[o] * (fa[o] / na - fb[o] / nb);
                    total += d * d;
                }
            }
        }
        total / (ow * oh) as f64
    }

    #[test]
    fn color_loss_cases() {
        let a = RgbImage::filled(4, 3, [0.2, 0.4, 0.6]);
        let (l, g) = color_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.pixels.iter().flatten().all(|v| *v == 0.0));
        let b = RgbImage::filled(4, 3, [0.7, 0.9, 1.1]);
        assert!((color_loss(&a, &b).unwrap().0 - 0.25).abs() < 1e-15);
        assert!(color_loss(&a, &RgbImage::new(3, 3)).is_err());
    }

    #[test]
    fn color_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 5, 4);
        let b = random_image(&mut rng, 5, 4);
        let (_, g) = color_loss(&a, &b).unwrap();
        let h = 1e-5;
        for p in 0..a.len() {
            for c in 0..3 {
                let mut ap = a.clone();
                ap.pixels[p][c] += h;
                let mut am = a.clone();
                am.pixels[p][c] -= h;
                let fd = (color_loss(&ap, &b).unwrap().0 - color_loss(&am, &b).unwrap().0) / (2.0 * h);
                assert!((fd - g.pixels[p][c]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn toy_net_matches_direct_formula_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = toy_net(&mut rng);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let (l, g) = net.loss(&a, &b, Execution::Sequential).unwrap();
        assert!((l - direct_one_layer(&net, &a, &b)).abs() <= 1e-10);
        let h = 1e-5;
        for p in 0..a.len() {
            for c in 0..3 {
                let mut ap = a.clone();
                ap.pixels[p][c] += h;
                let mut am = a.clone();
                am.pixels[p][c] -= h;
                let lp = net.loss(&ap, &b, Execution::Sequential).unwrap().0;
                let lm = net.loss(&am, &b, Execution::Sequential).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g.pixels[p][c]).abs() <= 1e-6, "{fd} vs {}", g.pixels[p][c]);
            }
        }
    }

    #[test]
    fn identical_images_have_zero_perceptual_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PerceptualNet::default_net();
        let a = random_image(&mut rng, 20, 16);
        let (l, g) = net.loss(&a, &a, Execution::Sequential).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.pixels.iter().flatten().all(|v| *v == 0.0));
        let b = random_image(&mut rng, 20, 16);
        assert!(net.loss(&a, &b, Execution::Sequential).unwrap().0 > 0.0);
    }

    #[test]
    fn receptive_field_guard() {
        let net = PerceptualNet::default_net();
        assert_eq!(net.receptive_field(), 15);
        let small = RgbImage::new(14, 20);
        assert!(matches!(
            net.loss(&small, &small, Execution::Sequential),
            Err(Error::ImageTooSmall { field: 15, .. })
        ));
        assert!(net.loss(&RgbImage::new(15, 15), &RgbImage::new(15, 15), Execution::Sequential).is_ok());
    }

    #[test]
    fn embedded_asset_matches_generator() {
        assert_eq!(PerceptualNet::generate_default().to_bytes(), DEFAULT_NET_BYTES);
    }

    #[test]
    fn weight_file_round_trip_and_errors() {
        let net = PerceptualNet::generate_default();
        let bytes = net.to_bytes();
        assert_eq!(PerceptualNet::from_bytes(&bytes).unwrap(), net);
        assert!(PerceptualNet::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PerceptualNet::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(PerceptualNet::from_bytes(&v2), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn total_is_exact_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PerceptualNet::default_net();
        let a = random_image(&mut rng, 24, 20);
        let b = random_image(&mut rng, 24, 20);
        let out = total_loss(&a, &b, &net, DEFAULT_LAMBDA, Execution::Sequential).unwrap();
        let (c, gc) = color_loss(&a, &b).unwrap();
        let (l, gl) = net.loss(&a, &b, Execution::Sequential).unwrap();
        assert_eq!(out.total, c + 0.05 * l);
        for p in 0..a.len() {
            for ch in 0..3 {
                assert_eq!(out.grad.pixels[p][ch], gc.pixels[p][ch] + 0.05 * gl.pixels[p][ch]);
            }
        }
        let zero = total_loss(&a, &b, &net, 0.0, Execution::Sequential).unwrap();
        assert_eq!(zero.total, c);
        assert_eq!(zero.grad, gc);
        assert_eq!(0.2 + DEFAULT_LAMBDA * 1.0, 0.25);
    }

    #[test]
    fn depth_loss_ignores_invalid_pixels() {
        let mut t = DepthImage::new(2, 1);
        t.values = vec![2.0, 0.0];
        let mut r = DepthImage::new(2, 1);
        r.values = vec![1.0, 5.0];
        let (l, g) = depth_loss(&r, &t).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.values, vec![-2.0, 0.0]);
    }
}
