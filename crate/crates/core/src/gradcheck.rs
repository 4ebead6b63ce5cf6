//! Central finite-difference checks of the analytic backward passes.
//!
//! A sample is compared only when the forward pass is structurally identical
//! at `theta - h`, `theta` and `theta + h`: same culled set, same per-pixel
//! contributor lists, same alpha and color clamp pattern. Samples that cross
//! one of those discontinuities are counted as skipped, never as failures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{Camera, PointCloud};
use crate::encoder::{ForwardState, Model, ModelConfig};
use crate::error::Result;
use crate::gaussian::{
    activate_free_backward, logit, raw_dim, GaussianConfig, GaussianGrad, GaussianSet, RawGaussian, MIN_SCALE,
};
use crate::imgbuf::{DepthImage, RgbImage};
use crate::linalg::Vec3;
use crate::losses::{color_loss, total_loss, PerceptualNet, DEFAULT_LAMBDA};
use crate::nn::Linear;
use crate::par::Execution;
use crate::render::{rasterize_backward, rasterize_forward, RenderOptions, RenderOutput};
use crate::synthetic::{activate_free_set, orbit_pose, random_raw_gaussians, test_camera};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Minimum depth separation between any two Gaussians of a config.
pub const MIN_DEPTH_GAP: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst case over one parameter class.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ClassReport {
    pub name: String,
    pub max_rel_error: f64,
    pub samples: usize,
    pub skipped: usize,
    /// Configs with at least one compared, non-vanishing sample.
    pub configs: usize,
}

impl ClassReport {
    pub fn new(name: &str) -> Self {
        ClassReport {
            name: name.to_string(),
            ..Default::default()
        }
    }

    /// Record one compared sample.
    pub fn record(&mut self, analytic: f64, numeric: f64) -> f64 {
        let e = rel_error(analytic, numeric);
        self.max_rel_error = self.max_rel_error.max(e);
        self.samples += 1;
        e
    }

    pub fn passed(&self, tolerance: f64, min_configs: usize) -> bool {
        self.max_rel_error <= tolerance && self.configs >= min_configs
    }
}

/// Reports for every parameter class of one check.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub classes: Vec<ClassReport>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64, min_configs: usize) -> bool {
        self.classes.iter().all(|c| c.passed(tolerance, min_configs))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.classes.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: GradcheckReport) {
        self.classes.extend(other.classes);
    }
}

/// Structural fingerprint of a forward pass; equal fingerprints mean the
/// rendered function is smooth between the two parameter values.
pub fn render_signature(out: &RenderOutput, opts: &RenderOptions) -> Vec<u64> {
    let mut sig = Vec::with_capacity(out.contributors.len() + out.pixel_ranges.len() + out.projected.len());
    for p in &out.projected {
        let mut bits = 0u64;
        for (c, v) in p.rgb_unclamped.iter().enumerate() {
            if *v <= 0.0 || *v >= 1.0 {
                bits |= 1 << c;
            }
        }
        sig.push(((p.index as u64) << 8) | bits);
    }
    for r in &out.pixel_ranges {
        sig.push(u64::from(r[1]));
        for c in &out.contributors[r[0] as usize..(r[0] + r[1]) as usize] {
            let clamped = u64::from(c.alpha >= opts.alpha_max);
            sig.push(((out.projected[c.gaussian as usize].index as u64) << 1) | clamped);
        }
    }
    sig
}

const RENDER_CLASSES: [&str; 5] = ["mean", "rotation", "log_scale", "opacity_logit", "sh"];

fn render_class(j: usize) -> usize {
    match j {
        0..=2 => 0,
        3..=6 => 1,
        7..=9 => 2,
        10 => 3,
        _ => 4,
    }
}

/// Smallest pairwise gap between camera-space depths.
fn min_depth_gap(raw: &[RawGaussian], camera: &Camera) -> f64 {
    let z: Vec<f64> = raw
        .iter()
        .map(|r| camera.pose.world_to_camera(&Vec3(r.offset)).z())
        .collect();
    let mut gap = f64::INFINITY;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            gap = gap.min((z[i] - z[j]).abs());
        }
    }
    gap
}

struct RenderProbe {
    camera: Camera,
    opts: RenderOptions,
    sh_degree: usize,
    w_image: RgbImage,
    w_depth: DepthImage,
}

impl RenderProbe {
    fn forward(&self, raw: &[RawGaussian]) -> Result<(f64, RenderOutput)> {
        let set = activate_free_set(raw, self.sh_degree)?;
        let out = rasterize_forward(&set, &self.camera, &self.opts)?;
        let mut l = 0.0;
        for (p, w) in out.image.pixels.iter().zip(&self.w_image.pixels) {
            l += p[0] * w[0] + p[1] * w[1] + p[2] * w[2];
        }
        for (d, w) in out.depth.values.iter().zip(&self.w_depth.values) {
            l += d * w;
        }
        Ok((l, out))
    }
}

/// Rasterizer gradients for every raw Gaussian parameter class, against
/// the linear functional `sum W . image + sum w . depth` with random weights.
/// Runs configs until every class has `min_configs` informative configs or
/// `max_configs` have been tried.
pub fn check_render(seed: u64, min_configs: usize, max_configs: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<ClassReport> = RENDER_CLASSES.iter().map(|n| ClassReport::new(n)).collect();
    let sh_degree = 1;
    let dim = raw_dim(sh_degree)?;
    let cfg = GaussianConfig {
        sh_degree,
        ..Default::default()
    };
    let (width, height) = (20, 18);
    let opts = RenderOptions::default().with_exec(Execution::Sequential);

    for _ in 0..max_configs {
        if classes.iter().all(|c| c.configs >= min_configs) {
            break;
        }
        let mut camera = test_camera(width, height);
        camera.pose = orbit_pose(Vec3::ZERO, 2.5, rng.gen_range(-0.6..0.6), rng.gen_range(-0.5..0.5));
        let n = rng.gen_range(2..=5);
        let raw = random_raw_gaussians(&mut rng, n, &camera, sh_degree);
        if min_depth_gap(&raw, &camera) < MIN_DEPTH_GAP {
            continue;
        }
        let probe = RenderProbe {
            camera,
            opts,
            sh_degree,
            w_image: RgbImage {
                width,
                height,
                pixels: (0..width * height)
                    .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0)))
                    .collect(),
            },
            w_depth: DepthImage {
                width,
                height,
                values: (0..width * height).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            },
        };
        let (_, base) = probe.forward(&raw)?;
        let base_sig = render_signature(&base, &opts);
        let set = activate_free_set(&raw, sh_degree)?;
        let grads = rasterize_backward(&base, &probe.w_image, Some(&probe.w_depth), &set, &opts)?;

        let mut informative = [false; 5];
        for (i, r) in raw.iter().enumerate() {
            let g_raw = activate_free_backward(r, &grads[i], &cfg);
            let mut analytic = vec![0.0; dim];
            g_raw.write_slice(&mut analytic, sh_degree);
            let mut flat = vec![0.0; dim];
            r.write_slice(&mut flat, sh_degree);
            for j in 0..dim {
                let class = render_class(j);
                let eval = |delta: f64| -> Result<(f64, Vec<u64>)> {
                    let mut f = flat.clone();
                    f[j] += delta;
                    let mut perturbed = raw.clone();
                    perturbed[i] = RawGaussian::from_slice(&f, sh_degree)?;
                    let (l, out) = probe.forward(&perturbed)?;
                    Ok((l, render_signature(&out, &opts)))
                };
                let (lp, sp) = eval(STEP)?;
                let (lm, sm) = eval(-STEP)?;
                if sp != base_sig || sm != base_sig {
                    classes[class].skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * STEP);
                classes[class].record(analytic[j], numeric);
                if analytic[j].abs().max(numeric.abs()) > 1e-8 {
                    informative[class] = true;
                }
            }
        }
        for (c, hit) in classes.iter_mut().zip(informative) {
            c.configs += usize::from(hit);
        }
    }
    for c in classes.iter_mut() {
        c.name = format!("render.{}", c.name);
    }
    Ok(GradcheckReport { classes })
}

fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u64> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 64 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().expect("pushed") |= 1 << (i % 64);
        }
    }
    out
}

fn random_image(rng: &mut impl Rng, width: usize, height: usize) -> RgbImage {
    RgbImage {
        width,
        height,
        pixels: (0..width * height).map(|_| [0; 3].map(|_| rng.gen_range(0.0..1.0))).collect(),
    }
}

/// Image-space gradients of the color, perceptual and total losses. The
/// perceptual terms are compared only where no feature activation changes sign.
pub fn check_losses(seed: u64, min_configs: usize, max_configs: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = PerceptualNet::default_net();
    let mut classes: Vec<ClassReport> = ["loss.color", "loss.lpips", "loss.total"]
        .iter()
        .map(|n| ClassReport::new(n))
        .collect();
    for _ in 0..max_configs {
        if classes.iter().all(|c| c.configs >= min_configs) {
            break;
        }
        let (w, h) = (rng.gen_range(15..=24), rng.gen_range(15..=20));
        let rendered = random_image(&mut rng, w, h);
        let target = random_image(&mut rng, w, h);
        let base_pattern = net.activation_pattern(&rendered)?;
        let eval = |c: usize, img: &RgbImage| -> Result<(f64, RgbImage)> {
            match c {
                0 => color_loss(img, &target),
                1 => net.loss(img, &target, Execution::Sequential),
                _ => {
                    let out = total_loss(img, &target, &net, DEFAULT_LAMBDA, Execution::Sequential)?;
                    Ok((out.total, out.grad))
                }
            }
        };
        for (c, class) in classes.iter_mut().enumerate() {
            let (_, grad) = eval(c, &rendered)?;
            let mut informative = false;
            for _ in 0..12 {
                let p = rng.gen_range(0..w * h);
                let ch = rng.gen_range(0..3);
                let mut plus = rendered.clone();
                plus.pixels[p][ch] += STEP;
                let mut minus = rendered.clone();
                minus.pixels[p][ch] -= STEP;
                if c > 0
                    && (net.activation_pattern(&plus)? != base_pattern
                        || net.activation_pattern(&minus)? != base_pattern)
                {
                    class.skipped += 1;
                    continue;
                }
                let numeric = (eval(c, &plus)?.0 - eval(c, &minus)?.0) / (2.0 * STEP);
                class.record(grad.pixels[p][ch], numeric);
                informative |= grad.pixels[p][ch].abs().max(numeric.abs()) > 1e-8;
            }
            class.configs += usize::from(informative);
        }
    }
    Ok(GradcheckReport { classes })
}

/// Structural fingerprint of a model forward pass: ReLU patterns, neighbor
/// lists, max-pool winners and scale clamps of the predicted Gaussians.
pub fn encoder_signature(model: &Model, state: &ForwardState, set: &GaussianSet) -> Vec<u64> {
    let mut sig = Vec::new();
    let caches = [
        (&model.mlp1, &state.encoder.mlp1),
        (&model.mlp2, &state.encoder.mlp2),
        (&model.fusion, &state.fusion.mlp),
        (&model.head, &state.head),
    ];
    for (mlp, cache) in caches {
        for (l, relu) in mlp.relu.iter().enumerate() {
            if *relu {
                sig.extend(pack_bits(cache.acts[l + 1].iter().map(|v| *v > 0.0)));
            }
        }
    }
    for lists in [&state.encoder.neighbors, &state.fusion.neighbors] {
        for nb in lists {
            sig.push(nb.len() as u64);
            sig.extend(nb.iter().map(|&j| u64::from(j)));
        }
    }
    sig.extend(state.encoder.argmax.iter().map(|&j| u64::from(j)));
    sig.extend(state.fusion.argmax.iter().map(|&j| u64::from(j)));
    let max_scale = model.config.gaussian.max_scale;
    sig.extend(pack_bits(
        set.gaussians
            .iter()
            .flat_map(|g| g.scale.0)
            .map(|s| s <= MIN_SCALE || s >= max_scale),
    ));
    sig
}

fn toy_model_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 16,
        hidden_dim: 8,
        mid_dim: 12,
        head_hidden: 8,
        gaussians_per_point: 2,
        gaussian: GaussianConfig {
            sh_degree: 1,
            ..Default::default()
        },
        init_scale: 0.15,
        ..Default::default()
    }
}

/// Model with a random (instead of zero) last head layer, so that every
/// weight receives gradient.
fn toy_model(config: ModelConfig, rng: &mut impl Rng) -> Result<Model> {
    let mut model = Model::new(config, rng.gen())?;
    let last = model.head.layers.last_mut().expect("head has layers");
    let bias = last.b.clone();
    *last = Linear::xavier(last.fan_in(), last.fan_out(), rng);
    last.w.mapv_inplace(|v| 0.5 * v);
    last.b = bias;
    Ok(model)
}

fn toy_cloud(rng: &mut impl Rng, n: usize, center: Vec3, extent: f64) -> PointCloud {
    let mut cloud = PointCloud::default();
    for i in 0..n {
        let p = center
            + Vec3::new(
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
            );
        cloud.push(p, [0; 3].map(|_| rng.gen_range(0.0..1.0)), u32::from(i % 2 == 1), [i as u32, 0]);
    }
    cloud
}

/// Indices `0..len` to probe: all of them when short, else `count` random ones.
fn probe_indices(rng: &mut impl Rng, len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, count).into_vec()
    }
}

const WEIGHT_CLASSES: [&str; 4] = ["mlp1", "mlp2", "fusion", "head"];

fn weight_class(name: &str) -> usize {
    if name.starts_with("encoder.mlp1") {
        0
    } else if name.starts_with("encoder.mlp2") {
        1
    } else if name.starts_with("fusion") {
        2
    } else {
        3
    }
}

fn flat_params(model: &Model) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    model.for_each_param(&mut |n, v, _| out.push((n, v.to_vec())));
    out
}

fn perturb(model: &Model, tensor: usize, index: usize, delta: f64) -> Model {
    let mut m = model.clone();
    let mut t = 0;
    m.for_each_param_mut(&mut |_, v| {
        if t == tensor {
            v[index] += delta;
        }
        t += 1;
    });
    m
}

/// Compare `analytic` with the central difference of `eval`, skipping the
/// sample if the signature changes. Returns whether the sample was informative.
fn compare(
    class: &mut ClassReport,
    analytic: f64,
    base_sig: &[u64],
    eval: &dyn Fn(f64) -> Result<(f64, Vec<u64>)>,
) -> Result<bool> {
    let (lp, sp) = eval(STEP)?;
    let (lm, sm) = eval(-STEP)?;
    if sp != base_sig || sm != base_sig {
        class.skipped += 1;
        return Ok(false);
    }
    let numeric = (lp - lm) / (2.0 * STEP);
    class.record(analytic, numeric);
    Ok(analytic.abs().max(numeric.abs()) > 1e-8)
}

/// Linear functional of activated Gaussians in the coordinates of
/// [`GaussianGrad`]: mean, unit rotation, log scale, opacity logit, SH.
fn gaussian_functional(set: &GaussianSet, weights: &[GaussianGrad]) -> f64 {
    let mut l = 0.0;
    for (g, w) in set.gaussians.iter().zip(weights) {
        let q = g.rotation.to_array();
        l += g.mean.dot(&w.mean);
        l += (0..4).map(|k| q[k] * w.rotation[k]).sum::<f64>();
        l += (0..3).map(|k| g.scale[k].ln() * w.log_scale[k]).sum::<f64>();
        l += logit(g.opacity) * w.opacity_logit;
        l += g.sh.iter().flatten().zip(w.sh.iter().flatten()).map(|(a, b)| a * b).sum::<f64>();
    }
    l
}

fn random_vec3(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_gaussian_weights(rng: &mut impl Rng, n: usize, sh_degree: usize) -> Vec<GaussianGrad> {
    let coeffs = (sh_degree + 1) * (sh_degree + 1);
    (0..n)
        .map(|_| {
            let mut w = GaussianGrad {
                mean: random_vec3(rng),
                rotation: [0; 4].map(|_| rng.gen_range(-1.0..1.0)),
                log_scale: random_vec3(rng),
                opacity_logit: rng.gen_range(-1.0..1.0),
                ..Default::default()
            };
            for c in w.sh.iter_mut().take(coeffs) {
                *c = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
            }
            w
        })
        .collect()
}

/// Encoder, fusion and head gradients (weights and point inputs) against a
/// random linear functional of the predicted Gaussians, on 32-point clouds.
pub fn check_encoder(seed: u64, min_configs: usize, max_configs: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&str> = WEIGHT_CLASSES.iter().copied().chain(["positions", "colors"]).collect();
    let mut classes: Vec<ClassReport> = names.iter().map(|n| ClassReport::new(n)).collect();
    let config = toy_model_config();
    let exec = Execution::Sequential;
    for _ in 0..max_configs {
        if classes.iter().all(|c| c.configs >= min_configs) {
            break;
        }
        let model = toy_model(config, &mut rng)?;
        let cloud = toy_cloud(&mut rng, 32, Vec3::new(0.0, 0.0, 2.0), 0.6);
        let (set, state) = model.forward(&cloud, exec)?;
        let weights = random_gaussian_weights(&mut rng, set.len(), config.gaussian.sh_degree);
        let base_sig = encoder_signature(&model, &state, &set);
        let (grad, inputs) = model.backward(&state, &weights)?;
        let eval_model = |m: &Model, c: &PointCloud| -> Result<(f64, Vec<u64>)> {
            let (set, state) = m.forward(c, exec)?;
            Ok((gaussian_functional(&set, &weights), encoder_signature(m, &state, &set)))
        };
        let mut informative = vec![false; names.len()];
        for (t, (name, g)) in flat_params(&grad).iter().enumerate() {
            let c = weight_class(name);
            for i in probe_indices(&mut rng, g.len(), 4) {
                let eval = |d: f64| eval_model(&perturb(&model, t, i, d), &cloud);
                informative[c] |= compare(&mut classes[c], g[i], &base_sig, &eval)?;
            }
        }
        for i in probe_indices(&mut rng, cloud.len(), 8) {
            let a = rng.gen_range(0..3);
            let eval = |d: f64| {
                let mut c = cloud.clone();
                c.positions[i].0[a] += d;
                eval_model(&model, &c)
            };
            informative[4] |= compare(&mut classes[4], inputs.positions[i][a], &base_sig, &eval)?;
            let eval = |d: f64| {
                let mut c = cloud.clone();
                c.colors[i][a] += d;
                eval_model(&model, &c)
            };
            informative[5] |= compare(&mut classes[5], inputs.colors[i][a], &base_sig, &eval)?;
        }
        for (c, hit) in classes.iter_mut().zip(informative) {
            c.configs += usize::from(hit);
        }
    }
    for c in classes.iter_mut() {
        c.name = format!("encoder.{}", c.name);
    }
    Ok(GradcheckReport { classes })
}

/// Smallest camera-depth gap between any two activated Gaussians.
fn set_depth_gap(set: &GaussianSet, camera: &Camera) -> f64 {
    let mut z: Vec<f64> = set
        .gaussians
        .iter()
        .map(|g| camera.pose.world_to_camera(&g.mean).z())
        .collect();
    z.sort_by(f64::total_cmp);
    z.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Whole chain on 16-point clouds: model, rasterizer for two views, total
/// loss against fixed target images, back to every weight tensor.
pub fn check_end_to_end(seed: u64, min_configs: usize, max_configs: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<ClassReport> = WEIGHT_CLASSES.iter().map(|n| ClassReport::new(n)).collect();
    let config = ModelConfig {
        gaussians_per_point: 1,
        ..toy_model_config()
    };
    let net = PerceptualNet::default_net();
    let opts = RenderOptions::default().with_exec(Execution::Sequential);
    let exec = Execution::Sequential;
    let (width, height) = (20, 16);
    for _ in 0..max_configs {
        if classes.iter().all(|c| c.configs >= min_configs) {
            break;
        }
        let model = toy_model(config, &mut rng)?;
        let cloud = toy_cloud(&mut rng, 16, Vec3::ZERO, 0.5);
        let cameras: Vec<Camera> = (0..2)
            .map(|_| {
                let mut cam = test_camera(width, height);
                cam.pose = orbit_pose(Vec3::ZERO, 2.2, rng.gen_range(-0.5..0.5), rng.gen_range(-0.4..0.4));
                cam
            })
            .collect();
        let targets: Vec<RgbImage> = (0..2).map(|_| random_image(&mut rng, width, height)).collect();
        let (set, _) = model.forward(&cloud, exec)?;
        if cameras.iter().any(|c| set_depth_gap(&set, c) < MIN_DEPTH_GAP) {
            continue;
        }
        let eval_model = |m: &Model, with_grad: bool| -> Result<(f64, Vec<u64>, Option<Model>)> {
            let (set, state) = m.forward(&cloud, exec)?;
            let mut sig = encoder_signature(m, &state, &set);
            let mut l = 0.0;
            let mut d_gauss = vec![GaussianGrad::default(); set.len()];
            for (cam, target) in cameras.iter().zip(&targets) {
                let out = rasterize_forward(&set, cam, &opts)?;
                sig.extend(render_signature(&out, &opts));
                sig.extend(pack_bits(net.activation_pattern(&out.image)?.into_iter()));
                let loss = total_loss(&out.image, target, &net, DEFAULT_LAMBDA, exec)?;
                l += loss.total;
                if with_grad {
                    let grads = rasterize_backward(&out, &loss.grad, None, &set, &opts)?;
                    for (acc, g) in d_gauss.iter_mut().zip(&grads) {
                        acc.add_assign(g);
                    }
                }
            }
            let grad = if with_grad {
                Some(m.backward(&state, &d_gauss)?.0)
            } else {
                None
            };
            Ok((l, sig, grad))
        };
        let (_, base_sig, grad) = eval_model(&model, true)?;
        let mut informative = [false; 4];
        for (t, (name, g)) in flat_params(&grad.expect("requested")).iter().enumerate() {
            let c = weight_class(name);
            for i in probe_indices(&mut rng, g.len(), 3) {
                let eval = |d: f64| eval_model(&perturb(&model, t, i, d), false).map(|(l, s, _)| (l, s));
                informative[c] |= compare(&mut classes[c], g[i], &base_sig, &eval)?;
            }
        }
        for (c, hit) in classes.iter_mut().zip(informative) {
            c.configs += usize::from(hit);
        }
    }
    for c in classes.iter_mut() {
        c.name = format!("end_to_end.{}", c.name);
    }
    Ok(GradcheckReport { classes })
}

/// Every suite: rasterizer, losses, encoder and the end-to-end chain.
pub fn check_all(seed: u64, min_configs: usize, max_configs: usize) -> Result<GradcheckReport> {
    let mut report = check_render(seed, min_configs, max_configs)?;
    report.extend(check_losses(seed, min_configs, max_configs)?);
    report.extend(check_encoder(seed, min_configs, max_configs)?);
    report.extend(check_end_to_end(seed, min_configs, max_configs)?);
    Ok(report)
}
