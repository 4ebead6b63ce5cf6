//! Pre-training loop, AdamW with a cosine-annealed learning rate, and the
//! overfit harness that optimizes Gaussians directly.
//!
//! Every random draw of step `s` comes from generators seeded by
//! `(seed, s, ...)`, so a run is reproducible from its config alone and does
//! not depend on how scenes are scheduled across threads.

use std::f64::consts::PI;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{back_project_view, rotate_augment, Camera, PointCloud, RgbdFrame};
use crate::encoder::{mask_points, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::gaussian::{activate_free_backward, GaussianConfig, GaussianGrad, GaussianSet, RawGaussian, SH_C0};
use crate::imgbuf::{psnr_u8, DepthImage, RgbImage};
use crate::losses::{depth_loss, total_loss, PerceptualNet, DEFAULT_LAMBDA};
use crate::nn::knn::KdTree;
use crate::par::{self, Execution};
use crate::render::{rasterize_backward, rasterize_forward, RenderOptions};
use crate::scene_io::{config_hash, save_checkpoint, write_color_png, Checkpoint, Scene, Tensor};
use crate::synthetic::activate_free_set;

/// Augmentation range of the rotations about the x and y axes.
pub const TILT_RANGE: f64 = PI / 64.0;
/// Augmentation range of the rotation about the z axis.
pub const YAW_RANGE: f64 = PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub views: usize,
    /// Frame-id gap between consecutive input views.
    pub frame_interval: u32,
    pub lambda: f64,
    /// Gaussians per point; overrides `model.gaussians_per_point`.
    pub k: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Stop after this many optimizer steps; also the schedule length.
    pub max_steps: Option<usize>,
    /// Weight of the optional depth term (0 disables it).
    pub depth_weight: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            batch_size: 4,
            mask_ratio: 0.5,
            views: 2,
            frame_interval: 5,
            lambda: DEFAULT_LAMBDA,
            k: 1,
            seed: 0,
            width: 320,
            height: 240,
            max_steps: None,
            depth_weight: 0.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("lr_min", self.lr_min),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::InvalidConfig("betas must be below 1".into()));
        }
        if self.lr_min > self.lr0 {
            return Err(Error::InvalidConfig("lr_min exceeds lr0".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda >= 0.0) || !(self.depth_weight >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay, lambda and depth_weight must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::MaskRatio(self.mask_ratio));
        }
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("width", self.width),
            ("height", self.height),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.views < 2 {
            return Err(Error::InvalidConfig("at least two views are required".into()));
        }
        if self.frame_interval == 0 {
            return Err(Error::InvalidConfig("frame_interval must be positive".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            gaussians_per_point: self.k,
            ..self.model
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn batches_per_epoch(&self, scenes: usize) -> usize {
        scenes.div_ceil(self.batch_size)
    }

    /// Optimizer steps of a run over `scenes` scenes.
    pub fn total_steps(&self, scenes: usize) -> usize {
        let full = self.epochs * self.batches_per_epoch(scenes);
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions::default()
    }
}

/// `lr_min + (lr0 - lr_min)(1 + cos(pi step / total)) / 2`; steps past the
/// end give `lr_min`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, lr_min: f64) -> f64 {
    if step >= total_steps {
        return lr_min;
    }
    if step == 0 {
        return lr0;
    }
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * step as f64 / total_steps as f64).cos())
}

/// Seed derived from a base seed and a list of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamHyper {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// One AdamW update of a tensor; `t` is the 1-based update count.
pub fn adamw_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, hp: &AdamHyper) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..theta.len() {
        theta[i] *= 1.0 - lr * hp.weight_decay;
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Model weights, AdamW moments and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    /// First and second moments, one vector per parameter tensor in
    /// [`Model::for_each_param`] order.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub seed: u64,
}

fn flat_params(model: &Model) -> Vec<(String, Vec<f64>, Vec<usize>)> {
    let mut out = Vec::new();
    model.for_each_param(&mut |name, v, shape| out.push((name, v.to_vec(), shape)));
    out
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let model = Model::new(config.model_config(), derive_seed(config.seed, &[u64::from_le_bytes(*b"initmodl")]))?;
        Ok(Self::from_model(model, config.seed))
    }

    pub fn from_model(model: Model, seed: u64) -> Self {
        let zeros: Vec<Vec<f64>> = flat_params(&model).into_iter().map(|(_, v, _)| vec![0.0; v.len()]).collect();
        TrainState {
            model,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            seed,
        }
    }

    /// Decoupled weight decay then a bias-corrected Adam update of every
    /// tensor. Nothing is modified if any gradient is non-finite.
    pub fn adamw_step(&mut self, grads: &Model, lr: f64, hp: &AdamHyper) -> Result<()> {
        let g = flat_params(grads);
        if g.len() != self.m.len() {
            return Err(Error::Shape(format!("{} gradient tensors for {} parameters", g.len(), self.m.len())));
        }
        for (i, (name, values, _)) in g.iter().enumerate() {
            if values.len() != self.m[i].len() {
                return Err(Error::Shape(format!("gradient {name} has {} values", values.len())));
            }
            if let Some(index) = values.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient {name}"),
                    index,
                });
            }
        }
        let t = self.step + 1;
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        self.model.for_each_param_mut(&mut |_, theta| {
            adamw_update(theta, &g[i].1, &mut m[i], &mut v[i], t, lr, hp);
            i += 1;
        });
        self.step = t;
        Ok(())
    }

    pub fn to_checkpoint(&self, config: &TrainConfig, net: &PerceptualNet) -> Checkpoint {
        let mut tensors = Vec::new();
        let params = flat_params(&self.model);
        for (name, values, shape) in &params {
            tensors.push(Tensor::new(name.clone(), shape.clone(), values.clone()));
        }
        for (moments, tag) in [(&self.m, "adam.m"), (&self.v, "adam.v")] {
            for ((name, _, shape), values) in params.iter().zip(moments) {
                tensors.push(Tensor::new(format!("{tag}.{name}"), shape.clone(), values.clone()));
            }
        }
        let json = config.to_json();
        Checkpoint {
            step: self.step,
            seed: self.seed,
            config_hash: config_hash(&json),
            metadata: vec![
                (
                    "model_config".into(),
                    serde_json::to_string(&config.model_config()).expect("config serializes"),
                ),
                ("train_config".into(), json),
                ("perceptual_net".into(), net.fingerprint()),
            ],
            tensors,
        }
    }

    /// Rebuild a state from a checkpoint. The model architecture is read from
    /// the checkpoint metadata.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mc: ModelConfig = serde_json::from_str(
            ckpt.meta("model_config")
                .ok_or_else(|| Error::Mismatch("checkpoint has no model_config".into()))?,
        )
        .map_err(|e| Error::Mismatch(format!("model_config: {e}")))?;
        let mut state = Self::from_model(Model::new(mc, 0)?, ckpt.seed);
        let shapes: Vec<(String, Vec<usize>)> = flat_params(&state.model).into_iter().map(|(n, _, s)| (n, s)).collect();
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = ckpt
                .tensor(name)
                .ok_or_else(|| Error::Mismatch(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Mismatch(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t.data.clone())
        };
        let mut values = Vec::new();
        for (i, (name, shape)) in shapes.iter().enumerate() {
            values.push(fetch(name, shape)?);
            state.m[i] = fetch(&format!("adam.m.{name}"), shape)?;
            state.v[i] = fetch(&format!("adam.v.{name}"), shape)?;
        }
        let mut i = 0;
        state.model.for_each_param_mut(&mut |_, theta| {
            theta.copy_from_slice(&values[i]);
            i += 1;
        });
        state.step = ckpt.step;
        Ok(state)
    }
}

/// Frame indices `views` long with consecutive ids `interval` apart.
pub fn sample_views(scene: &Scene, views: usize, interval: u32, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let chains: Vec<Vec<usize>> = scene
        .frames
        .iter()
        .filter_map(|f| {
            (0..views as u32)
                .map(|j| {
                    let id = f.frame_id.checked_add(j.checked_mul(interval)?)?;
                    scene.frames.binary_search_by_key(&id, |g| g.frame_id).ok()
                })
                .collect::<Option<Vec<usize>>>()
        })
        .collect();
    if chains.is_empty() {
        return Err(Error::NoViewPair { interval });
    }
    Ok(chains[rng.gen_range(0..chains.len())].clone())
}

/// Everything a scene contributes to one step, after all random choices.
#[derive(Clone, Debug)]
pub struct SceneInput {
    /// Merged, augmented and masked cloud.
    pub cloud: PointCloud,
    /// Augmented cameras of the input views.
    pub cameras: Vec<Camera>,
    pub targets: Vec<RgbImage>,
    pub target_depths: Vec<DepthImage>,
}

/// Sample views, back-project, augment and mask.
pub fn prepare_scene(scene: &Scene, config: &TrainConfig, rng: &mut impl Rng) -> Result<SceneInput> {
    let frames = sample_views(scene, config.views, config.frame_interval, rng)?;
    let clouds: Vec<PointCloud> = frames
        .iter()
        .enumerate()
        .map(|(v, &f)| back_project_view(&scene.frames[f], v as u32))
        .collect();
    let mut merged = [PointCloud::merge(&clouds)];
    let mut poses: Vec<_> = frames.iter().map(|&f| scene.frames[f].pose).collect();
    let angles = [
        rng.gen_range(-TILT_RANGE..=TILT_RANGE),
        rng.gen_range(-TILT_RANGE..=TILT_RANGE),
        rng.gen_range(-YAW_RANGE..=YAW_RANGE),
    ];
    let pivot = merged[0].centroid();
    rotate_augment(&mut merged, &mut poses, angles, pivot);
    let [merged] = merged;
    let cloud = mask_points(&merged, config.mask_ratio, rng)?;
    Ok(SceneInput {
        cloud,
        cameras: frames
            .iter()
            .zip(&poses)
            .map(|(&f, pose)| Camera {
                intrinsics: scene.frames[f].intrinsics,
                pose: *pose,
            })
            .collect(),
        targets: frames.iter().map(|&f| scene.frames[f].color.clone()).collect(),
        target_depths: frames.iter().map(|&f| scene.frames[f].depth.clone()).collect(),
    })
}

/// Loss components of one scene, averaged over its rendered views.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneMetrics {
    pub color: f64,
    pub lpips: f64,
    pub depth: f64,
    pub total: f64,
    pub psnr: f64,
    pub gaussians: usize,
    pub visible_points: usize,
}

/// Forward the model on a prepared scene, render every input view and
/// return the metrics with the weight gradients (`None` for forward only).
pub fn scene_loss(
    model: &Model,
    input: &SceneInput,
    config: &TrainConfig,
    net: &PerceptualNet,
    with_grad: bool,
    exec: Execution,
) -> Result<(SceneMetrics, Option<Model>)> {
    let opts = config.render_options().with_exec(exec);
    let (set, state) = model.forward(&input.cloud, exec)?;
    let views = input.cameras.len() as f64;
    let mut metrics = SceneMetrics {
        gaussians: set.len(),
        visible_points: state.visible.len(),
        ..Default::default()
    };
    let mut d_gauss = vec![GaussianGrad::default(); set.len()];
    for ((camera, target), target_depth) in input.cameras.iter().zip(&input.targets).zip(&input.target_depths) {
        let out = rasterize_forward(&set, camera, &opts)?;
        let loss = total_loss(&out.image, target, net, config.lambda, exec)?;
        let mut total = loss.total;
        let mut d_depth = None;
        if config.depth_weight > 0.0 {
            let (ld, mut gd) = depth_loss(&out.depth, target_depth)?;
            total += config.depth_weight * ld;
            metrics.depth += ld / views;
            gd.values.iter_mut().for_each(|g| *g *= config.depth_weight / views);
            d_depth = Some(gd);
        }
        metrics.color += loss.color / views;
        metrics.lpips += loss.lpips / views;
        metrics.total += total / views;
        metrics.psnr += psnr_u8(&out.image, target) / views;
        if with_grad {
            let mut d_image = loss.grad;
            d_image.pixels.iter_mut().flatten().for_each(|g| *g /= views);
            let grads = rasterize_backward(&out, &d_image, d_depth.as_ref(), &set, &opts)?;
            for (acc, g) in d_gauss.iter_mut().zip(&grads) {
                acc.add_assign(g);
            }
        }
    }
    if !with_grad {
        return Ok((metrics, None));
    }
    let (grad, _) = model.backward(&state, &d_gauss)?;
    Ok((metrics, Some(grad)))
}

/// Metrics of one optimizer step, averaged over the processed scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub color: f64,
    pub lpips: f64,
    pub depth: f64,
    pub total: f64,
    pub psnr: f64,
    /// Per processed scene: (Gaussian count, visible point count).
    pub counts: Vec<(usize, usize)>,
    pub skipped: usize,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,lr,l_color,l_lpips,l_total,psnr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.color, self.lpips, self.total, self.psnr
        )
    }
}

fn add_scaled(acc: &mut Model, g: &Model, s: f64) {
    let src = flat_params(g);
    let mut i = 0;
    acc.for_each_param_mut(&mut |_, a| {
        for (x, y) in a.iter_mut().zip(&src[i].1) {
            *x += s * y;
        }
        i += 1;
    });
}

/// One optimizer step over `batch`: per scene forward/backward, mean of the
/// gradients in batch order, then AdamW at the scheduled learning rate.
/// Scenes whose visible set is empty are skipped.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&Scene],
    config: &TrainConfig,
    total_steps: usize,
    net: &PerceptualNet,
    exec: Execution,
) -> Result<StepMetrics> {
    let step = state.step;
    let lr = cosine_lr(step as usize, total_steps, config.lr0, config.lr_min);
    let model = &state.model;
    let results = par::map_range(exec, batch.len(), |slot| -> Result<Option<(SceneMetrics, Model)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, &[step, slot as u64]));
        let input = prepare_scene(batch[slot], config, &mut rng)?;
        if input.cloud.visible_count() == 0 {
            warn!("scene {} has no visible points after masking; skipped", batch[slot].id);
            return Ok(None);
        }
        let (m, g) = scene_loss(model, &input, config, net, true, exec)?;
        Ok(Some((m, g.expect("gradient requested"))))
    });
    let mut processed = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(x) => processed.push(x),
            None => skipped += 1,
        }
    }
    let n = processed.len();
    let mut metrics = StepMetrics {
        step,
        lr,
        color: 0.0,
        lpips: 0.0,
        depth: 0.0,
        total: 0.0,
        psnr: 0.0,
        counts: Vec::with_capacity(n),
        skipped,
    };
    if n == 0 {
        state.step += 1;
        return Ok(metrics);
    }
    let mut grad = state.model.zeros_like();
    let inv = 1.0 / n as f64;
    for (m, g) in &processed {
        metrics.color += m.color * inv;
        metrics.lpips += m.lpips * inv;
        metrics.depth += m.depth * inv;
        metrics.total += m.total * inv;
        metrics.psnr += m.psnr * inv;
        metrics.counts.push((m.gaussians, m.visible_points));
        add_scaled(&mut grad, g, inv);
    }
    state.adamw_step(&grad, lr, &AdamHyper::from(config))?;
    Ok(metrics)
}

/// Gaussians predicted from the full (unmasked, unaugmented) clouds of
/// `frames`; empty if no frame has valid depth.
pub fn predict_gaussians(model: &Model, frames: &[&RgbdFrame], exec: Execution) -> Result<GaussianSet> {
    let clouds: Vec<PointCloud> = frames
        .iter()
        .enumerate()
        .map(|(v, f)| back_project_view(f, v as u32))
        .collect();
    let cloud = PointCloud::merge(&clouds);
    if cloud.visible_count() == 0 {
        return Ok(GaussianSet::new(model.config.gaussian.sh_degree));
    }
    Ok(model.forward(&cloud, exec)?.0)
}

/// Forward-only metrics averaged over `scenes`, each sampled with a fixed
/// generator derived from `seed`, so different models see identical inputs.
pub fn evaluate(
    model: &Model,
    scenes: &[Scene],
    config: &TrainConfig,
    net: &PerceptualNet,
    seed: u64,
    exec: Execution,
) -> Result<SceneMetrics> {
    let per_scene = par::map_range(exec, scenes.len(), |i| -> Result<SceneMetrics> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from_le_bytes(*b"evaluate"), i as u64]));
        let input = prepare_scene(&scenes[i], config, &mut rng)?;
        Ok(scene_loss(model, &input, config, net, false, exec)?.0)
    });
    let inv = 1.0 / scenes.len().max(1) as f64;
    let mut mean = SceneMetrics::default();
    for m in per_scene {
        let m = m?;
        mean.color += m.color * inv;
        mean.lpips += m.lpips * inv;
        mean.depth += m.depth * inv;
        mean.total += m.total * inv;
        mean.psnr += m.psnr * inv;
        mean.gaussians += m.gaussians;
        mean.visible_points += m.visible_points;
    }
    Ok(mean)
}

/// Append-only metrics CSV.
pub struct MetricsCsv {
    out: BufWriter<File>,
}

impl MetricsCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", StepMetrics::CSV_HEADER)?;
        out.flush()?;
        Ok(MetricsCsv { out })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(MetricsCsv {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        writeln!(self.out, "{}", m.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Output locations and cadence of [`pretrain`].
#[derive(Clone, Debug, Default)]
pub struct RunOutputs {
    pub dir: Option<PathBuf>,
    /// Write `checkpoint_<step>.bin` every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Dump a render of the first scene every this many steps (0: only at the end).
    pub render_every: usize,
}

/// Scene order of `epoch`: a seeded permutation.
pub fn epoch_order(seed: u64, epoch: usize, scenes: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from_le_bytes(*b"epochord"), epoch as u64]));
    order.shuffle(&mut rng);
    order
}

/// Full pre-training run. Returns the final state and per-step metrics.
pub fn pretrain(
    scenes: &[Scene],
    config: &TrainConfig,
    net: &PerceptualNet,
    outputs: &RunOutputs,
    exec: Execution,
) -> Result<(TrainState, Vec<StepMetrics>)> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidConfig("no training scenes".into()));
    }
    let total = config.total_steps(scenes.len());
    let mut state = TrainState::new(config)?;
    let mut csv = match &outputs.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.json"), config.to_json())?;
            Some(MetricsCsv::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let mut history = Vec::with_capacity(total);
    let per_epoch = config.batches_per_epoch(scenes.len());
    'epochs: for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, scenes.len());
        for b in 0..per_epoch {
            if history.len() >= total {
                break 'epochs;
            }
            let batch: Vec<&Scene> = order[b * config.batch_size..((b + 1) * config.batch_size).min(order.len())]
                .iter()
                .map(|&i| &scenes[i])
                .collect();
            let m = train_step(&mut state, &batch, config, total, net, exec)?;
            if m.step % 10 == 0 {
                info!("step {} lr {:.3e} loss {:.5} psnr {:.2}", m.step, m.lr, m.total, m.psnr);
            }
            if let Some(csv) = csv.as_mut() {
                csv.write(&m)?;
            }
            history.push(m);
            let done = state.step as usize;
            if let Some(dir) = &outputs.dir {
                if outputs.checkpoint_every > 0 && done.is_multiple_of(outputs.checkpoint_every) && done < total {
                    save_checkpoint(&dir.join(format!("checkpoint_{done:06}.bin")), &state.to_checkpoint(config, net))?;
                }
                if outputs.render_every > 0 && done.is_multiple_of(outputs.render_every) && done < total {
                    dump_render(&state, &scenes[0], config, net, &dir.join(format!("render_{done:06}.png")), exec)?;
                }
            }
        }
    }
    if let Some(dir) = &outputs.dir {
        save_checkpoint(&dir.join("checkpoint_final.bin"), &state.to_checkpoint(config, net))?;
        dump_render(&state, &scenes[0], config, net, &dir.join("render_final.png"), exec)?;
    }
    Ok((state, history))
}

/// Render the first input view of a fixed, seeded sample of `scene`.
fn dump_render(
    state: &TrainState,
    scene: &Scene,
    config: &TrainConfig,
    _net: &PerceptualNet,
    path: &Path,
    exec: Execution,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[u64::from_le_bytes(*b"dumpview")]));
    let input = prepare_scene(scene, config, &mut rng)?;
    let (set, _) = state.model.forward(&input.cloud, exec)?;
    let out = rasterize_forward(&set, &input.cameras[0], &config.render_options().with_exec(exec))?;
    write_color_png(path, &out.image)
}

/// Learning rates per raw parameter class for [`overfit_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitConfig {
    pub steps: usize,
    pub lr_mean: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig {
            steps: 2000,
            lr_mean: 2e-3,
            lr_rotation: 5e-3,
            lr_scale: 1e-2,
            lr_opacity: 5e-2,
            lr_sh: 1e-2,
            lambda: DEFAULT_LAMBDA,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverfitResult {
    /// PSNR averaged over views; entry `s` is after `s` updates.
    pub psnr: Vec<f64>,
    pub loss: Vec<f64>,
    pub raw: Vec<RawGaussian>,
}

/// `n` free-parameterized Gaussians at back-projected pixels of `frames`,
/// colored by their pixel, sized by the distance to their neighbors.
pub fn init_from_frames(frames: &[RgbdFrame], n: usize, rng: &mut impl Rng) -> Vec<RawGaussian> {
    let clouds: Vec<PointCloud> = frames.iter().enumerate().map(|(v, f)| back_project_view(f, v as u32)).collect();
    let cloud = PointCloud::merge(&clouds);
    let n = n.min(cloud.len());
    let pick = rand::seq::index::sample(rng, cloud.len(), n).into_vec();
    let pts: Vec<_> = pick.iter().map(|&i| cloud.positions[i]).collect();
    let tree = KdTree::new(&pts);
    pick.iter()
        .enumerate()
        .map(|(j, &i)| {
            let nb = tree.knn(&pts[j], 4);
            let spacing = nb[1..]
                .iter()
                .map(|&q| (pts[q as usize] - pts[j]).norm())
                .sum::<f64>()
                / (nb.len() - 1).max(1) as f64;
            let c = cloud.colors[i];
            let mut raw = RawGaussian {
                offset: pts[j].0,
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [spacing.max(1e-3).ln(); 3],
                opacity_logit: 0.0,
                ..Default::default()
            };
            raw.sh[0] = c.map(|x| (x - 0.5) / SH_C0);
            raw
        })
        .collect()
}

/// Optimize free Gaussians directly against `targets` seen by `cameras`.
pub fn overfit_scene(
    init: &[RawGaussian],
    sh_degree: usize,
    cameras: &[Camera],
    targets: &[RgbImage],
    config: &OverfitConfig,
    net: &PerceptualNet,
    exec: Execution,
) -> Result<OverfitResult> {
    if cameras.len() != targets.len() || cameras.is_empty() {
        return Err(Error::Shape(format!("{} cameras for {} targets", cameras.len(), targets.len())));
    }
    let opts = RenderOptions::default().with_exec(exec);
    let gcfg = GaussianConfig {
        sh_degree,
        ..Default::default()
    };
    let dim = crate::gaussian::raw_dim(sh_degree)?;
    let mut raw = init.to_vec();
    let n = raw.len();
    let mut theta = vec![0.0; n * dim];
    for (g, r) in raw.iter().enumerate() {
        r.write_slice(&mut theta[g * dim..(g + 1) * dim], sh_degree);
    }
    let lrs: Vec<f64> = (0..dim)
        .map(|j| match j {
            0..=2 => config.lr_mean,
            3..=6 => config.lr_rotation,
            7..=9 => config.lr_scale,
            10 => config.lr_opacity,
            _ => config.lr_sh,
        })
        .collect();
    let hp = AdamHyper {
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.eps,
        weight_decay: 0.0,
    };
    let mut m = vec![0.0; n * dim];
    let mut v = vec![0.0; n * dim];
    let views = cameras.len() as f64;
    let mut psnr = Vec::with_capacity(config.steps + 1);
    let mut losses = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let set = activate_free_set(&raw, sh_degree)?;
        let mut d_gauss = vec![GaussianGrad::default(); n];
        let (mut p, mut l) = (0.0, 0.0);
        for (camera, target) in cameras.iter().zip(targets) {
            let out = rasterize_forward(&set, camera, &opts)?;
            let loss = total_loss(&out.image, target, net, config.lambda, exec)?;
            p += psnr_u8(&out.image, target) / views;
            l += loss.total / views;
            if step < config.steps {
                let mut d_image = loss.grad;
                d_image.pixels.iter_mut().flatten().for_each(|g| *g /= views);
                let grads = rasterize_backward(&out, &d_image, None, &set, &opts)?;
                for (acc, g) in d_gauss.iter_mut().zip(&grads) {
                    acc.add_assign(g);
                }
            }
        }
        psnr.push(p);
        losses.push(l);
        if step == config.steps {
            break;
        }
        let mut grad = vec![0.0; n * dim];
        for (g, (r, dg)) in raw.iter().zip(&d_gauss).enumerate() {
            activate_free_backward(r, dg, &gcfg).write_slice(&mut grad[g * dim..(g + 1) * dim], sh_degree);
        }
        if let Some(index) = grad.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "overfit gradient".into(),
                index,
            });
        }
        for g in 0..n {
            for j in 0..dim {
                let i = g * dim + j;
                adamw_update(
                    std::slice::from_mut(&mut theta[i]),
                    &grad[i..i + 1],
                    std::slice::from_mut(&mut m[i]),
                    std::slice::from_mut(&mut v[i]),
                    step as u64 + 1,
                    lrs[j],
                    &hp,
                );
            }
        }
        for (g, r) in raw.iter_mut().enumerate() {
            *r = RawGaussian::from_slice(&theta[g * dim..(g + 1) * dim], sh_degree)?;
        }
    }
    Ok(OverfitResult { psnr, loss: losses, raw })
}
