//! Point encoder, cross-view fusion and the Gaussian prediction head.
//!
//! Forward chain for one scene (visible points only):
//!
//! 1. `x_i = (p_i - centroid, color_i)`, `h1 = MLP1(x)`;
//! 2. `pooled_i = max_{j in kNN(i)} h1_j` over the visible points;
//! 3. `F = MLP2([h1, pooled])`;
//! 4. `F^_i = MLPf([F_i, max_{j in kNN_other(i)} F_j])`, neighbors taken
//!    among visible points of the other views;
//! 5. `raw_i = head(F^_i)`, `k` raw Gaussian tuples per point, anchored at `p_i`.
//!
//! Every stage keeps the activations its backward pass needs.

use std::cmp::Ordering;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::PointCloud;
use crate::error::{Error, Result};
use crate::gaussian::{activate, activate_backward, raw_dim, GaussianConfig, GaussianGrad, GaussianSet, RawGaussian};
use crate::linalg::Vec3;
use crate::nn::knn::KdTree;
use crate::nn::{max_pool_rows, Linear, Mlp, MlpCache};
use crate::par::{self, Execution};

const NO_SOURCE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub mid_dim: usize,
    pub encoder_k: usize,
    pub fusion_k: usize,
    pub head_hidden: usize,
    /// Gaussians predicted per point.
    pub gaussians_per_point: usize,
    pub gaussian: GaussianConfig,
    /// Scale every Gaussian starts from, meters.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 128,
            hidden_dim: 64,
            mid_dim: 128,
            encoder_k: 16,
            fusion_k: 8,
            head_hidden: 64,
            gaussians_per_point: 1,
            gaussian: GaussianConfig::default(),
            init_scale: 0.02,
        }
    }
}

/// All learnable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub mlp1: Mlp,
    pub mlp2: Mlp,
    pub fusion: Mlp,
    pub head: Mlp,
}

/// Hide `floor(ratio * N)` points, chosen uniformly without replacement.
pub fn mask_points(cloud: &PointCloud, ratio: f64, rng: &mut impl Rng) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::MaskRatio(ratio));
    }
    let n = cloud.len();
    let masked = (ratio * n as f64).floor() as usize;
    let mut out = cloud.clone();
    out.visible_mask = vec![true; n];
    for i in sample(rng, n, masked) {
        out.visible_mask[i] = false;
    }
    Ok(out)
}

/// Centroid with the sum taken in lexicographic point order, so the result
/// does not depend on the input order.
pub fn canonical_centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::ZERO;
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    sorted.iter().fold(Vec3::ZERO, |a, p| a + *p).scale(1.0 / points.len() as f64)
}

/// Neighbor lists of every point within `points`, nearest first (self included).
fn self_knn(points: &[Vec3], k: usize, exec: Execution) -> Vec<Vec<u32>> {
    let tree = KdTree::new(points);
    par::map(exec, points, |p| tree.knn(p, k))
}

/// Channel-wise max-pool of `x` rows over each neighbor list.
fn pool(x: &ArrayView2<f64>, neighbors: &[Vec<u32>], exec: Execution) -> (Array2<f64>, Vec<u32>) {
    let c = x.ncols();
    let rows = par::map(exec, neighbors, |nb| {
        if nb.is_empty() {
            (vec![0.0; c], vec![NO_SOURCE; c])
        } else {
            max_pool_rows(x, nb)
        }
    });
    let mut pooled = Array2::zeros((neighbors.len(), c));
    let mut arg = Vec::with_capacity(neighbors.len() * c);
    for (i, (v, a)) in rows.into_iter().enumerate() {
        pooled.row_mut(i).assign(&ndarray::Array1::from(v));
        arg.extend(a);
    }
    (pooled, arg)
}

/// Add `d_pooled[i][c]` into `dx[arg[i][c]][c]`.
fn unpool(d_pooled: &ArrayView2<f64>, arg: &[u32], dx: &mut Array2<f64>) {
    let c = d_pooled.ncols();
    for (i, row) in d_pooled.outer_iter().enumerate() {
        for ch in 0..c {
            let src = arg[i * c + ch];
            if src != NO_SOURCE {
                dx[[src as usize, ch]] += row[ch];
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    pub mlp1: MlpCache,
    pub neighbors: Vec<Vec<u32>>,
    pub argmax: Vec<u32>,
    pub mlp2: MlpCache,
}

#[derive(Clone, Debug)]
pub struct FusionCache {
    pub neighbors: Vec<Vec<u32>>,
    pub argmax: Vec<u32>,
    pub mlp: MlpCache,
}

/// Gradients w.r.t. the encoder inputs of the visible points.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrad {
    /// `dL/dx` for `x = (p - centroid, color)`, one row per visible point.
    pub features: Array2<f64>,
    /// Total derivative w.r.t. point positions (through the centroid too).
    pub positions: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
}

/// Activations of a whole forward pass.
#[derive(Clone, Debug)]
pub struct ForwardState {
    /// Cloud rows of the visible points, in encoding order.
    pub visible: Vec<usize>,
    pub encoder: EncoderCache,
    pub fusion: FusionCache,
    pub head: MlpCache,
    pub raw: Vec<RawGaussian>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, m, f) = (config.hidden_dim, config.mid_dim, config.feature_dim);
        let d = raw_dim(config.gaussian.sh_degree)?;
        let k = config.gaussians_per_point;
        if k == 0 {
            return Err(Error::Shape("gaussians_per_point must be at least 1".into()));
        }
        let mlp1 = Mlp::new(&[6, h, m, m], true, &mut rng);
        let mlp2 = Mlp::new(&[2 * m, h, m, f], false, &mut rng);
        let fusion = Mlp::new(&[2 * f, f, f], false, &mut rng);
        let mut head = Mlp::new(&[f, config.head_hidden, k * d], false, &mut rng);
        let last = head.layers.last_mut().expect("two layers");
        *last = Linear::zeros(config.head_hidden, k * d);
        let init = RawGaussian {
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [config.init_scale.ln(); 3],
            ..Default::default()
        };
        let mut bias = vec![0.0; d];
        init.write_slice(&mut bias, config.gaussian.sh_degree);
        for j in 0..k {
            for (t, v) in bias.iter().enumerate() {
                last.b[j * d + t] = *v;
            }
        }
        Ok(Model {
            config,
            mlp1,
            mlp2,
            fusion,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            config: self.config,
            mlp1: self.mlp1.zeros_like(),
            mlp2: self.mlp2.zeros_like(),
            fusion: self.fusion.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn raw_dim(&self) -> usize {
        raw_dim(self.config.gaussian.sh_degree).expect("validated at construction")
    }

    /// Visit every parameter tensor as `(name, values, shape)` in a fixed order.
    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.mlp1.for_each_param("encoder.mlp1", f);
        self.mlp2.for_each_param("encoder.mlp2", f);
        self.fusion.for_each_param("fusion", f);
        self.head.for_each_param("head", f);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(String, &mut [f64])) {
        self.mlp1.for_each_param_mut("encoder.mlp1", f);
        self.mlp2.for_each_param_mut("encoder.mlp2", f);
        self.fusion.for_each_param_mut("fusion", f);
        self.head.for_each_param_mut("head", f);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |n, _, _| names.push(n));
        names
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, v, _| n += v.len());
        n
    }

    /// Per-point features of the given points, one row each.
    pub fn encode_points(&self, positions: &[Vec3], colors: &[[f64; 3]], exec: Execution) -> Result<(Array2<f64>, EncoderCache)> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        if colors.len() != n {
            return Err(Error::Shape(format!("{n} positions but {} colors", colors.len())));
        }
        let c = canonical_centroid(positions);
        let mut x = Array2::zeros((n, 6));
        for i in 0..n {
            let d = positions[i] - c;
            for a in 0..3 {
                x[[i, a]] = d[a];
                x[[i, 3 + a]] = colors[i][a];
            }
        }
        let mlp1 = self.mlp1.forward(x)?;
        let neighbors = self_knn(positions, self.config.encoder_k, exec);
        let (pooled, argmax) = pool(&mlp1.output().view(), &neighbors, exec);
        let input2 = concatenate(Axis(1), &[mlp1.output().view(), pooled.view()]).expect("same row count");
        let mlp2 = self.mlp2.forward(input2)?;
        let features = mlp2.output().clone();
        Ok((
            features,
            EncoderCache {
                mlp1,
                neighbors,
                argmax,
                mlp2,
            },
        ))
    }

    pub fn encode_backward(&self, cache: &EncoderCache, d_features: Array2<f64>, grad: &mut Model) -> Result<InputGrad> {
        let d_in2 = self.mlp2.backward(&cache.mlp2, d_features, &mut grad.mlp2)?;
        let m = self.mlp1.out_dim();
        let mut d_h1 = d_in2.slice(s![.., ..m]).to_owned();
        unpool(&d_in2.slice(s![.., m..]), &cache.argmax, &mut d_h1);
        let dx = self.mlp1.backward(&cache.mlp1, d_h1, &mut grad.mlp1)?;
        let n = dx.nrows();
        let mean: Vec<f64> = (0..3).map(|a| dx.column(a).sum() / n as f64).collect();
        let positions = (0..n)
            .map(|i| Vec3::new(dx[[i, 0]] - mean[0], dx[[i, 1]] - mean[1], dx[[i, 2]] - mean[2]))
            .collect();
        let colors = (0..n).map(|i| [dx[[i, 3]], dx[[i, 4]], dx[[i, 5]]]).collect();
        Ok(InputGrad {
            features: dx,
            positions,
            colors,
        })
    }

    /// Cross-view fusion over points tagged with their source view: each
    /// point pools the features of its `fusion_k` nearest points from the
    /// other views (zeros if there are none).
    pub fn fuse(&self, features: &Array2<f64>, positions: &[Vec3], views: &[u32], exec: Execution) -> Result<(Array2<f64>, FusionCache)> {
        let n = features.nrows();
        if positions.len() != n || views.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} positions, {} view tags",
                positions.len(),
                views.len()
            )));
        }
        let mut distinct: Vec<u32> = views.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &v in &distinct {
            let others: Vec<usize> = (0..n).filter(|&i| views[i] != v).collect();
            if others.is_empty() {
                continue;
            }
            let other_pos: Vec<Vec3> = others.iter().map(|&i| positions[i]).collect();
            let tree = KdTree::new(&other_pos);
            let mine: Vec<usize> = (0..n).filter(|&i| views[i] == v).collect();
            let found = par::map(exec, &mine, |&i| {
                tree.knn(&positions[i], self.config.fusion_k)
                    .into_iter()
                    .map(|j| others[j as usize] as u32)
                    .collect::<Vec<u32>>()
            });
            for (i, nb) in mine.into_iter().zip(found) {
                neighbors[i] = nb;
            }
        }
        let (cross, argmax) = pool(&features.view(), &neighbors, exec);
        let input = concatenate(Axis(1), &[features.view(), cross.view()]).expect("same row count");
        let mlp = self.fusion.forward(input)?;
        let out = mlp.output().clone();
        Ok((out, FusionCache { neighbors, argmax, mlp }))
    }

    /// Two-view form of [`Model::fuse`]: returns `(F^1, F^2)`.
    pub fn cross_view_fuse(
        &self,
        f1: &Array2<f64>,
        pos1: &[Vec3],
        f2: &Array2<f64>,
        pos2: &[Vec3],
        exec: Execution,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (n1, n2) = (f1.nrows(), f2.nrows());
        let cols = self.config.feature_dim;
        if n1 + n2 == 0 {
            return Ok((Array2::zeros((0, cols)), Array2::zeros((0, cols))));
        }
        let features = concatenate(Axis(0), &[f1.view(), f2.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let positions: Vec<Vec3> = pos1.iter().chain(pos2).copied().collect();
        let views: Vec<u32> = (0..n1 + n2).map(|i| u32::from(i >= n1)).collect();
        let (out, _) = self.fuse(&features, &positions, &views, exec)?;
        Ok((out.slice(s![..n1, ..]).to_owned(), out.slice(s![n1.., ..]).to_owned()))
    }

    pub fn fuse_backward(&self, cache: &FusionCache, d_out: Array2<f64>, grad: &mut Model) -> Result<Array2<f64>> {
        let d_in = self.fusion.backward(&cache.mlp, d_out, &mut grad.fusion)?;
        let f = self.config.feature_dim;
        let mut d_features = d_in.slice(s![.., ..f]).to_owned();
        unpool(&d_in.slice(s![.., f..]), &cache.argmax, &mut d_features);
        Ok(d_features)
    }

    /// Raw parameter rows, `k * D` values per point.
    pub fn predict_raw(&self, fused: &Array2<f64>) -> Result<MlpCache> {
        self.head.forward(fused.clone())
    }

    /// Split head output into raw tuples, point-major (`i * k + j`).
    pub fn split_raw(&self, out: &Array2<f64>) -> Result<Vec<RawGaussian>> {
        let d = self.raw_dim();
        let k = self.config.gaussians_per_point;
        if out.ncols() != k * d {
            return Err(Error::Shape(format!("head output has {} columns, expected {}", out.ncols(), k * d)));
        }
        let deg = self.config.gaussian.sh_degree;
        let mut raws = Vec::with_capacity(out.nrows() * k);
        for row in out.outer_iter() {
            let row = row.to_vec();
            for j in 0..k {
                raws.push(RawGaussian::from_slice(&row[j * d..(j + 1) * d], deg)?);
            }
        }
        Ok(raws)
    }

    /// Activate raw tuples with their anchor points; `anchor_ids` are the
    /// cloud rows recorded on each Gaussian.
    pub fn activate_all(&self, raws: &[RawGaussian], anchors: &[Vec3], anchor_ids: &[usize]) -> Result<GaussianSet> {
        let k = self.config.gaussians_per_point;
        if raws.len() != anchors.len() * k || anchor_ids.len() != anchors.len() {
            return Err(Error::Shape(format!(
                "{} raw tuples for {} anchors with k = {k}",
                raws.len(),
                anchors.len()
            )));
        }
        let gaussians = raws
            .iter()
            .enumerate()
            .map(|(g, raw)| activate(raw, anchors[g / k], anchor_ids[g / k], &self.config.gaussian))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianSet {
            sh_degree: self.config.gaussian.sh_degree,
            gaussians,
        })
    }

    /// Full chain: encode the visible points of `cloud`, fuse across views,
    /// predict and activate `k` Gaussians per visible point.
    pub fn forward(&self, cloud: &PointCloud, exec: Execution) -> Result<(GaussianSet, ForwardState)> {
        let visible = cloud.visible_indices();
        if visible.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let positions: Vec<Vec3> = visible.iter().map(|&i| cloud.positions[i]).collect();
        let colors: Vec<[f64; 3]> = visible.iter().map(|&i| cloud.colors[i]).collect();
        let views: Vec<u32> = visible.iter().map(|&i| cloud.source_view[i]).collect();
        let (features, encoder) = self.encode_points(&positions, &colors, exec)?;
        let (fused, fusion) = self.fuse(&features, &positions, &views, exec)?;
        let head = self.predict_raw(&fused)?;
        let raw = self.split_raw(head.output())?;
        let set = self.activate_all(&raw, &positions, &visible)?;
        Ok((
            set,
            ForwardState {
                visible,
                encoder,
                fusion,
                head,
                raw,
            },
        ))
    }

    /// Backward of [`Model::forward`] from per-Gaussian gradients. Returns the
    /// weight gradients and the gradients w.r.t. the visible points' inputs
    /// (positions include the anchor path).
    pub fn backward(&self, state: &ForwardState, d_gaussians: &[GaussianGrad]) -> Result<(Model, InputGrad)> {
        let k = self.config.gaussians_per_point;
        let d = self.raw_dim();
        let n = state.visible.len();
        if d_gaussians.len() != n * k || state.raw.len() != n * k {
            return Err(Error::Shape(format!(
                "{} Gaussian gradients for {} Gaussians",
                d_gaussians.len(),
                state.raw.len()
            )));
        }
        let deg = self.config.gaussian.sh_degree;
        let mut d_head = Array2::zeros((n, k * d));
        let mut d_anchor = vec![Vec3::ZERO; n];
        let mut buf = vec![0.0; d];
        for (g, (raw, dg)) in state.raw.iter().zip(d_gaussians).enumerate() {
            activate_backward(raw, dg, &self.config.gaussian).write_slice(&mut buf, deg);
            let (i, j) = (g / k, g % k);
            for t in 0..d {
                d_head[[i, j * d + t]] = buf[t];
            }
            d_anchor[i] += dg.mean;
        }
        let mut grad = self.zeros_like();
        let d_fused = self.head.backward(&state.head, d_head, &mut grad.head)?;
        let d_features = self.fuse_backward(&state.fusion, d_fused, &mut grad)?;
        let mut inputs = self.encode_backward(&state.encoder, d_features, &mut grad)?;
        for (p, a) in inputs.positions.iter_mut().zip(d_anchor) {
            *p += a;
        }
        Ok((grad, inputs))
    }
}
