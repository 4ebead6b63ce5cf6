//! Dense layers with hand-written backward passes, and k-nearest-neighbor
//! search.
//!
//! Activations are stored `(points, features)`; a linear layer computes
//! `Y = X W + b` with `W` of shape `(in, out)`.

pub mod knn;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-a..a)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }
}

/// Stack of linear layers; `relu[l]` applies a ReLU after layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu: Vec<bool>,
}

/// Activations retained by [`Mlp::forward`]: `acts[0]` is the input and
/// `acts[l + 1]` the (post-activation) output of layer `l`.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    pub acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// Xavier-initialized MLP over `widths = [in, h1, ..., out]`; ReLU after
    /// every layer except possibly the last.
    pub fn new(widths: &[usize], relu_last: bool, rng: &mut impl Rng) -> Self {
        let n = widths.len() - 1;
        Mlp {
            layers: widths.windows(2).map(|w| Linear::xavier(w[0], w[1], rng)).collect(),
            relu: (0..n).map(|l| l + 1 < n || relu_last).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Linear::zeros(l.fan_in(), l.fan_out())).collect(),
            relu: self.relu.clone(),
        }
    }

    pub fn forward(&self, x: Array2<f64>) -> Result<MlpCache> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!("MLP expects {} inputs, got {}", self.in_dim(), x.ncols())));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (layer, &relu) in self.layers.iter().zip(&self.relu) {
            let mut y = layer.forward(&acts.last().expect("input").view());
            if relu {
                y.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(y);
        }
        Ok(MlpCache { acts })
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dinput`.
    pub fn backward(&self, cache: &MlpCache, d_out: Array2<f64>, grad: &mut Mlp) -> Result<Array2<f64>> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::NoForwardState);
        }
        if d_out.dim() != cache.output().dim() {
            return Err(Error::Shape(format!(
                "MLP output gradient {:?} vs output {:?}",
                d_out.dim(),
                cache.output().dim()
            )));
        }
        let mut d = d_out;
        for l in (0..self.layers.len()).rev() {
            if self.relu[l] {
                d.zip_mut_with(&cache.acts[l + 1], |g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let x = &cache.acts[l];
            grad.layers[l].w += &x.t().dot(&d);
            grad.layers[l].b += &d.sum_axis(Axis(0));
            d = d.dot(&self.layers[l].w.t());
        }
        Ok(d)
    }

    /// Visit `(name, values)` for every weight and bias, in a fixed order.
    pub fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        for (l, layer) in self.layers.iter().enumerate() {
            f(
                format!("{prefix}.{l}.w"),
                layer.w.as_slice().expect("standard layout"),
                vec![layer.fan_in(), layer.fan_out()],
            );
            f(format!("{prefix}.{l}.b"), layer.b.as_slice().expect("standard layout"), vec![layer.fan_out()]);
        }
    }

    pub fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.{l}.w"), layer.w.as_slice_mut().expect("standard layout"));
            f(format!("{prefix}.{l}.b"), layer.b.as_slice_mut().expect("standard layout"));
        }
    }
}

/// Channel-wise max over `rows` of `x` (`x.nrows()` must exceed every index).
/// Returns the pooled row and, per channel, the winning row (first in `rows`
/// order on ties).
pub fn max_pool_rows(x: &ArrayView2<f64>, rows: &[u32]) -> (Vec<f64>, Vec<u32>) {
    let c = x.ncols();
    let mut best = vec![f64::NEG_INFINITY; c];
    let mut arg = vec![0u32; c];
    for &r in rows {
        let row = x.row(r as usize);
        for ch in 0..c {
            if row[ch] > best[ch] {
                best[ch] = row[ch];
                arg[ch] = r;
            }
        }
    }
    (best, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::xavier(6, 64, &mut rng);
        let a = (6.0f64 / 70.0).sqrt();
        assert!(l.w.iter().all(|w| w.abs() <= a));
        assert!(l.b.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[5, 7, 4], false, &mut rng);
        let x = Array2::from_shape_simple_fn((6, 5), || rng.gen_range(-1.0..1.0));
        let wout = Array2::from_shape_simple_fn((6, 4), || rng.gen_range(-1.0..1.0));
        let loss = |m: &Mlp, x: &Array2<f64>| (m.forward(x.clone()).unwrap().output() * &wout).sum();
        let cache = mlp.forward(x.clone()).unwrap();
        let mut grad = mlp.zeros_like();
        let dx = mlp.backward(&cache, wout.clone(), &mut grad).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for idx in 0..mlp.layers[l].w.len() {
                let (r, c) = (idx / mlp.layers[l].fan_out(), idx % mlp.layers[l].fan_out());
                let mut p = mlp.clone();
                p.layers[l].w[[r, c]] += h;
                let mut m = mlp.clone();
                m.layers[l].w[[r, c]] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - grad.layers[l].w[[r, c]]).abs() < 1e-6);
            }
        }
        for idx in 0..x.len() {
            let (r, c) = (idx / 5, idx % 5);
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - dx[[r, c]]).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_without_forward_state_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[2, 3], true, &mut rng);
        let mut g = mlp.zeros_like();
        assert!(matches!(
            mlp.backward(&MlpCache::default(), Array2::zeros((1, 3)), &mut g),
            Err(Error::NoForwardState)
        ));
    }

    #[test]
    fn max_pool_picks_first_of_ties() {
        let x = ndarray::arr2(&[[1.0, 5.0], [3.0, 5.0], [3.0, 0.0]]);
        let (v, a) = max_pool_rows(&x.view(), &[0, 1, 2]);
        assert_eq!(v, vec![3.0, 5.0]);
        assert_eq!(a, vec![1, 0]);
    }
}
