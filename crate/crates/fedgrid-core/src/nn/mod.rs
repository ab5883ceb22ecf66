//! Minimal neural-network substrate: multilayer perceptrons with exact
//! reverse-mode gradients, an adaptive-moment optimizer and the
//! squashed-Gaussian policy head.
//!
//! Hidden layers use rectified-linear activations, the output layer is
//! linear. Parameters flatten to a single `Vec<f64>` (layer order, weights
//! before biases) — the representation federated averaging and checkpoints
//! work on; `unflatten(flatten(p)) == p` exactly.

mod adam;
mod mat;
mod policy;

pub use adam::AdamState;
pub use mat::{linear_backward, linear_backward_input, linear_forward, Mat};
pub use policy::{tanh_log_jacobian, PolicyHead, LOG_STD_MAX, LOG_STD_MIN};

use crate::error::{Error, Result};
use rand::Rng;

/// One affine layer, `w` is out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear { w: Mat::zeros(out_dim, in_dim), b: vec![0.0; out_dim] }
    }

    pub fn n_params(&self) -> usize {
        self.w.data().len() + self.b.len()
    }
}

/// Feed-forward network with relu hidden activations and linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Bumped on every parameter mutation; forward caches record the value
    /// they were built against so a stale cache is detected in `backward`.
    version: u64,
}

/// Intermediate activations kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct FwdCache {
    /// Input to each layer: `xs[0]` is the network input, `xs[l]` for l>0
    /// is the relu output feeding layer l (doubling as the relu mask).
    xs: Vec<Mat>,
    version: u64,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Fresh network with the given layer widths, e.g. `[9, 64, 64, 2]`.
    /// Weights are uniform in ±1/√fan_in, biases start at zero.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (in_dim, out_dim) = (d[0], d[1]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                let data = (0..out_dim * in_dim)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Linear { w: Mat::from_vec(out_dim, in_dim, data), b: vec![0.0; out_dim] }
            })
            .collect();
        Mlp { layers, version: 0 }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Self {
        assert!(!layers.is_empty());
        Mlp { layers, version: 0 }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.w.rows()));
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Linear::n_params).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn touch(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "mlp expects input dim {}, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the per-layer activations for `backward`.
    pub fn forward(&self, x: &Mat) -> Result<(Mat, FwdCache)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut xs = Vec::with_capacity(n);
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = linear_forward(&cur, &layer.w, &layer.b)?;
            xs.push(cur);
            if l + 1 < n {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = z;
        }
        Ok((cur, FwdCache { xs, version: self.version }))
    }

    /// Forward pass without a cache.
    pub fn forward_only(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = linear_forward(&cur, &layer.w, &layer.b)?;
            if l + 1 < n {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = z;
        }
        Ok(cur)
    }

    /// Single-sample convenience wrapper.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_only(&Mat::from_row(x))?.row(0).to_vec())
    }

    /// Exact reverse-mode gradients. Returns parameter gradients and the
    /// gradient with respect to the network input.
    pub fn backward(&self, cache: &FwdCache, upstream: &Mat) -> Result<(MlpGrads, Mat)> {
        self.check_cache(cache, upstream)?;
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let (dw, db, mut dx) = linear_backward(&cache.xs[l], &self.layers[l].w, &delta);
            grads.layers[l].w = dw;
            grads.layers[l].b = db;
            if l > 0 {
                // relu mask: the layer input xs[l] is the relu output of
                // the previous layer.
                for (dv, &xv) in dx.data_mut().iter_mut().zip(cache.xs[l].data()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Input gradient only; parameter gradients of this network are skipped.
    pub fn backward_input(&self, cache: &FwdCache, upstream: &Mat) -> Result<Mat> {
        self.check_cache(cache, upstream)?;
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let mut dx = linear_backward_input(&self.layers[l].w, &delta);
            if l > 0 {
                for (dv, &xv) in dx.data_mut().iter_mut().zip(cache.xs[l].data()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    fn check_cache(&self, cache: &FwdCache, upstream: &Mat) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::Protocol(
                "stale forward cache: parameters changed since the forward pass".into(),
            ));
        }
        if cache.xs.len() != self.layers.len() {
            return Err(Error::Protocol("forward cache from a different network".into()));
        }
        if upstream.cols() != self.out_dim() || upstream.rows() != cache.xs[0].rows() {
            return Err(Error::Dimension(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.xs[0].rows(),
                self.out_dim()
            )));
        }
        Ok(())
    }

    /// Parameters as one flat vector: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.w.data());
            out.extend_from_slice(&layer.b);
        }
        out
    }

    /// Inverse of [`Mlp::flatten`]; errors if the length does not match.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, network needs {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let wn = layer.w.data().len();
            layer.w.data_mut().copy_from_slice(&flat[off..off + wn]);
            off += wn;
            let bn = layer.b.len();
            layer.b.copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        self.touch();
        Ok(())
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| Linear::zeros(l.w.rows(), l.w.cols()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.w.data_mut() {
                *v *= s;
            }
            for v in &mut l.b {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for l in &self.layers {
            sq += l.w.data().iter().map(|v| v * v).sum::<f64>();
            sq += l.b.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    /// Scale gradients down if their global norm exceeds `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Flat view in the same order as [`Mlp::flatten`]; test support.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.w.data());
            out.extend_from_slice(&layer.b);
        }
        out
    }
}

/// `target = keep·target + (1−keep)·source`, elementwise. The Polyak
/// building block; `keep` must lie in [0, 1].
pub fn polyak_blend(target: &mut Mlp, source: &Mlp, keep: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(Error::Domain(format!("polyak coefficient {keep} outside [0,1]")));
    }
    if target.dims() != source.dims() {
        return Err(Error::Dimension("polyak blend of differently shaped networks".into()));
    }
    for (tl, sl) in target.layers.iter_mut().zip(&source.layers) {
        for (t, &s) in tl.w.data_mut().iter_mut().zip(sl.w.data()) {
            *t = keep * *t + (1.0 - keep) * s;
        }
        for (t, &s) in tl.b.iter_mut().zip(&sl.b) {
            *t = keep * *t + (1.0 - keep) * s;
        }
    }
    target.touch();
    Ok(())
}
