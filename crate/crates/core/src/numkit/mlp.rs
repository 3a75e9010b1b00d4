//! Fully connected networks with hand-derived backward passes.
//!
//! Each layer computes `z = x·W + b`, optionally batch-normalizes `z`, then
//! applies its activation. `W` is stored `fan_in × fan_out`.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamSet;
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::None => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::None => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization over the batch axis.
///
/// Train mode normalizes with the batch mean and the biased batch variance
/// and folds them into the running statistics with
/// `running = momentum·running + (1 − momentum)·batch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub batchnorm: Option<BatchNorm>,
}

impl Layer {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, batchnorm: bool, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-limit, limit));
        Layer { weights, bias: vec![0.0; fan_out], activation, batchnorm: batchnorm.then(|| BatchNorm::new(fan_out)) }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

/// Layer shape used to build an [`MlpParams`].
#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub batchnorm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug)]
struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    /// Batch mean and biased variance; train mode only.
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    bn: Option<BnCache>,
    pre_activation: Matrix,
    output: Matrix,
}

/// Everything the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct MlpCache {
    mode: Mode,
    shapes: Vec<(usize, usize, bool)>,
    layers: Vec<LayerCache>,
}

impl MlpCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.rows())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub bn_scale: Option<Vec<f64>>,
    pub bn_shift: Option<Vec<f64>>,
}

/// Gradients mirroring [`MlpParams`] tensor for tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![0.0; l.fan_out()],
                    bn_scale: l.batchnorm.as_ref().map(|bn| vec![0.0; bn.scale.len()]),
                    bn_shift: l.batchnorm.as_ref().map(|bn| vec![0.0; bn.shift.len()]),
                })
                .collect(),
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weights.data());
            out.push(l.bias.as_slice());
            if let Some(bn) = &l.batchnorm {
                out.push(bn.scale.as_slice());
                out.push(bn.shift.as_slice());
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weights.data_mut());
            out.push(l.bias.as_mut_slice());
            if let Some(bn) = &mut l.batchnorm {
                out.push(bn.scale.as_mut_slice());
                out.push(bn.shift.as_mut_slice());
            }
        }
        out
    }
}

impl ParamSet for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weights.data());
            out.push(l.bias.as_slice());
            if let (Some(s), Some(t)) = (&l.bn_scale, &l.bn_shift) {
                out.push(s.as_slice());
                out.push(t.as_slice());
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weights.data_mut());
            out.push(l.bias.as_mut_slice());
            if let (Some(s), Some(t)) = (&mut l.bn_scale, &mut l.bn_shift) {
                out.push(s.as_mut_slice());
                out.push(t.as_mut_slice());
            }
        }
        out
    }
}

impl MlpParams {
    pub fn new(input_width: usize, specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        if input_width == 0 || specs.is_empty() || specs.iter().any(|s| s.width == 0) {
            return Err(Error::Config("MLP needs a non-empty input and non-empty layers".into()));
        }
        let mut fan_in = input_width;
        let layers = specs
            .iter()
            .map(|s| {
                let layer = Layer::init(fan_in, s.width, s.activation, s.batchnorm, rng);
                fan_in = s.width;
                layer
            })
            .collect();
        Ok(MlpParams { layers })
    }

    /// Hidden layers share `hidden` activation and optional batchnorm; the
    /// last layer uses `output` and never batch-normalizes.
    pub fn feedforward(
        input_width: usize,
        hidden: &[usize],
        output_width: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        batchnorm: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut specs: Vec<LayerSpec> =
            hidden.iter().map(|&width| LayerSpec { width, activation: hidden_activation, batchnorm }).collect();
        specs.push(LayerSpec { width: output_width, activation: output_activation, batchnorm: false });
        MlpParams::new(input_width, &specs, rng)
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Layer::fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    /// Checks that layer widths chain and batchnorm vectors fit.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let wrap = |e| Error::Layer { index: i, source: Box::new(e) };
            if l.bias.len() != l.fan_out() {
                return Err(wrap(Error::dims("bias length", l.fan_out(), l.bias.len())));
            }
            if i > 0 && self.layers[i - 1].fan_out() != l.fan_in() {
                return Err(wrap(Error::dims("layer chaining", self.layers[i - 1].fan_out(), l.fan_in())));
            }
            if let Some(bn) = &l.batchnorm {
                let w = l.fan_out();
                if [&bn.scale, &bn.shift, &bn.running_mean, &bn.running_var].iter().any(|v| v.len() != w) {
                    return Err(wrap(Error::dims("batchnorm width", w, bn.scale.len())));
                }
                if !(bn.epsilon > 0.0) {
                    return Err(wrap(Error::Config("batchnorm epsilon must be > 0".into())));
                }
            }
        }
        Ok(())
    }

    fn shapes_signature(&self) -> Vec<(usize, usize, bool)> {
        self.layers.iter().map(|l| (l.fan_in(), l.fan_out(), l.batchnorm.is_some())).collect()
    }

    /// Forward pass without touching running statistics.
    pub fn forward(&self, input: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            if x.cols() != layer.fan_in() {
                return Err(Error::Layer {
                    index,
                    source: Box::new(Error::dims("layer input width", layer.fan_in(), x.cols())),
                });
            }
            let mut z = x.matmul(&layer.weights)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let bn_cache = match (&layer.batchnorm, mode) {
                (Some(bn), Mode::Train) => Some(batchnorm_train(bn, &mut z)),
                (Some(bn), Mode::Eval) => Some(batchnorm_eval(bn, &mut z)),
                (None, _) => None,
            };
            let out = z.map(|v| layer.activation.apply(v));
            caches.push(LayerCache { input: x, bn: bn_cache, pre_activation: z, output: out.clone() });
            x = out;
        }
        x.ensure_finite("mlp_forward output")?;
        Ok((x, MlpCache { mode, shapes: self.shapes_signature(), layers: caches }))
    }

    /// Forward pass that, in train mode, also folds batch statistics into the running ones.
    pub fn forward_mut(&mut self, input: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache)> {
        let (out, cache) = self.forward(input, mode)?;
        if mode == Mode::Train {
            self.update_running_stats(&cache)?;
        }
        Ok((out, cache))
    }

    pub fn update_running_stats(&mut self, cache: &MlpCache) -> Result<()> {
        self.check_cache(cache)?;
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            let stats = lc.bn.as_ref().and_then(|bc| bc.batch_stats.as_ref());
            if let (Some(bn), Some((mean, var))) = (&mut layer.batchnorm, stats) {
                let m = bn.momentum;
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] = m * bn.running_mean[j] + (1.0 - m) * mean[j];
                    bn.running_var[j] = m * bn.running_var[j] + (1.0 - m) * var[j];
                }
            }
        }
        Ok(())
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        if cache.shapes != self.shapes_signature() {
            return Err(Error::CacheMismatch(format!(
                "cache layers {:?} vs params {:?}",
                cache.shapes,
                self.shapes_signature()
            )));
        }
        Ok(())
    }

    /// Exact backward pass for the forward call that produced `cache`.
    pub fn backward(&self, cache: &MlpCache, grad_output: &Matrix) -> Result<(MlpGrads, Matrix)> {
        self.check_cache(cache)?;
        let last = cache.layers.last().ok_or_else(|| Error::CacheMismatch("empty cache".into()))?;
        if grad_output.shape() != last.output.shape() {
            return Err(Error::CacheMismatch(format!(
                "grad_output {:?} vs output {:?}",
                grad_output.shape(),
                last.output.shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let mut dz = g;
            for ((d, &z), &y) in dz.data_mut().iter_mut().zip(lc.pre_activation.data()).zip(lc.output.data()) {
                *d *= layer.activation.derivative(z, y);
            }
            let (dlin, bn_scale, bn_shift) = match &layer.batchnorm {
                Some(bn) => {
                    let (dlin, ds, dt) = batchnorm_backward(bn, lc.bn.as_ref(), &dz, cache.mode)?;
                    (dlin, Some(ds), Some(dt))
                }
                None => (dz, None, None),
            };
            let weights = lc.input.matmul_tn(&dlin)?;
            let bias = dlin.column_sums();
            g = dlin.matmul_nt(&layer.weights)?;
            grads.push(LayerGrads { weights, bias, bn_scale, bn_shift });
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, g))
    }
}

fn batchnorm_train(bn: &BatchNorm, z: &mut Matrix) -> BnCache {
    let n = z.rows() as f64;
    let w = z.cols();
    let mean: Vec<f64> = z.column_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; w];
    for i in 0..z.rows() {
        for (j, &v) in z.row(i).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
    let mut normalized = Matrix::zeros(z.rows(), w);
    for i in 0..z.rows() {
        let zr = z.row_mut(i);
        let nr = normalized.row_mut(i);
        for j in 0..w {
            let xh = (zr[j] - mean[j]) * inv_std[j];
            nr[j] = xh;
            zr[j] = bn.scale[j] * xh + bn.shift[j];
        }
    }
    BnCache { normalized, inv_std, batch_stats: Some((mean, var)) }
}

fn batchnorm_eval(bn: &BatchNorm, z: &mut Matrix) -> BnCache {
    let inv_std: Vec<f64> = bn.running_var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
    let mut normalized = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let nr = normalized.row_mut(i);
        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
            let xh = (*v - bn.running_mean[j]) * inv_std[j];
            nr[j] = xh;
            *v = bn.scale[j] * xh + bn.shift[j];
        }
    }
    BnCache { normalized, inv_std, batch_stats: None }
}

fn batchnorm_backward(
    bn: &BatchNorm,
    cache: Option<&BnCache>,
    dy: &Matrix,
    mode: Mode,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let w = dy.cols();
    let d_shift = dy.column_sums();
    let c = cache.ok_or_else(|| Error::CacheMismatch("missing batchnorm cache".into()))?;
    match mode {
        Mode::Train => {
            let n = dy.rows() as f64;
            let mut d_scale = vec![0.0; w];
            for i in 0..dy.rows() {
                for (j, (&g, &xh)) in dy.row(i).iter().zip(c.normalized.row(i)).enumerate() {
                    d_scale[j] += g * xh;
                }
            }
            // dz = scale·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
            let mut dz = Matrix::zeros(dy.rows(), w);
            for i in 0..dy.rows() {
                let out = dz.row_mut(i);
                for j in 0..w {
                    let g = dy[(i, j)];
                    let xh = c.normalized[(i, j)];
                    out[j] = bn.scale[j] * c.inv_std[j] / n * (n * g - d_shift[j] - xh * d_scale[j]);
                }
            }
            Ok((dz, d_scale, d_shift))
        }
        Mode::Eval => {
            let mut d_scale = vec![0.0; w];
            let mut dz = dy.clone();
            for i in 0..dy.rows() {
                for (j, v) in dz.row_mut(i).iter_mut().enumerate() {
                    d_scale[j] += *v * c.normalized[(i, j)];
                    *v *= bn.scale[j] * c.inv_std[j];
                }
            }
            Ok((dz, d_scale, d_shift))
        }
    }
}
