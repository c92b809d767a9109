//! A small ReLU MLP whose output is L2-normalized, trained with SGD plus
//! momentum under a cosine learning-rate decay.
//!
//! Backpropagation is exact, including the normalization Jacobian
//! `(I - u uᵀ) / ‖v‖`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, UnitRep, NORM_EPS};
use crate::losses::{loss_grad_wrt_reps, evaluate, BatchViews, LossBreakdown, LossKind, LossParams};
use crate::seed::{child_rng, LabRng};
use crate::synthdata::AugmentationSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// `[d_in, hidden.., d]`; ReLU after every layer but the last.
    pub layer_dims: Vec<usize>,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::ConfigInvalid(format!(
                "layer_dims needs >= 2 positive entries, got {:?}",
                self.layer_dims
            )));
        }
        Ok(())
    }
}

/// One affine layer, weights row-major `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.biases)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }
}

/// Encoder parameters together with their momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub momentum: Vec<Dense>,
    pub seed: u64,
}

/// Same shapes as the parameters.
pub type ParamGrads = Vec<Dense>;

impl MlpParams {
    /// He-uniform weights `U(±√(6/fan_in))`, zero biases, zero momentum.
    pub fn init(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = child_rng(cfg.seed, "encoder-init", 0);
        let layers: Vec<Dense> = cfg
            .layer_dims
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / n_in as f64).sqrt();
                let mut l = Dense::zeros(n_in, n_out);
                l.weights
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-bound..bound));
                l
            })
            .collect();
        Ok(Self::with_layers(layers, cfg.seed))
    }

    /// Builds parameters from explicit `(weights, biases)` per layer.
    pub fn from_layers(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self> {
        let mut out = Vec::with_capacity(layers.len());
        let mut prev: Option<usize> = None;
        for (w, b) in layers {
            let n_out = w.len();
            let n_in = w.first().map_or(0, Vec::len);
            if n_out == 0 || n_in == 0 || b.len() != n_out || w.iter().any(|r| r.len() != n_in) {
                return Err(Error::ConfigInvalid("inconsistent layer shapes".into()));
            }
            if prev.is_some_and(|p| p != n_in) {
                return Err(Error::DimensionMismatch {
                    expected: prev.unwrap_or(0),
                    got: n_in,
                });
            }
            prev = Some(n_out);
            out.push(Dense {
                n_in,
                n_out,
                weights: w.concat(),
                biases: b,
            });
        }
        if out.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self::with_layers(out, 0))
    }

    fn with_layers(layers: Vec<Dense>, seed: u64) -> Self {
        let momentum = layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect();
        MlpParams {
            layers,
            momentum,
            seed,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in];
        d.extend(self.layers.iter().map(|l| l.n_out));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All weights and biases, layer by layer (weights first).
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|x| {
                *x = it.next().expect("length checked");
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }
}

pub fn flatten(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`acts[0]` is the raw input).
    acts: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    out_norm: f64,
    unit: Vec<f64>,
}

pub fn encoder_forward(params: &MlpParams, x: &[f64]) -> Result<(UnitRep, ForwardCache)> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut acts = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut h = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let z = layer.apply(&h);
        acts.push(std::mem::take(&mut h));
        if i < last {
            h = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
        } else {
            h = z;
        }
    }
    let n = norm(&h);
    if !n.is_finite() {
        return Err(Error::NonFinite("encoder output"));
    }
    if n < NORM_EPS {
        return Err(Error::NearZeroNorm { norm: n });
    }
    let unit: Vec<f64> = h.iter().map(|v| v / n).collect();
    Ok((
        UnitRep::from_unit_unchecked(unit.clone()),
        ForwardCache {
            acts,
            pre,
            out_norm: n,
            unit,
        },
    ))
}

/// Representation only.
pub fn encode(params: &MlpParams, x: &[f64]) -> Result<UnitRep> {
    encoder_forward(params, x).map(|(u, _)| u)
}

/// Accumulates `∂L/∂θ` into `grads` given `∂L/∂u` for the unit output `u`.
pub fn encoder_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_unit: &[f64],
    grads: &mut ParamGrads,
) {
    let u = &cache.unit;
    let ug = dot(u, grad_unit);
    let mut delta: Vec<f64> = grad_unit
        .iter()
        .zip(u)
        .map(|(g, ui)| (g - ui * ug) / cache.out_norm)
        .collect();
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let input = &cache.acts[i];
        let g = &mut grads[i];
        for (o, d) in delta.iter().enumerate() {
            g.biases[o] += d;
            let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
            row.iter_mut().zip(input).for_each(|(w, a)| *w += d * a);
        }
        if i == 0 {
            break;
        }
        let mut back = vec![0.0; layer.n_in];
        for (o, d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
        }
        for (b, z) in back.iter_mut().zip(&cache.pre[i - 1]) {
            if *z <= 0.0 {
                *b = 0.0;
            }
        }
        delta = back;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::ConfigInvalid("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::ConfigInvalid("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// `base · (1 + cos(π · epoch / total)) / 2`, no warmup.
pub fn cosine_lr(base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    let total = total_epochs.max(1);
    let t = epoch.min(total) as f64 / total as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Loss on already-augmented view pairs and its gradient with respect to all
/// encoder parameters.
pub fn batch_gradient(
    params: &MlpParams,
    view_a: &[Vec<f64>],
    view_b: &[Vec<f64>],
    kind: LossKind,
    loss_params: &LossParams,
) -> Result<(LossBreakdown, ParamGrads)> {
    if view_a.len() != view_b.len() {
        return Err(Error::DimensionMismatch {
            expected: view_a.len(),
            got: view_b.len(),
        });
    }
    let fwd_a = view_a
        .iter()
        .map(|x| encoder_forward(params, x))
        .collect::<Result<Vec<_>>>()?;
    let fwd_b = view_b
        .iter()
        .map(|x| encoder_forward(params, x))
        .collect::<Result<Vec<_>>>()?;
    let batch = BatchViews::new(
        fwd_a.iter().map(|(u, _)| u.clone()).collect(),
        fwd_b.iter().map(|(u, _)| u.clone()).collect(),
    )?;
    let loss = evaluate(&batch, kind, loss_params)?;
    let rep_grads = loss_grad_wrt_reps(&batch, loss_params, kind)?;
    let mut grads = params.zero_grads();
    for ((_, cache), g) in fwd_a.iter().zip(&rep_grads.d_z) {
        encoder_backward(params, cache, g, &mut grads);
    }
    for ((_, cache), g) in fwd_b.iter().zip(&rep_grads.d_z_prime) {
        encoder_backward(params, cache, g, &mut grads);
    }
    Ok((loss, grads))
}

/// SGD step: weight decay on weights (not biases), then
/// `buf ← μ·buf + g`, `θ ← θ − lr·buf`.
pub fn apply_update(params: &mut MlpParams, grads: &ParamGrads, opt: &OptimizerConfig, lr_now: f64) {
    for ((layer, buf), g) in params.layers.iter_mut().zip(&mut params.momentum).zip(grads) {
        for ((w, v), gw) in layer.weights.iter_mut().zip(&mut buf.weights).zip(&g.weights) {
            *v = opt.momentum * *v + gw + opt.weight_decay * *w;
            *w -= lr_now * *v;
        }
        for ((b, v), gb) in layer.biases.iter_mut().zip(&mut buf.biases).zip(&g.biases) {
            *v = opt.momentum * *v + gb;
            *b -= lr_now * *v;
        }
    }
}

/// One Siamese step: two independent augmentations per input, shared
/// weights, backprop of the selected loss, momentum update at `lr_now`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut MlpParams,
    inputs: &[&[f64]],
    aug: &AugmentationSpec,
    kind: LossKind,
    loss_params: &LossParams,
    opt: &OptimizerConfig,
    lr_now: f64,
    rng: &mut LabRng,
) -> Result<LossBreakdown> {
    if inputs.len() < 2 {
        return Err(Error::BatchTooSmall(inputs.len()));
    }
    let mut view_a = Vec::with_capacity(inputs.len());
    let mut view_b = Vec::with_capacity(inputs.len());
    for x in inputs {
        view_a.push(aug.sample(x.len(), rng).apply(x));
        view_b.push(aug.sample(x.len(), rng).apply(x));
    }
    let (loss, grads) = batch_gradient(params, &view_a, &view_b, kind, loss_params)?;
    apply_update(params, &grads, opt, lr_now);
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(loss)
}

pub const CHECKPOINT_FORMAT: &str = "contralab-mlp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint: a JSON object with a header (`format`, `version`,
/// `layer_dims`, `seed`, `epoch`) followed by per-layer row-major weights
/// and biases. Floats are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub seed: u64,
    pub epoch: usize,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &MlpParams, epoch: usize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_dims: params.layer_dims(),
            seed: params.seed,
            epoch,
            layers: params
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                })
                .collect(),
        }
    }

    /// Parameters with zeroed momentum.
    pub fn to_params(&self) -> Result<MlpParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.layer_dims.len() != self.layers.len() + 1 {
            return Err(Error::Parse("layer count does not match layer_dims".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (w, l) in self.layer_dims.windows(2).zip(&self.layers) {
            let (n_in, n_out) = (w[0], w[1]);
            if l.weights.len() != n_in * n_out || l.biases.len() != n_out {
                return Err(Error::Parse("layer shape does not match layer_dims".into()));
            }
            layers.push(Dense {
                n_in,
                n_out,
                weights: l.weights.clone(),
                biases: l.biases.clone(),
            });
        }
        Ok(MlpParams::with_layers(layers, self.seed))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
