//! Hardware-constrained training of the five crossbar network shapes.

mod data;

pub use data::{lanczos3, lanczos_weights, load_idx, resize, to_voltage, write_idx, Dataset};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{BIAS_CEILING, WEIGHT_CEILING};
use crate::netlist::{
    fmap_size, Activation, ConvLayerSpec, LayerSpec, LinearLayerSpec, NetworkSpec, FORMAT_NOTE,
};
use crate::seeds::{self, stage};

/// Held-out slice size: the first 1000 test images.
pub const EVAL_IMAGES: usize = 1000;
pub const CLASSES: usize = 10;
/// Upper edge of the safe read window for hidden-layer outputs (volts).
pub const SAFE_HIGH: f64 = 0.25;
/// Lower edge of the safe read window (volts).
pub const SAFE_LOW: f64 = -0.1;

const HIDDEN: usize = 20;
const KERNEL: usize = 3;
const STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    FcSimple,
    FcDouble,
    CvSimple,
    CvDouble,
    FcDoubleSigmoid,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::FcSimple,
        Architecture::FcDouble,
        Architecture::CvSimple,
        Architecture::CvDouble,
        Architecture::FcDoubleSigmoid,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::FcSimple => "fc_simple",
            Architecture::FcDouble => "fc_double",
            Architecture::CvSimple => "cv_simple",
            Architecture::CvDouble => "cv_double",
            Architecture::FcDoubleSigmoid => "fc_double_sigmoid",
        }
    }

    /// Row label used in accuracy tables.
    pub fn title(self) -> &'static str {
        match self {
            Architecture::FcSimple => "FC Simple",
            Architecture::FcDouble => "FC Double",
            Architecture::CvSimple => "CV Simple",
            Architecture::CvDouble => "CV Double",
            Architecture::FcDoubleSigmoid => "FC Double Sigmoid",
        }
    }

    /// Learning rate shipped as the default for this shape.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Architecture::FcSimple | Architecture::FcDouble => 0.01,
            Architecture::CvSimple | Architecture::CvDouble => 0.03,
            Architecture::FcDoubleSigmoid => 0.3,
        }
    }

    /// Softmax temperature multiplier shipped as the default. The weight
    /// bounds cap the class-score spread at a few units, where plain
    /// cross-entropy degrades to a class-mean template.
    pub fn default_logit_scale(self) -> f64 {
        match self {
            Architecture::CvDouble => 3.0,
            Architecture::FcDoubleSigmoid => 30.0,
            _ => 10.0,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown architecture `{s}` (expected one of fc_simple, fc_double, cv_simple, cv_double, fc_double_sigmoid)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub input_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_bound: f64,
    pub bias_bound: f64,
    pub init_std_w: f64,
    pub init_std_b: f64,
    pub scale_relu: f64,
    pub scale_sigmoid: f64,
    /// Weight of the quadratic penalty on hidden outputs above
    /// `activation_limit`. Zero disables it.
    pub activation_penalty: f64,
    /// Hidden-output level where the penalty starts (volts), kept a little
    /// under `SAFE_HIGH` so trained nets leave some headroom.
    pub activation_limit: f64,
    /// Cap on training images per epoch (0 = all).
    pub train_limit: usize,
    /// After training, shrink relu layers so the largest hidden output over
    /// the training set sits at `activation_limit`.
    pub headroom: bool,
    /// Multiplier on the class scores inside the softmax (training loss
    /// only; the network and its argmax are unaffected).
    pub logit_scale: f64,
}

impl TrainConfig {
    pub fn new(architecture: Architecture, input_size: usize) -> Self {
        TrainConfig {
            architecture,
            input_size,
            epochs: 10,
            learning_rate: architecture.default_learning_rate(),
            lr_decay: 0.8,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            weight_bound: WEIGHT_CEILING,
            bias_bound: BIAS_CEILING,
            init_std_w: 2e-5,
            init_std_b: 2e-6,
            scale_relu: 1e4,
            scale_sigmoid: 1e5,
            activation_penalty: 0.0,
            activation_limit: 0.2,
            train_limit: 0,
            headroom: true,
            logit_scale: architecture.default_logit_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.input_size, 12 | 16) {
            return Err(Error::InvalidArgument(format!(
                "input_size must be 12 or 16, got {}",
                self.input_size
            )));
        }
        for (name, v) in [
            ("weight_bound", self.weight_bound),
            ("bias_bound", self.bias_bound),
            ("init_std_w", self.init_std_w),
            ("init_std_b", self.init_std_b),
            ("scale_relu", self.scale_relu),
            ("scale_sigmoid", self.scale_sigmoid),
            ("learning_rate", self.learning_rate),
            ("logit_scale", self.logit_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.activation_limit > 0.0 && self.activation_limit <= SAFE_HIGH) {
            return Err(Error::InvalidArgument(format!(
                "activation_limit must lie in (0, {SAFE_HIGH}], got {}",
                self.activation_limit
            )));
        }
        if !(self.activation_penalty >= 0.0 && self.activation_penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "activation_penalty must be non-negative, got {}",
                self.activation_penalty
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Zero-parameter network of the configured shape.
    pub fn blank_spec(&self) -> Result<NetworkSpec> {
        let n = self.input_size;
        let linear = |inputs, outputs, activation, norm| {
            LayerSpec::Linear(LinearLayerSpec {
                inputs,
                outputs,
                weights: vec![0.0; inputs * outputs],
                biases: vec![0.0; outputs],
                activation,
                norm,
            })
        };
        let conv = |in_channels, out_channels, input_size| {
            LayerSpec::Conv(ConvLayerSpec {
                in_channels,
                out_channels,
                input_size,
                kernel_size: KERNEL,
                stride: STRIDE,
                kernels: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
                biases: vec![0.0; out_channels],
                activation: Activation::Relu,
                norm: self.scale_relu,
            })
        };
        let out = |inputs| linear(inputs, CLASSES, Activation::Identity, self.scale_relu);
        let layers = match self.architecture {
            Architecture::FcSimple => vec![out(n * n)],
            Architecture::FcDouble => vec![
                linear(n * n, HIDDEN, Activation::Relu, self.scale_relu),
                out(HIDDEN),
            ],
            Architecture::FcDoubleSigmoid => vec![
                linear(n * n, HIDDEN, Activation::SigmoidTenth, self.scale_sigmoid),
                out(HIDDEN),
            ],
            Architecture::CvSimple => {
                let f = fmap_size(n, KERNEL, STRIDE)?;
                vec![conv(1, 3, n), out(3 * f * f)]
            }
            Architecture::CvDouble => {
                let f1 = fmap_size(n, KERNEL, STRIDE)?;
                let f2 = fmap_size(f1, KERNEL, STRIDE)?;
                vec![conv(1, 3, n), conv(3, 6, f1), out(6 * f2 * f2)]
            }
        };
        let spec = NetworkSpec {
            format: FORMAT_NOTE.to_string(),
            architecture: Some(self.architecture.id().to_string()),
            input_size: n,
            input_channels: 1,
            output_neurons: CLASSES,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Normal initialization at the configured spreads, clipped to bounds.
    pub fn init_spec(&self, rng: &mut impl Rng) -> Result<NetworkSpec> {
        let mut spec = self.blank_spec()?;
        let nw = Normal::new(0.0, self.init_std_w)
            .map_err(|e| Error::InvalidArgument(format!("init_std_w: {e}")))?;
        let nb = Normal::new(0.0, self.init_std_b)
            .map_err(|e| Error::InvalidArgument(format!("init_std_b: {e}")))?;
        for layer in &mut spec.layers {
            let (w, b) = layer.params_mut();
            for x in w.iter_mut() {
                *x = nw.sample(rng);
            }
            for x in b.iter_mut() {
                *x = nb.sample(rng);
            }
        }
        clip(&mut spec, self.weight_bound, self.bias_bound);
        Ok(spec)
    }
}

/// Clamp weights to ±`weight_bound` and biases to ±`bias_bound`.
pub fn clip(spec: &mut NetworkSpec, weight_bound: f64, bias_bound: f64) {
    for layer in &mut spec.layers {
        let (w, b) = layer.params_mut();
        for x in w.iter_mut() {
            *x = x.clamp(-weight_bound, weight_bound);
        }
        for x in b.iter_mut() {
            *x = x.clamp(-bias_bound, bias_bound);
        }
    }
}

pub fn within_bounds(spec: &NetworkSpec, weight_bound: f64, bias_bound: f64) -> bool {
    spec.layers.iter().all(|l| {
        let (w, b) = l.params();
        w.iter().all(|x| x.abs() <= weight_bound) && b.iter().all(|x| x.abs() <= bias_bound)
    })
}

/// Pre-activations `z = norm·(W·x + b)` of one layer.
pub fn layer_preactivation(layer: &LayerSpec, x: &[f64]) -> Vec<f64> {
    match layer {
        LayerSpec::Linear(l) => (0..l.outputs)
            .map(|o| {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                let s: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
                l.norm * (s + l.biases[o])
            })
            .collect(),
        LayerSpec::Conv(c) => {
            let f = c.fmap().expect("validated conv geometry");
            let (n, k, s) = (c.input_size, c.kernel_size, c.stride);
            let mut z = vec![0.0; c.out_channels * f * f];
            for co in 0..c.out_channels {
                for i in 0..f {
                    for j in 0..f {
                        let mut acc = c.biases[co];
                        for ci in 0..c.in_channels {
                            for ki in 0..k {
                                for kj in 0..k {
                                    acc += x[(ci * n + i * s + ki) * n + j * s + kj]
                                        * c.kernel(co, ci, ki, kj);
                                }
                            }
                        }
                        z[(co * f + i) * f + j] = c.norm * acc;
                    }
                }
            }
            z
        }
    }
}

/// Class scores for one input-voltage vector.
pub fn forward(spec: &NetworkSpec, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in &spec.layers {
        let act = layer.activation();
        a = layer_preactivation(layer, &a)
            .into_iter()
            .map(|z| act.apply(z))
            .collect();
    }
    a
}

/// Index of the largest score (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

pub fn predict(spec: &NetworkSpec, x: &[f64]) -> usize {
    argmax(&forward(spec, x))
}

/// Fraction of samples whose digital prediction matches the label.
pub fn accuracy(spec: &NetworkSpec, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let hits = (0..ds.len())
        .filter(|&k| predict(spec, &ds.voltages(k)) == ds.labels[k] as usize)
        .count();
    hits as f64 / ds.len() as f64
}

fn activation_derivative(act: Activation, z: f64, a: f64) -> f64 {
    match act {
        Activation::Identity => 1.0,
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        // a = σ(z)/10, so da/dz = a·(1 − 10a)
        Activation::SigmoidTenth => a * (1.0 - 10.0 * a),
    }
}

/// Per-layer `(weight, bias)` gradients in the spec's storage layout.
pub type Gradients = Vec<(Vec<f64>, Vec<f64>)>;

fn zero_gradients(spec: &NetworkSpec) -> Gradients {
    spec.layers
        .iter()
        .map(|l| {
            let (w, b) = l.params();
            (vec![0.0; w.len()], vec![0.0; b.len()])
        })
        .collect()
}

fn softmax_cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[label] - m);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, e)| e / sum - if k == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Per-sample training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Weight on `Σ max(0, a − activation_limit)²` over hidden-layer outputs.
    pub activation_penalty: f64,
    pub activation_limit: f64,
    /// Softmax temperature multiplier on the class scores.
    pub logit_scale: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            activation_penalty: 0.0,
            activation_limit: SAFE_HIGH,
            logit_scale: 1.0,
        }
    }
}

impl From<&TrainConfig> for Objective {
    fn from(cfg: &TrainConfig) -> Self {
        Objective {
            activation_penalty: cfg.activation_penalty,
            activation_limit: cfg.activation_limit,
            logit_scale: cfg.logit_scale,
        }
    }
}

/// Loss of one sample: cross-entropy on the (temperature-scaled) class
/// scores plus the hidden-output penalty.
pub fn sample_loss(spec: &NetworkSpec, x: &[f64], label: usize, obj: &Objective) -> f64 {
    sample_loss_and_gradient(spec, x, label, obj, None)
}

/// As [`sample_loss`], accumulating parameter gradients into `grads`.
pub fn sample_loss_and_gradient(
    spec: &NetworkSpec,
    x: &[f64],
    label: usize,
    obj: &Objective,
    grads: Option<&mut Gradients>,
) -> f64 {
    let depth = spec.layers.len();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut a = x.to_vec();
    for layer in &spec.layers {
        let z = layer_preactivation(layer, &a);
        let act = layer.activation();
        let next: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
        inputs.push(std::mem::replace(&mut a, next));
        pre.push(z);
    }
    let t = obj.logit_scale;
    let logits: Vec<f64> = a.iter().map(|s| s * t).collect();
    let (mut loss, ga) = softmax_cross_entropy(&logits, label);
    let mut ga: Vec<f64> = ga.into_iter().map(|g| g * t).collect();
    let (penalty, limit) = (obj.activation_penalty, obj.activation_limit);
    let hidden_penalty = |act: &[f64]| -> f64 {
        act.iter()
            .map(|&v| (v - limit).max(0.0).powi(2))
            .sum::<f64>()
            * penalty
    };
    // inputs[l + 1] holds layer l's output
    for l in 0..depth.saturating_sub(1) {
        loss += hidden_penalty(&inputs[l + 1]);
    }
    let Some(grads) = grads else {
        return loss;
    };

    for l in (0..depth).rev() {
        let layer = &spec.layers[l];
        let act = layer.activation();
        let out: &[f64] = if l + 1 < depth { &inputs[l + 1] } else { &a };
        if l + 1 < depth && penalty > 0.0 {
            for (g, &v) in ga.iter_mut().zip(out) {
                if v > limit {
                    *g += 2.0 * penalty * (v - limit);
                }
            }
        }
        let gz: Vec<f64> = ga
            .iter()
            .zip(&pre[l])
            .zip(out)
            .map(|((g, &z), &v)| g * activation_derivative(act, z, v))
            .collect();
        let xin = &inputs[l];
        let (gw, gb) = &mut grads[l];
        let mut gx = vec![0.0; xin.len()];
        match layer {
            LayerSpec::Linear(lin) => {
                for o in 0..lin.outputs {
                    let g = lin.norm * gz[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let row = o * lin.inputs;
                    for i in 0..lin.inputs {
                        gw[row + i] += g * xin[i];
                        gx[i] += g * lin.weights[row + i];
                    }
                }
            }
            LayerSpec::Conv(c) => {
                let f = c.fmap().expect("validated conv geometry");
                let (n, k, s) = (c.input_size, c.kernel_size, c.stride);
                for co in 0..c.out_channels {
                    for i in 0..f {
                        for j in 0..f {
                            let g = c.norm * gz[(co * f + i) * f + j];
                            if g == 0.0 {
                                continue;
                            }
                            gb[co] += g;
                            for ci in 0..c.in_channels {
                                for ki in 0..k {
                                    for kj in 0..k {
                                        let xi = (ci * n + i * s + ki) * n + j * s + kj;
                                        let wi = ((co * c.in_channels + ci) * k + ki) * k + kj;
                                        gw[wi] += g * xin[xi];
                                        gx[xi] += g * c.kernels[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        ga = gx;
    }
    loss
}

/// Rescale hidden relu layers so no hidden output over `inputs` exceeds
/// `limit`. Layer `l` gets weights × c_l and biases × C_l, where C_l is the
/// running product of the factors so far; the output layer keeps its
/// weights and takes biases × C. Since relu is positively homogeneous, every
/// class score is multiplied by the same C > 0 and the argmax is unchanged.
/// Networks with any non-relu hidden layer are left alone. Returns the
/// factors c_l.
pub fn fit_headroom(spec: &mut NetworkSpec, inputs: &[Vec<f64>], limit: f64) -> Vec<f64> {
    let depth = spec.layers.len();
    if spec.layers[..depth.saturating_sub(1)]
        .iter()
        .any(|l| l.activation() != Activation::Relu)
    {
        return Vec::new();
    }
    let mut acts: Vec<Vec<f64>> = inputs.to_vec();
    let mut total = 1.0;
    let mut factors = Vec::new();
    for l in 0..depth {
        let layer = &mut spec.layers[l];
        if l + 1 == depth {
            let (_, b) = layer.params_mut();
            for x in b.iter_mut() {
                *x *= total;
            }
            break;
        }
        {
            let (_, b) = layer.params_mut();
            for x in b.iter_mut() {
                *x *= total;
            }
        }
        // activations upstream are already scaled, so z carries the running factor
        let peak = acts
            .iter()
            .flat_map(|a| layer_preactivation(layer, a))
            .fold(0.0, f64::max);
        let c = if peak > limit { limit / peak } else { 1.0 };
        total *= c;
        let (w, b) = layer.params_mut();
        for x in w.iter_mut().chain(b.iter_mut()) {
            *x *= c;
        }
        factors.push(c);
        acts = acts
            .iter()
            .map(|a| {
                layer_preactivation(layer, a)
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect()
            })
            .collect();
    }
    factors
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Held-out accuracy after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub spec: NetworkSpec,
    pub accuracy: f64,
    pub log: Vec<EpochLog>,
}

impl TrainResult {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
        }
        s
    }

    pub fn write(&self, spec_path: impl AsRef<Path>, log_path: impl AsRef<Path>) -> Result<()> {
        self.spec.save(spec_path)?;
        let p = log_path.as_ref();
        std::fs::write(p, self.log_csv()).map_err(|e| Error::io(p, e))
    }
}

/// Minibatch SGD with momentum. Each layer steps with
/// `learning_rate / (norm² · positions)`, where `positions` is how many
/// outputs share each weight (the feature-map area for conv layers, 1 for
/// linear ones). This makes the update in pre-activation units independent
/// of the layer's gain and of kernel sharing. Parameters are clipped after every step.
/// Accuracy is measured on the first `EVAL_IMAGES` samples of `test`.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, test: &Dataset) -> Result<TrainResult> {
    cfg.validate()?;
    for (name, ds) in [("training", train_set), ("test", test)] {
        if ds.side != cfg.input_size || ds.channels != 1 {
            return Err(Error::InvalidArgument(format!(
                "{name} images are {0}×{0}×{1}, expected {2}×{2}×1",
                ds.side, ds.channels, cfg.input_size
            )));
        }
        if ds.is_empty() {
            return Err(Error::InvalidArgument(format!("{name} set is empty")));
        }
    }
    let held_out = test.head(EVAL_IMAGES);
    let mut spec = cfg.init_spec(&mut seeds::stream(cfg.seed, &[stage::TRAIN, 0]))?;
    let objective = Objective::from(cfg);
    let mut velocity = zero_gradients(&spec);
    let mut steps: Vec<f64> = spec
        .layers
        .iter()
        .map(|l| {
            let positions = match l {
                LayerSpec::Linear(_) => 1.0,
                LayerSpec::Conv(c) => {
                    let f = c.fmap().expect("validated conv geometry");
                    (f * f) as f64
                }
            };
            cfg.learning_rate / (l.norm() * l.norm() * positions)
        })
        .collect();

    let n = if cfg.train_limit == 0 {
        train_set.len()
    } else {
        cfg.train_limit.min(train_set.len())
    };
    let voltages: Vec<Vec<f64>> = (0..n).map(|k| train_set.voltages(k)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seeds::stream(
            cfg.seed,
            &[stage::TRAIN, 1, epoch as u64],
        ));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero_gradients(&spec);
            for &k in batch {
                total += sample_loss_and_gradient(
                    &spec,
                    &voltages[k],
                    train_set.labels[k] as usize,
                    &objective,
                    Some(&mut grads),
                );
            }
            if !total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss became {total}"),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for (l, layer) in spec.layers.iter_mut().enumerate() {
                let (w, b) = layer.params_mut();
                let (vw, vb) = &mut velocity[l];
                let (gw, gb) = &grads[l];
                let params = w.iter_mut().chain(b.iter_mut());
                let vel = vw.iter_mut().chain(vb.iter_mut());
                for ((p, v), g) in params.zip(vel).zip(gw.iter().chain(gb)) {
                    *v = cfg.momentum * *v + g * scale;
                    *p -= steps[l] * *v;
                }
            }
            clip(&mut spec, cfg.weight_bound, cfg.bias_bound);
            assert!(within_bounds(&spec, cfg.weight_bound, cfg.bias_bound));
        }
        for s in &mut steps {
            *s *= cfg.lr_decay;
        }
        let loss = total / n as f64;
        log.push(EpochLog {
            epoch,
            loss,
            accuracy: accuracy(&spec, &held_out),
        });
    }
    if cfg.headroom {
        fit_headroom(&mut spec, &voltages, cfg.activation_limit);
    }
    let acc = accuracy(&spec, &held_out);
    Ok(TrainResult {
        spec,
        accuracy: acc,
        log,
    })
}
