use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{BIAS_CEILING, WEIGHT_CEILING};

/// Layout note stored in every serialized spec.
pub const FORMAT_NOTE: &str = "memxbar network v1: linear weights are row-major [out][in]; \
conv kernels are [c_out][c_in][k][k]; activations between layers are flattened \
channel-major [c][row][col]; weights in siemens, biases in amperes at the 0.1 V rail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// `sigmoid(z) / 10`.
    SigmoidTenth,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::SigmoidTenth => 0.1 / (1.0 + (-z).exp()),
        }
    }

    /// Neuron sub-circuit implementing the activation.
    pub fn subckt(self) -> &'static str {
        match self {
            Activation::Identity => "simple",
            Activation::Relu => "relu",
            Activation::SigmoidTenth => "sigmoid",
        }
    }

    pub fn from_subckt(name: &str) -> Option<Self> {
        match name {
            "simple" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::SigmoidTenth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs][inputs]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
    /// Neuron feedback gain (ohms).
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Side of the (square) input feature map.
    pub input_size: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// `[out_channels][in_channels][k][k]`.
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear(LinearLayerSpec),
    Conv(ConvLayerSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<String>,
    /// Pixels per side of the input image.
    pub input_size: usize,
    pub input_channels: usize,
    pub output_neurons: usize,
    pub layers: Vec<LayerSpec>,
}

/// Feature-map side for an edge-cropped, unpadded convolution.
pub fn fmap_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {kernel}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let half = kernel / 2;
    if input <= 2 * half {
        return Err(Error::InvalidArgument(format!(
            "input side {input} too small for kernel {kernel}"
        )));
    }
    let n = (input - 2 * half) / stride;
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "input {input}, kernel {kernel}, stride {stride} gives an empty feature map"
        )));
    }
    Ok(n)
}

/// One neuron's incoming connections: `(input index, weight)` pairs plus
/// the bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTaps {
    pub taps: Vec<(usize, f64)>,
    pub bias: f64,
}

impl ConvLayerSpec {
    pub fn fmap(&self) -> Result<usize> {
        fmap_size(self.input_size, self.kernel_size, self.stride)
    }

    pub fn kernel(&self, co: usize, ci: usize, ki: usize, kj: usize) -> f64 {
        let k = self.kernel_size;
        self.kernels[((co * self.in_channels + ci) * k + ki) * k + kj]
    }
}

impl LayerSpec {
    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Linear(l) => l.activation,
            LayerSpec::Conv(c) => c.activation,
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            LayerSpec::Linear(l) => l.norm,
            LayerSpec::Conv(c) => c.norm,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            LayerSpec::Linear(l) => l.inputs,
            LayerSpec::Conv(c) => c.in_channels * c.input_size * c.input_size,
        }
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(match self {
            LayerSpec::Linear(l) => l.outputs,
            LayerSpec::Conv(c) => c.out_channels * c.fmap()? * c.fmap()?,
        })
    }

    /// Trainable parameter arrays `(weights, biases)`.
    pub fn params(&self) -> (&[f64], &[f64]) {
        match self {
            LayerSpec::Linear(l) => (&l.weights, &l.biases),
            LayerSpec::Conv(c) => (&c.kernels, &c.biases),
        }
    }

    pub fn params_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        match self {
            LayerSpec::Linear(l) => (&mut l.weights, &mut l.biases),
            LayerSpec::Conv(c) => (&mut c.kernels, &mut c.biases),
        }
    }

    /// Connection list per output neuron, in output order. Convolution
    /// kernels are replicated at every output position.
    pub fn neurons(&self) -> Result<Vec<NeuronTaps>> {
        match self {
            LayerSpec::Linear(l) => Ok((0..l.outputs)
                .map(|o| NeuronTaps {
                    taps: (0..l.inputs)
                        .map(|i| (i, l.weights[o * l.inputs + i]))
                        .collect(),
                    bias: l.biases[o],
                })
                .collect()),
            LayerSpec::Conv(c) => {
                let f = c.fmap()?;
                let (n, k) = (c.input_size, c.kernel_size);
                let mut out = Vec::with_capacity(c.out_channels * f * f);
                for co in 0..c.out_channels {
                    for i in 0..f {
                        for j in 0..f {
                            let mut taps = Vec::with_capacity(c.in_channels * k * k);
                            for ci in 0..c.in_channels {
                                for ki in 0..k {
                                    for kj in 0..k {
                                        let r = i * c.stride + ki;
                                        let col = j * c.stride + kj;
                                        taps.push((
                                            (ci * n + r) * n + col,
                                            c.kernel(co, ci, ki, kj),
                                        ));
                                    }
                                }
                            }
                            out.push(NeuronTaps {
                                taps,
                                bias: c.biases[co],
                            });
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Devices needed on hardware: two per weight and per bias, with conv
    /// kernels counted once per output position.
    pub fn memristor_count(&self) -> Result<usize> {
        Ok(match self {
            LayerSpec::Linear(l) => 2 * (l.inputs * l.outputs + l.outputs),
            LayerSpec::Conv(c) => {
                let f = c.fmap()?;
                2 * f * f * c.out_channels * (c.in_channels * c.kernel_size * c.kernel_size + 1)
            }
        })
    }
}

impl NetworkSpec {
    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_size * self.input_size
    }

    pub fn memristor_count(&self) -> Result<usize> {
        self.layers.iter().map(|l| l.memristor_count()).sum()
    }

    /// Neurons per layer.
    pub fn neuron_counts(&self) -> Result<Vec<usize>> {
        self.layers.iter().map(|l| l.output_len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        let mut width = self.input_len();
        let mut side = Some((self.input_channels, self.input_size));
        for (n, layer) in self.layers.iter().enumerate() {
            let at = |e: Error| e.at(format!("layer {}", n + 1));
            match layer {
                LayerSpec::Linear(l) => {
                    if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                        return Err(Error::InvalidArgument(format!(
                            "layer {}: expected {}×{} weights and {} biases",
                            n + 1,
                            l.outputs,
                            l.inputs,
                            l.outputs
                        )));
                    }
                    side = None;
                }
                LayerSpec::Conv(c) => {
                    if side != Some((c.in_channels, c.input_size)) {
                        return Err(Error::InvalidArgument(format!(
                            "layer {}: conv input {}×{}² does not match the previous layer",
                            n + 1,
                            c.in_channels,
                            c.input_size
                        )));
                    }
                    let k = c.kernel_size;
                    let f = c.fmap()?;
                    if c.kernels.len() != c.out_channels * c.in_channels * k * k
                        || c.biases.len() != c.out_channels
                    {
                        return Err(Error::InvalidArgument(format!(
                            "layer {}: kernel tensor has the wrong size",
                            n + 1
                        )));
                    }
                    side = Some((c.out_channels, f));
                }
            }
            if layer.input_len() != width {
                return Err(Error::InvalidArgument(format!(
                    "layer {} expects {} inputs but receives {}",
                    n + 1,
                    layer.input_len(),
                    width
                )));
            }
            if !(layer.norm() > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "layer {}: norm must be positive",
                    n + 1
                )));
            }
            let (w, b) = layer.params();
            for (k, &x) in w.iter().enumerate() {
                if !(x.abs() <= WEIGHT_CEILING) {
                    return Err(at(
                        Error::range(x, -WEIGHT_CEILING, WEIGHT_CEILING).at(format!("weight {k}"))
                    ));
                }
            }
            for (k, &x) in b.iter().enumerate() {
                if !(x.abs() <= BIAS_CEILING) {
                    return Err(at(
                        Error::range(x, -BIAS_CEILING, BIAS_CEILING).at(format!("bias {k}"))
                    ));
                }
            }
            width = layer.output_len()?;
        }
        match self.layers.last() {
            Some(LayerSpec::Linear(l)) if l.outputs == self.output_neurons => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "final layer must be linear with {} outputs",
                self.output_neurons
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("network spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmap_sizes() {
        assert_eq!(fmap_size(16, 3, 2).unwrap(), 7);
        assert_eq!(fmap_size(12, 3, 2).unwrap(), 5);
        assert_eq!(fmap_size(9, 1, 1).unwrap(), 9);
        assert_eq!(fmap_size(5, 3, 2).unwrap(), 1);
        assert!(fmap_size(2, 3, 1).is_err());
        assert!(fmap_size(8, 4, 1).is_err());
        assert!(fmap_size(8, 3, 0).is_err());
        assert!(fmap_size(3, 3, 2).is_err());
    }

    #[test]
    fn sigmoid_tenth() {
        assert_eq!(Activation::SigmoidTenth.apply(0.0), 0.05);
        assert!(Activation::SigmoidTenth.apply(50.0) <= 0.1);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
    }

    fn conv_spec() -> ConvLayerSpec {
        ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            input_size: 6,
            kernel_size: 3,
            stride: 2,
            kernels: (0..9).map(|k| k as f64 * 1e-6).collect(),
            biases: vec![1e-7],
            activation: Activation::Relu,
            norm: 1e4,
        }
    }

    #[test]
    fn conv_taps_step_by_stride() {
        let layer = LayerSpec::Conv(conv_spec());
        let n = layer.neurons().unwrap();
        assert_eq!(n.len(), 4);
        // top-left tap of output (0,1) sits two columns right of output (0,0)
        assert_eq!(n[1].taps[0].0 - n[0].taps[0].0, 2);
        // output (1,0) starts two rows down
        assert_eq!(n[2].taps[0].0, 12);
        assert_eq!(layer.memristor_count().unwrap(), 4 * (9 + 1) * 2);
    }

    #[test]
    fn validation_catches_arity_and_bounds() {
        let lin = LinearLayerSpec {
            inputs: 4,
            outputs: 10,
            weights: vec![0.0; 40],
            biases: vec![0.0; 10],
            activation: Activation::Identity,
            norm: 1e4,
        };
        let mut spec = NetworkSpec {
            format: FORMAT_NOTE.into(),
            architecture: None,
            input_size: 2,
            input_channels: 1,
            output_neurons: 10,
            layers: vec![LayerSpec::Linear(lin)],
        };
        spec.validate().unwrap();
        let back = NetworkSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        if let LayerSpec::Linear(l) = &mut spec.layers[0] {
            l.weights[3] = 1e-4;
        }
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("layer 1") && err.contains("weight 3"), "{err}");
        spec.input_size = 3;
        assert!(spec.validate().is_err());
    }
}
