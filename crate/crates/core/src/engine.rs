//! Behavioral inference through a compiled crossbar.
//!
//! Column nodes are ideal virtual grounds, so every device sees its row
//! voltage directly and a neuron outputs `norm·(i₊ − i₋)` through its
//! activation. Device states are frozen during reads unless the disturb
//! option is set.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{
    sample_variability, solve_terminal, step_state, DeviceParams, VariabilityDraw,
};
use crate::error::{Error, Result};
use crate::mapping::{CalibrationTable, SynapsePair, BIAS_VOLTAGE};
use crate::netlist::{Activation, LayerSpec, NetworkSpec};
use crate::seeds::{self, stage};
use crate::trainer::{argmax, Dataset, SAFE_HIGH, SAFE_LOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Device current `v·G(h)` with `G` interpolated from the calibration
    /// table. Variability has no effect in this mode.
    Linear,
    /// Device current from the full terminal solve at the row voltage.
    Nonlinear,
    /// Linear, with each pair realizing its weight exactly (table bypass).
    Ideal,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Mode::Linear),
            "nonlinear" => Ok(Mode::Nonlinear),
            "ideal" => Ok(Mode::Ideal),
            _ => Err(Error::InvalidArgument(format!(
                "unknown engine mode `{s}` (expected linear, nonlinear or ideal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Index into the layer's input vector.
    pub input: usize,
    pub pair: SynapsePair,
    /// Weight the pair was programmed for (siemens).
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogNeuron {
    pub taps: Vec<Tap>,
    pub bias_pair: SynapsePair,
    /// Bias expressed as a weight on the bias rail (siemens).
    pub bias_weight: f64,
    /// Physical feedback gain (ohms), already divided by the table's
    /// conductance scale.
    pub norm: f64,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogLayer {
    pub inputs: usize,
    pub neurons: Vec<AnalogNeuron>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub mode: Mode,
    /// Independent variability draw per device instead of one per run.
    pub per_device: bool,
    /// Read-pulse length (seconds) during which states may drift. `None`
    /// keeps states frozen.
    pub disturb: Option<f64>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            mode: Mode::Nonlinear,
            per_device: false,
            disturb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogNetwork {
    pub architecture: Option<String>,
    pub options: EngineOptions,
    pub bias_voltage: f64,
    pub params: DeviceParams,
    pub table: CalibrationTable,
    pub layers: Vec<AnalogLayer>,
}

/// Bind a trained network to devices. Geometry follows the netlist
/// construction, including conv kernel replication, so pairs appear in the
/// same order as the emitted memristors.
pub fn compile(
    spec: &NetworkSpec,
    table: &CalibrationTable,
    params: &DeviceParams,
    options: EngineOptions,
) -> Result<AnalogNetwork> {
    spec.validate()?;
    params.validate()?;
    if table.fingerprint != params.fingerprint() {
        return Err(Error::InvalidArgument(
            "calibration table was built for different device parameters".into(),
        ));
    }
    if let Some(dt) = options.disturb {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "disturb pulse length must be positive, got {dt}"
            )));
        }
    }
    let k = table.conductance_scale();
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| compile_layer(layer, l + 1, table, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalogNetwork {
        architecture: spec.architecture.clone(),
        options,
        bias_voltage: BIAS_VOLTAGE,
        params: *params,
        table: table.clone(),
        layers,
    })
}

fn compile_layer(
    layer: &LayerSpec,
    index: usize,
    table: &CalibrationTable,
    k: f64,
) -> Result<AnalogLayer> {
    let neurons = layer
        .neurons()?
        .into_iter()
        .enumerate()
        .map(|(n, nt)| {
            let taps = nt
                .taps
                .iter()
                .map(|&(i, w)| {
                    let pair = table
                        .weight_to_synapse(w)
                        .map_err(|e| e.at(format!("layer {index}, row {n}, col {i}")))?;
                    Ok(Tap {
                        input: i,
                        pair,
                        weight: w,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let bias_pair = table
                .bias_to_synapse(nt.bias, BIAS_VOLTAGE)
                .map_err(|e| e.at(format!("layer {index}, bias {n}")))?;
            Ok(AnalogNeuron {
                taps,
                bias_pair,
                bias_weight: nt.bias / BIAS_VOLTAGE,
                norm: layer.norm() / k,
                activation: layer.activation(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalogLayer {
        inputs: layer.input_len(),
        neurons,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based layer whose output left the window.
    pub layer: usize,
    pub node: usize,
    pub volts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub outputs: Vec<f64>,
    pub predicted: usize,
    pub violations: Vec<Violation>,
    /// Fingerprint of the variability draw(s) used.
    pub fingerprint: u64,
}

/// Per-run device current source.
struct Devices<'a, R: Rng> {
    net: &'a AnalogNetwork,
    shared: VariabilityDraw,
    rng: Option<&'a mut R>,
    fingerprint: u64,
}

impl<R: Rng> Devices<'_, R> {
    fn draw(&mut self) -> VariabilityDraw {
        match self.rng.as_deref_mut() {
            Some(rng) => {
                let d = sample_variability(&self.net.params, rng);
                self.fingerprint = self.fingerprint.rotate_left(5) ^ d.fingerprint();
                d
            }
            None => self.shared,
        }
    }

    /// Current of a device at state `h` with `v` across the series network.
    fn current(&mut self, v: f64, h: f64, weight: f64) -> Result<f64> {
        let net = self.net;
        match net.options.mode {
            Mode::Linear => Ok(v * net.table.conductance(h)),
            Mode::Ideal => Ok(v * (net.table.g_floor() + net.table.conductance_scale() * weight)),
            Mode::Nonlinear => {
                let d = self.draw();
                let p = &net.params;
                let h = match net.options.disturb {
                    Some(dt) => {
                        let (v_dev, _) = solve_terminal(v, h, &d, p)?;
                        step_state(h, v_dev, dt, &d, p)
                    }
                    None => h,
                };
                Ok(solve_terminal(v, h, &d, p)?.1)
            }
        }
    }

    /// `i₊ − i₋` for one pair. `weight` is the programmed signed weight.
    fn pair(&mut self, v: f64, pair: &SynapsePair, weight: f64, floor: Option<f64>) -> Result<f64> {
        let (wp, wm) = (weight.max(0.0), (-weight).max(0.0));
        let mut side = |h: f64, w: f64| -> Result<f64> {
            match floor {
                Some(f) if h == 0.0 && w == 0.0 => Ok(f),
                _ => self.current(v, h, w),
            }
        };
        let ip = side(pair.h_plus, wp)?;
        let im = side(pair.h_minus, wm)?;
        Ok(ip - im)
    }
}

impl AnalogNetwork {
    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn memristor_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.neurons)
            .map(|n| 2 * (n.taps.len() + 1))
            .sum()
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(|l| l.neurons.len()).sum()
    }

    /// Devices sharing each column, per layer (bias pair excluded).
    pub fn devices_in_parallel(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.neurons.first().map_or(0, |n| n.taps.len()))
            .collect()
    }

    /// All programmed states in netlist order: per neuron, every tap pair
    /// then the bias pair.
    pub fn states(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.memristor_count());
        for n in self.layers.iter().flat_map(|l| &l.neurons) {
            for t in &n.taps {
                out.extend([t.pair.h_plus, t.pair.h_minus]);
            }
            out.extend([n.bias_pair.h_plus, n.bias_pair.h_minus]);
        }
        out
    }

    /// One inference. With `variability`, a fresh draw is taken from `rng`
    /// for the whole run (or per device when `per_device` is set).
    pub fn run<R: Rng>(&self, input: &[f64], rng: &mut R, variability: bool) -> Result<RunResult> {
        if input.len() != self.input_len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} input voltages, got {}",
                self.input_len(),
                input.len()
            )));
        }
        let per_device = variability && self.options.per_device;
        let shared = if variability && !per_device {
            sample_variability(&self.params, rng)
        } else {
            VariabilityDraw::nominal(&self.params)
        };
        let mut dev = Devices {
            net: self,
            shared,
            fingerprint: if per_device { 0 } else { shared.fingerprint() },
            rng: if per_device { Some(rng) } else { None },
        };
        // with one draw for all devices, a reset device's current depends
        // only on its row voltage
        let cache_floor = !per_device && self.options.disturb.is_none();

        let mut x = input.to_vec();
        let mut violations = Vec::new();
        let depth = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let floors: Option<Vec<f64>> = if cache_floor {
                Some(
                    x.iter()
                        .map(|&v| dev.current(v, 0.0, 0.0))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            };
            let bias_floor = if cache_floor {
                Some(dev.current(self.bias_voltage, 0.0, 0.0)?)
            } else {
                None
            };
            let mut out = Vec::with_capacity(layer.neurons.len());
            for neuron in &layer.neurons {
                let mut i = 0.0;
                for t in &neuron.taps {
                    let f = floors.as_ref().map(|f| f[t.input]);
                    i += dev.pair(x[t.input], &t.pair, t.weight, f)?;
                }
                i += dev.pair(
                    self.bias_voltage,
                    &neuron.bias_pair,
                    neuron.bias_weight,
                    bias_floor,
                )?;
                out.push(neuron.activation.apply(neuron.norm * i));
            }
            if l + 1 < depth {
                for (node, &v) in out.iter().enumerate() {
                    if !(v > SAFE_LOW && v < SAFE_HIGH) {
                        violations.push(Violation {
                            layer: l + 1,
                            node,
                            volts: v,
                        });
                    }
                }
            }
            x = out;
        }
        Ok(RunResult {
            predicted: argmax(&x),
            outputs: x,
            violations,
            fingerprint: dev.fingerprint,
        })
    }

    /// `n` runs on one input; run `k` draws from `seeds::stream(seed, [ENGINE, k])`.
    pub fn monte_carlo(
        &self,
        input: &[f64],
        n: usize,
        seed: u64,
        variability: bool,
        parallel: bool,
    ) -> Result<Vec<RunResult>> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "monte carlo needs at least one run".into(),
            ));
        }
        let one = |k: usize| {
            self.run(
                input,
                &mut seeds::stream(seed, &[stage::ENGINE, k as u64]),
                variability,
            )
        };
        if parallel {
            (0..n).into_par_iter().map(one).collect()
        } else {
            (0..n).map(one).collect()
        }
    }

    /// Classify each sample of `data` with `runs` independent runs; run `r`
    /// of input `i` draws from `seeds::stream(seed, [ENGINE, i, r])`. The
    /// prediction is the majority class (ties to the lowest class index).
    pub fn evaluate(
        &self,
        data: &Dataset,
        runs: usize,
        seed: u64,
        variability: bool,
        parallel: bool,
    ) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("evaluation slice is empty".into()));
        }
        if runs == 0 {
            return Err(Error::InvalidArgument(
                "need at least one run per input".into(),
            ));
        }
        let one = |i: usize| -> Result<(usize, bool)> {
            let x = data.voltages(i);
            let mut votes = vec![0usize; self.layers.last().map_or(0, |l| l.neurons.len())];
            let mut violated = false;
            for r in 0..runs {
                let mut rng = seeds::stream(seed, &[stage::ENGINE, i as u64, r as u64]);
                let res = self.run(&x, &mut rng, variability)?;
                votes[res.predicted] += 1;
                violated |= !res.violations.is_empty();
            }
            let best = votes
                .iter()
                .enumerate()
                .fold(0, |b, (k, &v)| if v > votes[b] { k } else { b });
            Ok((best, violated))
        };
        let per_input: Vec<(usize, bool)> = if parallel {
            (0..data.len())
                .into_par_iter()
                .map(one)
                .collect::<Result<_>>()?
        } else {
            (0..data.len()).map(one).collect::<Result<_>>()?
        };
        let predictions: Vec<usize> = per_input.iter().map(|p| p.0).collect();
        let hits = predictions
            .iter()
            .zip(&data.labels)
            .filter(|(p, l)| **p == **l as usize)
            .count();
        Ok(Evaluation {
            accuracy: hits as f64 / data.len() as f64,
            inputs_with_violations: per_input.iter().filter(|p| p.1).count(),
            predictions,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("analog network serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        std::fs::write(p, self.to_json()).map_err(|e| Error::io(p, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Inputs where any run pushed a hidden node outside the safe window.
    pub inputs_with_violations: usize,
}

/// CSV `run,class0..classN,predicted`.
pub fn monte_carlo_csv(runs: &[RunResult]) -> String {
    let classes = runs.first().map_or(0, |r| r.outputs.len());
    let mut s = String::from("run");
    for c in 0..classes {
        let _ = write!(s, ",class{c}");
    }
    s.push_str(",predicted\n");
    for (k, r) in runs.iter().enumerate() {
        let _ = write!(s, "{k}");
        for v in &r.outputs {
            let _ = write!(s, ",{v:e}");
        }
        let _ = writeln!(s, ",{}", r.predicted);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorInputs {
    /// Interconnect resistance (ohms).
    pub resistance: f64,
    /// Per-device capacitance (farads).
    pub capacitance: f64,
    /// Op-amp supply current (amperes).
    pub opamp_current: f64,
    /// Supply voltage (volts).
    pub supply: f64,
}

impl Default for EstimatorInputs {
    fn default() -> Self {
        EstimatorInputs {
            resistance: 5.0,
            capacitance: 20e-12,
            opamp_current: 7.54e-4,
            supply: 5.0,
        }
    }
}

/// RC settling time `R·ΣN·C` of a pipeline whose layers put `counts`
/// devices on each column, and its reciprocal. Returns `(seconds, hertz)`.
pub fn estimate_timing(e: &EstimatorInputs, counts: &[usize]) -> Result<(f64, f64)> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "device counts must be positive, got {counts:?}"
        )));
    }
    if !(e.resistance > 0.0 && e.capacitance > 0.0) {
        return Err(Error::InvalidArgument(
            "resistance and capacitance must be positive".into(),
        ));
    }
    let n: usize = counts.iter().sum();
    let t = e.resistance * n as f64 * e.capacitance;
    Ok((t, 1.0 / t))
}

/// Op-amp power `I·V·neurons` (watts).
pub fn estimate_power(e: &EstimatorInputs, neurons: usize) -> Result<f64> {
    if neurons == 0 {
        return Err(Error::InvalidArgument(
            "neuron count must be positive".into(),
        ));
    }
    if !(e.opamp_current >= 0.0 && e.supply >= 0.0) {
        return Err(Error::InvalidArgument(
            "current and supply must be non-negative".into(),
        ));
    }
    Ok(e.opamp_current * e.supply * neurons as f64)
}

/// One row of the digital-versus-analog accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub architecture: String,
    pub input_size: usize,
    pub digital_accuracy: f64,
    pub analog_accuracy: f64,
    pub ratio: f64,
    pub runs_per_input: usize,
    pub images: usize,
    pub inputs_with_violations: usize,
    pub mode: Mode,
    pub variability: bool,
    pub timing_seconds: f64,
    pub frequency_hz: f64,
    pub power_watts: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Insert or replace the row for the same architecture and input size,
    /// keeping rows sorted.
    pub fn upsert(&mut self, row: ReportRow) {
        self.rows
            .retain(|r| !(r.architecture == row.architecture && r.input_size == row.input_size));
        self.rows.push(row);
        self.rows.sort_by(|a, b| {
            (a.architecture.as_str(), a.input_size).cmp(&(b.architecture.as_str(), b.input_size))
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        std::fs::write(p, self.to_json()).map_err(|e| Error::io(p, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text table; accuracies in percent, ratio to 3 decimals.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<20} {:>7} {:>8} {:>8} {:>7} {:>10} {:>9}\n",
            "Network", "Input", "Digital", "Analog", "Ratio", "Freq(MHz)", "Power(W)"
        );
        for r in &self.rows {
            let name = r
                .architecture
                .parse::<crate::trainer::Architecture>()
                .map(|a| a.title().to_string())
                .unwrap_or_else(|_| r.architecture.clone());
            let _ = writeln!(
                s,
                "{:<20} {:>7} {:>8.1} {:>8.1} {:>7.3} {:>10.1} {:>9.4}",
                name,
                format!("{0}x{0}", r.input_size),
                100.0 * r.digital_accuracy,
                100.0 * r.analog_accuracy,
                r.ratio,
                r.frequency_hz / 1e6,
                r.power_watts
            );
        }
        s
    }
}
