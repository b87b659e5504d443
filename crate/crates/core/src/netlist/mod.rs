//! Crossbar netlists: compilation from a [`NetworkSpec`], text emission in
//! a SPICE-style dialect, and parsing back.
//!
//! Nodes: `H0_<k>` are inputs, `H<l>_<n>` the output of neuron `n` of layer
//! `l`, `H<l>_<n>+` / `H<l>_<n>-` its two summing columns, `OUTPUT<n>` the
//! network outputs and `Bias` the bias rail.

mod spec;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

pub use spec::{
    fmap_size, Activation, ConvLayerSpec, LayerSpec, LinearLayerSpec, NetworkSpec, NeuronTaps,
    FORMAT_NOTE,
};

use crate::error::{Error, Result};
use crate::mapping::{CalibrationTable, BIAS_VOLTAGE};

pub const BIAS_NODE: &str = "Bias";
const MEMRISTOR_SUBCKT: &str = "memristor";

#[derive(Debug, Clone, PartialEq)]
pub struct Memristor {
    pub name: String,
    /// Driving node (input, previous neuron output, or the bias rail).
    pub input: String,
    /// Summing column.
    pub column: String,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub name: String,
    pub plus: String,
    pub minus: String,
    pub output: String,
    pub activation: Activation,
    pub norm: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSource {
    pub name: String,
    pub node: String,
    /// Parameter name when inputs are externally stepped.
    pub param: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarNetlist {
    pub title: String,
    pub inputs: Vec<InputSource>,
    pub bias_voltage: f64,
    pub memristors: Vec<Memristor>,
    pub neurons: Vec<Neuron>,
}

/// Components produced for one layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fragment {
    pub memristors: Vec<Memristor>,
    pub neurons: Vec<Neuron>,
    pub outputs: Vec<String>,
}

pub fn input_node(k: usize) -> String {
    format!("H0_{k}")
}

fn neuron_node(layer: usize, n: usize) -> String {
    format!("H{layer}_{n}")
}

fn input_param(k: usize) -> String {
    format!("paramin{k:03}")
}

/// Lay out one layer: a column pair and neuron per output, one synapse pair
/// per tap, one bias pair per neuron.
fn build_layer(
    layer: &LayerSpec,
    index: usize,
    inputs: &[String],
    outputs: Vec<String>,
    first_neuron: usize,
    table: &CalibrationTable,
) -> Result<Fragment> {
    let neurons = layer.neurons()?;
    if outputs.len() != neurons.len() {
        return Err(Error::InvalidArgument(format!(
            "layer {index}: {} output nodes for {} neurons",
            outputs.len(),
            neurons.len()
        )));
    }
    let norm = layer.norm() / table.conductance_scale();
    let mut frag = Fragment {
        outputs,
        ..Fragment::default()
    };
    for (n, nt) in neurons.iter().enumerate() {
        let plus = format!("{}+", neuron_node(index, n));
        let minus = format!("{}-", neuron_node(index, n));
        for (t, &(i, w)) in nt.taps.iter().enumerate() {
            let node = inputs.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("layer {index}: tap {i} has no input node"))
            })?;
            let pair = table
                .weight_to_synapse(w)
                .map_err(|e| e.at(format!("layer {index}, row {n}, col {i}")))?;
            push_pair(
                &mut frag,
                format!("Xw{index}_{n}_{t}"),
                node,
                &plus,
                &minus,
                pair.h_plus,
                pair.h_minus,
            );
        }
        let pair = table
            .bias_to_synapse(nt.bias, BIAS_VOLTAGE)
            .map_err(|e| e.at(format!("layer {index}, bias {n}")))?;
        push_pair(
            &mut frag,
            format!("Xb{index}_{n}"),
            BIAS_NODE,
            &plus,
            &minus,
            pair.h_plus,
            pair.h_minus,
        );
        frag.neurons.push(Neuron {
            name: format!("XNeuron{}", first_neuron + n),
            plus,
            minus,
            output: frag.outputs[n].clone(),
            activation: layer.activation(),
            norm,
            bias: 0.0,
        });
    }
    Ok(frag)
}

fn push_pair(
    frag: &mut Fragment,
    stem: String,
    input: &str,
    plus: &str,
    minus: &str,
    hp: f64,
    hm: f64,
) {
    frag.memristors.push(Memristor {
        name: format!("{stem}+"),
        input: input.to_string(),
        column: plus.to_string(),
        h: hp,
    });
    frag.memristors.push(Memristor {
        name: format!("{stem}-"),
        input: input.to_string(),
        column: minus.to_string(),
        h: hm,
    });
}

/// Fully connected layer `index` (1-based) fed by `inputs`.
pub fn build_linear(
    layer: &LinearLayerSpec,
    index: usize,
    inputs: &[String],
    table: &CalibrationTable,
) -> Result<Fragment> {
    let outs = (0..layer.outputs).map(|n| neuron_node(index, n)).collect();
    build_layer(
        &LayerSpec::Linear(layer.clone()),
        index,
        inputs,
        outs,
        0,
        table,
    )
}

/// Convolution layer `index`, with `inputs` the flattened channel-major grid.
pub fn build_conv(
    layer: &ConvLayerSpec,
    index: usize,
    inputs: &[String],
    table: &CalibrationTable,
) -> Result<Fragment> {
    let f = layer.fmap()?;
    let outs = (0..layer.out_channels * f * f)
        .map(|n| neuron_node(index, n))
        .collect();
    build_layer(
        &LayerSpec::Conv(layer.clone()),
        index,
        inputs,
        outs,
        0,
        table,
    )
}

/// Compile a whole network. Neuron norms are divided by the table's
/// conductance scale so that outputs match the trained network.
pub fn compile(spec: &NetworkSpec, table: &CalibrationTable) -> Result<CrossbarNetlist> {
    spec.validate()?;
    let mut nodes: Vec<String> = (0..spec.input_len()).map(input_node).collect();
    let inputs = nodes
        .iter()
        .enumerate()
        .map(|(k, node)| InputSource {
            name: format!("Vin{k:03}"),
            node: node.clone(),
            param: None,
            value: 0.0,
        })
        .collect();
    let mut net = CrossbarNetlist {
        title: spec
            .architecture
            .clone()
            .unwrap_or_else(|| "crossbar".to_string()),
        inputs,
        bias_voltage: BIAS_VOLTAGE,
        memristors: Vec::new(),
        neurons: Vec::new(),
    };
    let last = spec.layers.len() - 1;
    for (l, layer) in spec.layers.iter().enumerate() {
        let index = l + 1;
        let count = layer.output_len()?;
        let outs: Vec<String> = if l == last {
            (0..count).map(|n| format!("OUTPUT{n}")).collect()
        } else {
            (0..count).map(|n| neuron_node(index, n)).collect()
        };
        let frag = build_layer(layer, index, &nodes, outs, net.neurons.len(), table)?;
        nodes = frag.outputs;
        net.memristors.extend(frag.memristors);
        net.neurons.extend(frag.neurons);
    }
    Ok(net)
}

/// C-style `%e`-like rendering with the shortest round-trip mantissa and a
/// two-digit exponent (`1.959469e-06`); zero renders as `0`.
pub fn format_value(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let s = format!("{x:e}");
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mant}e{sign}{digits:0>2}")
}

const SUBCKT_LIBRARY: &str = "\
.subckt simple p m out PARAMS: norm=1000 bias=0
Vp p 0 0
Vm m 0 0
Bout out 0 V={norm*(I(Vp)-I(Vm))}
.ends simple
.subckt relu p m out PARAMS: norm=1000 bias=0
Vp p 0 0
Vm m 0 0
Bout out 0 V={max(0, norm*(I(Vp)-I(Vm)))}
.ends relu
.subckt sigmoid p m out PARAMS: norm=1000 bias=0
.func sig(x) {1/(1+exp(-x))}
Vp p 0 0
Vm m 0 0
Bout out 0 V={sig(norm*(I(Vp)-I(Vm)))/10}
.ends sigmoid
";

impl CrossbarNetlist {
    pub fn memristor_count(&self) -> usize {
        self.memristors.len()
    }

    /// Render the netlist. With `inputs_as_params`, input sources take their
    /// value from `paraminNNN` parameters that a simulator can step.
    pub fn emit(&self, inputs_as_params: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "* {}", self.title);
        out.push_str("* memristor crossbar netlist\n");
        let _ = writeln!(out, ".include {MEMRISTOR_SUBCKT}.sub");
        out.push_str(SUBCKT_LIBRARY);
        if inputs_as_params {
            for (k, s) in self.inputs.iter().enumerate() {
                let name = s.param.clone().unwrap_or_else(|| input_param(k));
                let _ = writeln!(out, ".param {name}={}", format_value(s.value));
            }
        }
        for (k, s) in self.inputs.iter().enumerate() {
            let value = if inputs_as_params {
                format!("{{{}}}", s.param.clone().unwrap_or_else(|| input_param(k)))
            } else {
                format_value(s.value)
            };
            let _ = writeln!(out, "{}\t{}\t0\t{value}", s.name, s.node);
        }
        let _ = writeln!(
            out,
            "VBias\t{BIAS_NODE}\t0\t{}",
            format_value(self.bias_voltage)
        );
        for m in &self.memristors {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{MEMRISTOR_SUBCKT} PARAMS: Hvalue={}",
                m.name,
                m.input,
                m.column,
                format_value(m.h)
            );
        }
        for n in &self.neurons {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{} PARAMS: norm={} bias={}",
                n.name,
                n.plus,
                n.minus,
                n.output,
                n.activation.subckt(),
                format_value(n.norm),
                format_value(n.bias)
            );
        }
        out.push_str(".end\n");
        out
    }

    /// Input values as a flat vector.
    pub fn input_values(&self) -> Vec<f64> {
        self.inputs.iter().map(|s| s.value).collect()
    }
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_number(line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| perr(line, format!("not a number: {s:?}")))
}

/// Split `... PARAMS: k=v k=v` into positional tokens and parameters.
fn split_params(line: usize, text: &str) -> Result<(Vec<String>, BTreeMap<String, String>)> {
    let (head, tail) = match text.find("PARAMS:") {
        Some(i) => (&text[..i], Some(&text[i + "PARAMS:".len()..])),
        None => (text, None),
    };
    let tokens = head.split_whitespace().map(str::to_string).collect();
    let mut params = BTreeMap::new();
    if let Some(tail) = tail {
        for kv in tail.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(line, format!("parameter without value: {kv:?}")))?;
            params.insert(k.to_string(), v.to_string());
        }
    }
    Ok((tokens, params))
}

/// Parse the emitted dialect and check its wiring.
pub fn parse(text: &str) -> Result<CrossbarNetlist> {
    let mut title = None;
    let mut subckts: BTreeSet<String> = BTreeSet::new();
    subckts.insert(MEMRISTOR_SUBCKT.to_string());
    let mut params: HashMap<String, f64> = HashMap::new();
    let mut inputs: Vec<(usize, InputSource)> = Vec::new();
    let mut bias_voltage = None;
    let mut memristors: Vec<(usize, Memristor)> = Vec::new();
    let mut neurons: Vec<(usize, Neuron)> = Vec::new();
    let mut in_subckt = false;
    let mut saw_content = false;

    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        saw_content = true;
        if let Some(c) = line.strip_prefix('*') {
            if title.is_none() {
                title = Some(c.trim().to_string());
            }
            continue;
        }
        let lower = line.to_ascii_lowercase();
        if in_subckt {
            if lower.starts_with(".ends") {
                in_subckt = false;
            }
            continue;
        }
        if lower.starts_with(".subckt") {
            let name = line
                .split_whitespace()
                .nth(1)
                .ok_or_else(|| perr(ln, ".subckt without a name"))?;
            subckts.insert(name.to_string());
            in_subckt = true;
            continue;
        }
        if lower.starts_with(".param") {
            for kv in line.split_whitespace().skip(1) {
                let (name, v) = kv
                    .split_once('=')
                    .ok_or_else(|| perr(ln, format!("malformed parameter {kv:?}")))?;
                params.insert(name.to_string(), parse_number(ln, v)?);
            }
            continue;
        }
        if lower.starts_with(".include") || lower.starts_with(".end") {
            continue;
        }
        if lower.starts_with('.') {
            return Err(perr(ln, format!("unsupported directive {line:?}")));
        }

        let (tokens, kv) = split_params(ln, line)?;
        match line.as_bytes()[0].to_ascii_uppercase() {
            b'V' => {
                if tokens.len() != 4 {
                    return Err(perr(
                        ln,
                        format!("source needs 4 tokens, found {}", tokens.len()),
                    ));
                }
                if tokens[2] != "0" {
                    return Err(perr(ln, "sources must be referenced to ground"));
                }
                if tokens[1] == BIAS_NODE {
                    bias_voltage = Some(parse_number(ln, &tokens[3])?);
                    continue;
                }
                let (param, value) = match tokens[3]
                    .strip_prefix('{')
                    .and_then(|s| s.strip_suffix('}'))
                {
                    Some(name) => (Some(name.to_string()), f64::NAN),
                    None => (None, parse_number(ln, &tokens[3])?),
                };
                inputs.push((
                    ln,
                    InputSource {
                        name: tokens[0].clone(),
                        node: tokens[1].clone(),
                        param,
                        value,
                    },
                ));
            }
            b'X' => {
                let sub = tokens
                    .last()
                    .ok_or_else(|| perr(ln, "empty instance line"))?
                    .clone();
                if !subckts.contains(&sub) {
                    return Err(perr(ln, format!("unknown sub-circuit {sub:?}")));
                }
                if sub == MEMRISTOR_SUBCKT {
                    if tokens.len() != 4 {
                        return Err(perr(
                            ln,
                            format!("memristor line needs 4 tokens, found {}", tokens.len()),
                        ));
                    }
                    let h = kv
                        .get("Hvalue")
                        .ok_or_else(|| perr(ln, "memristor without Hvalue"))?;
                    let h = parse_number(ln, h)?;
                    if !(0.0..=1.0).contains(&h) {
                        return Err(perr(ln, format!("Hvalue {h} outside [0, 1]")));
                    }
                    memristors.push((
                        ln,
                        Memristor {
                            name: tokens[0].clone(),
                            input: tokens[1].clone(),
                            column: tokens[2].clone(),
                            h,
                        },
                    ));
                } else {
                    let activation = Activation::from_subckt(&sub)
                        .ok_or_else(|| perr(ln, format!("{sub:?} is not a neuron sub-circuit")))?;
                    if tokens.len() != 5 {
                        return Err(perr(
                            ln,
                            format!("neuron line needs 5 tokens, found {}", tokens.len()),
                        ));
                    }
                    let num = |key: &str| -> Result<f64> {
                        let v = kv
                            .get(key)
                            .ok_or_else(|| perr(ln, format!("neuron without {key}")))?;
                        parse_number(ln, v)
                    };
                    neurons.push((
                        ln,
                        Neuron {
                            name: tokens[0].clone(),
                            plus: tokens[1].clone(),
                            minus: tokens[2].clone(),
                            output: tokens[3].clone(),
                            activation,
                            norm: num("norm")?,
                            bias: num("bias")?,
                        },
                    ));
                }
            }
            _ => return Err(perr(ln, format!("unrecognized line {line:?}"))),
        }
    }
    if !saw_content {
        return Err(Error::Format("empty netlist".into()));
    }
    if in_subckt {
        return Err(Error::Format("unterminated .subckt".into()));
    }
    for (k, (ln, s)) in inputs.iter_mut().enumerate() {
        if let Some(p) = &s.param {
            s.value = *params
                .get(p)
                .ok_or_else(|| perr(*ln, format!("undefined parameter {p:?}")))?;
            // default names are implied by position
            if *p == input_param(k) {
                s.param = None;
            }
        }
    }

    // wiring checks
    let mut driven: BTreeSet<&str> = inputs.iter().map(|(_, s)| s.node.as_str()).collect();
    if bias_voltage.is_some() {
        driven.insert(BIAS_NODE);
    }
    let mut column_owner: HashMap<&str, usize> = HashMap::new();
    for (k, (ln, n)) in neurons.iter().enumerate() {
        for col in [&n.plus, &n.minus] {
            if column_owner.insert(col.as_str(), k).is_some() {
                return Err(perr(
                    *ln,
                    format!("column {col} feeds more than one neuron"),
                ));
            }
        }
        driven.insert(n.output.as_str());
    }
    let mut fed: HashMap<&str, usize> = HashMap::new();
    let mut stems: HashMap<&str, (Option<usize>, Option<usize>)> = HashMap::new();
    for (k, (ln, m)) in memristors.iter().enumerate() {
        if !driven.contains(m.input.as_str()) {
            return Err(perr(
                *ln,
                format!("dangling node {}: nothing drives it", m.input),
            ));
        }
        if !column_owner.contains_key(m.column.as_str()) {
            return Err(perr(
                *ln,
                format!("dangling node {}: no neuron reads it", m.column),
            ));
        }
        *fed.entry(m.column.as_str()).or_default() += 1;
        let (stem, polarity) = match m.name.strip_suffix('+') {
            Some(s) => (s, true),
            None => match m.name.strip_suffix('-') {
                Some(s) => (s, false),
                None => return Err(perr(*ln, format!("synapse {} lacks a +/- suffix", m.name))),
            },
        };
        let entry = stems.entry(stem).or_default();
        let slot = if polarity { &mut entry.0 } else { &mut entry.1 };
        if slot.replace(k).is_some() {
            return Err(perr(*ln, format!("duplicate synapse {}", m.name)));
        }
    }
    for (ln, n) in &neurons {
        for col in [&n.plus, &n.minus] {
            if !fed.contains_key(col.as_str()) {
                return Err(perr(
                    *ln,
                    format!("dangling node {col}: no synapse feeds it"),
                ));
            }
        }
    }
    for (k, (ln, m)) in memristors.iter().enumerate() {
        let stem = &m.name[..m.name.len() - 1];
        let (p, q) = stems[stem];
        let (Some(p), Some(q)) = (p, q) else {
            return Err(perr(*ln, format!("unpaired synapse {}", m.name)));
        };
        if k != p {
            continue;
        }
        let (mp, mq) = (&memristors[p].1, &memristors[q].1);
        let neuron = &neurons[column_owner[mp.column.as_str()]].1;
        if mp.input != mq.input || mp.column != neuron.plus || mq.column != neuron.minus {
            return Err(perr(
                *ln,
                format!("unpaired synapse {stem}: halves must share an input and a neuron's column pair"),
            ));
        }
    }

    Ok(CrossbarNetlist {
        title: title.unwrap_or_default(),
        inputs: inputs.into_iter().map(|(_, s)| s).collect(),
        bias_voltage: bias_voltage.ok_or_else(|| Error::Format("no bias rail source".into()))?,
        memristors: memristors.into_iter().map(|(_, m)| m).collect(),
        neurons: neurons.into_iter().map(|(_, n)| n).collect(),
    })
}
