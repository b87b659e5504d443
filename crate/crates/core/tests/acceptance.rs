//! End-to-end acceptance checks. Runs every criterion, prints one
//! PASS/FAIL line each, and exits non-zero if any failed.
//!
//! `cargo test -p memxbar --test acceptance`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memxbar::characterization::{
    build_report, chord_distances, extract_set_voltage, split_cycles, DEFAULT_READ_VOLTAGES,
};
use memxbar::device::{
    composite_conductance, loop_area, simulate_ramp_with, solve_terminal, step_state, DeviceParams,
    ParamName, RampConfig, VariabilityDraw, READ_VOLTAGE,
};
use memxbar::engine::{
    self, estimate_power, estimate_timing, EngineOptions, EstimatorInputs, Mode,
};
use memxbar::genetic::{fit, GaConfig, ParamBounds};
use memxbar::mapping::{calibrate, CalibrationTable, DEFAULT_CALIBRATION_POINTS, WEIGHT_CEILING};
use memxbar::netlist::{
    self, fmap_size, Activation, ConvLayerSpec, LayerSpec, LinearLayerSpec, NetworkSpec,
    FORMAT_NOTE,
};
use memxbar::trainer::{
    self, forward, layer_preactivation, Architecture, Dataset, TrainConfig, EVAL_IMAGES,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn table4_calibration() -> CalibrationTable {
    calibrate(
        &DeviceParams::table4(),
        DEFAULT_CALIBRATION_POINTS,
        READ_VOLTAGE,
    )
    .unwrap()
}

fn opts(mode: Mode) -> EngineOptions {
    EngineOptions {
        mode,
        ..EngineOptions::default()
    }
}

/// Network with every weight and bias drawn uniformly inside the hardware
/// bounds.
fn random_spec(arch: Architecture, size: usize, rng: &mut ChaCha8Rng) -> NetworkSpec {
    let cfg = TrainConfig::new(arch, size);
    let mut spec = cfg.blank_spec().unwrap();
    for layer in &mut spec.layers {
        let (w, b) = layer.params_mut();
        w.iter_mut()
            .for_each(|x| *x = rng.random_range(-cfg.weight_bound..=cfg.weight_bound));
        b.iter_mut()
            .for_each(|x| *x = rng.random_range(-cfg.bias_bound..=cfg.bias_bound));
    }
    spec
}

fn random_voltages(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.1..=0.1)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

// 1 -----------------------------------------------------------------------

fn digital_equivalence() -> Check {
    let started = Instant::now();
    let table = table4_calibration();
    let p = DeviceParams::table4();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for arch in Architecture::ALL {
        let size = 16;
        let spec = random_spec(arch, size, &mut rng);
        let net =
            engine::compile(&spec, &table, &p, opts(Mode::Linear)).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let x = random_voltages(size * size, &mut rng);
            let want = forward(&spec, &x);
            let got = net
                .run(&x, &mut rng, false)
                .map_err(|e| e.to_string())?
                .outputs;
            for (a, d) in got.iter().zip(&want) {
                let e = rel_err(*a, *d);
                worst = worst.max(e);
                ensure(e <= 1e-6, || {
                    format!("{arch}: engine {a:e} vs trainer {d:e} (rel {e:.2e})")
                })?;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "5 architectures × 100 inputs, linear mode, max rel err {worst:.2e}, {secs:.1} s"
    ))
}

// 2 -----------------------------------------------------------------------

fn mnist_split(prefix: &str, size: usize) -> Dataset {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let images = dir.join(format!("{prefix}-images-idx3-ubyte.gz"));
    let labels = dir.join(format!("{prefix}-labels-idx1-ubyte.gz"));
    trainer::load_idx(images, labels)
        .unwrap()
        .resized(size)
        .unwrap()
}

fn table5_reproduction() -> Check {
    let started = Instant::now();
    let (train_set, test) = (mnist_split("train", 16), mnist_split("t10k", 16));
    let test = test.head(EVAL_IMAGES);
    let table = table4_calibration();
    let p = DeviceParams::table4();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (arch, floor) in [
        (Architecture::FcSimple, 0.88),
        (Architecture::FcDouble, 0.90),
    ] {
        let cfg = TrainConfig::new(arch, 16);
        let trained = trainer::train(&cfg, &train_set, &test).map_err(|e| e.to_string())?;
        let net = engine::compile(&trained.spec, &table, &p, opts(Mode::Nonlinear))
            .map_err(|e| e.to_string())?;
        let eval = net
            .evaluate(&test, 1, 0, true, true)
            .map_err(|e| e.to_string())?;
        let ratio = eval.accuracy / trained.accuracy;
        lines.push(format!(
            "{arch}: digital {:.3} analog {:.3} ratio {ratio:.3}",
            trained.accuracy, eval.accuracy
        ));
        if trained.accuracy < floor {
            failures.push(format!("{arch} digital {:.3} < {floor}", trained.accuracy));
        }
        if ratio < 0.95 {
            failures.push(format!("{arch} ratio {ratio:.3} < 0.95"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 30.0 * 60.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    let summary = format!("{}; {secs:.0} s", lines.join("; "));
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

// 3 -----------------------------------------------------------------------

/// Direct transcription of the feature-map loop: `size = (n − 2·⌊k/2⌋) /
/// stride` positions per axis, output (i, j) reading the k×k window whose
/// top-left corner is (i·stride, j·stride).
fn brute_force_conv(c: &ConvLayerSpec, x: &[f64]) -> Vec<f64> {
    let (n, k, s) = (c.input_size, c.kernel_size, c.stride);
    let size = (n - 2 * (k / 2)) / s;
    let mut h = vec![vec![vec![0.0; size]; size]; c.out_channels];
    for (co, plane) in h.iter_mut().enumerate() {
        for (i, row) in plane.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = c.biases[co];
                for ci in 0..c.in_channels {
                    for ki in 0..k {
                        for kj in 0..k {
                            let input = x[ci * n * n + (i * s + ki) * n + (j * s + kj)];
                            acc += input * c.kernels[((co * c.in_channels + ci) * k + ki) * k + kj];
                        }
                    }
                }
                *cell = c.norm * acc;
            }
        }
    }
    h.into_iter().flatten().flatten().collect()
}

fn conv_spec(n: usize, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> NetworkSpec {
    let (k, s) = (3, 2);
    let f = fmap_size(n, k, s).unwrap();
    let conv = ConvLayerSpec {
        in_channels: c_in,
        out_channels: c_out,
        input_size: n,
        kernel_size: k,
        stride: s,
        kernels: (0..c_out * c_in * k * k)
            .map(|_| rng.random_range(-WEIGHT_CEILING..=WEIGHT_CEILING))
            .collect(),
        biases: (0..c_out).map(|_| rng.random_range(-8e-6..=8e-6)).collect(),
        activation: Activation::Identity,
        norm: 1e4,
    };
    // pass-through readout: unit gain on every feature-map value
    let m = c_out * f * f;
    let mut weights = vec![0.0; m * m];
    for i in 0..m {
        weights[i * m + i] = WEIGHT_CEILING;
    }
    NetworkSpec {
        format: FORMAT_NOTE.into(),
        architecture: None,
        input_size: n,
        input_channels: c_in,
        output_neurons: m,
        layers: vec![
            LayerSpec::Conv(conv),
            LayerSpec::Linear(LinearLayerSpec {
                inputs: m,
                outputs: m,
                weights,
                biases: vec![0.0; m],
                activation: Activation::Identity,
                norm: 1.0 / WEIGHT_CEILING,
            }),
        ],
    }
}

fn conv_correctness() -> Check {
    let table = table4_calibration();
    let p = DeviceParams::table4();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for n in [6, 12] {
        for (c_in, c_out) in [(1, 1), (1, 3), (2, 2)] {
            let spec = conv_spec(n, c_in, c_out, &mut rng);
            let LayerSpec::Conv(conv) = &spec.layers[0] else {
                unreachable!()
            };
            let net =
                engine::compile(&spec, &table, &p, opts(Mode::Ideal)).map_err(|e| e.to_string())?;
            for _ in 0..10 {
                let x = random_voltages(c_in * n * n, &mut rng);
                let oracle = brute_force_conv(conv, &x);
                let digital = layer_preactivation(&spec.layers[0], &x);
                let analog = net
                    .run(&x, &mut rng, false)
                    .map_err(|e| e.to_string())?
                    .outputs;
                ensure(
                    oracle.len() == digital.len() && oracle.len() == analog.len(),
                    || {
                        format!(
                            "{n}×{n}: lengths {} / {} / {}",
                            oracle.len(),
                            digital.len(),
                            analog.len()
                        )
                    },
                )?;
                for ((o, d), a) in oracle.iter().zip(&digital).zip(&analog) {
                    let e = rel_err(*d, *o).max(rel_err(*a, *o));
                    worst = worst.max(e);
                    ensure(e <= 1e-10, || {
                        format!(
                            "{n}×{n} c{c_in}→{c_out}: oracle {o:e}, trainer {d:e}, engine {a:e}"
                        )
                    })?;
                }
            }
        }
    }
    let mut grid = 0;
    for n in 1..=40 {
        for k in [1, 3, 5, 7] {
            for stride in 1..=4 {
                let expect = (n as i64 - 2 * (k / 2) as i64).div_euclid(stride as i64);
                match fmap_size(n, k, stride) {
                    Ok(f) => ensure(f as i64 == expect, || {
                        format!("fmap({n},{k},{stride}) = {f}, want {expect}")
                    })?,
                    Err(_) => ensure(expect <= 0, || {
                        format!("fmap({n},{k},{stride}) rejected, want {expect}")
                    })?,
                }
                grid += 1;
            }
        }
    }
    Ok(format!(
        "6×6 and 12×12, 1–3 channels, max rel err {worst:.2e}; fmap grid of {grid} cases"
    ))
}

// 4 -----------------------------------------------------------------------

fn ga_recovery() -> Check {
    let started = Instant::now();
    let truth = DeviceParams::table4();
    let ramp = RampConfig::new(0.8, 0.8 / 8.0, 1);
    let reference = simulate_ramp_with(&truth, &ramp, 4).map_err(|e| e.to_string())?;
    let init = truth.scaled(1.5);
    let mut cfg = GaConfig::new(&init, 40, 4);
    cfg.population_size = 32;
    cfg.bounds = ParamBounds::around(&init, 10.0);
    cfg.frozen = vec![ParamName::Rext, ParamName::Rpp, ParamName::H0];
    let result = fit(&[reference], &init, &cfg).map_err(|e| e.to_string())?;
    let best: Vec<f64> = result.history.iter().map(|h| h.best_loss).collect();
    let ratio = best[best.len() - 1] / best[0];
    let secs = started.elapsed().as_secs_f64();
    let summary = format!(
        "gen-0 best {:.3e}, final best {:.3e}, ratio {ratio:.3} over {} generations, {secs:.0} s",
        best[0],
        best[best.len() - 1],
        best.len()
    );
    ensure(best.windows(2).all(|w| w[1] <= w[0]), || {
        format!("history increases: {best:?}")
    })?;
    ensure(ratio <= 0.05, || {
        format!("final/initial best loss {ratio:.3} > 0.05; {summary}")
    })?;
    ensure(secs < 600.0, || format!("too slow; {summary}"))?;
    Ok(summary)
}

// 5 -----------------------------------------------------------------------

fn device_properties() -> Check {
    let p = DeviceParams::table4();
    let mut areas = Vec::new();
    let mut worst_zero: f64 = 0.0;
    for rate in [0.8, 8.0, 80.0] {
        let mut ramp = RampConfig::new(0.8, 0.8 / rate, 2);
        ramp.variability = false;
        let trace = simulate_ramp_with(&p, &ramp, 5).map_err(|e| e.to_string())?;
        for s in trace.samples.iter().filter(|s| s.v == 0.0) {
            worst_zero = worst_zero.max(s.i.abs());
        }
        // second cycle: the first starts from the as-fabricated state
        let n = ramp.samples_per_cycle;
        let cycle: Vec<(f64, f64)> = trace.samples[n..=2 * n]
            .iter()
            .map(|s| (s.v, s.i))
            .collect();
        areas.push(loop_area(&cycle));
    }
    let d = VariabilityDraw::nominal(&p);
    for k in 0..=20 {
        let (_, i) = solve_terminal(0.0, k as f64 / 20.0, &d, &p).map_err(|e| e.to_string())?;
        worst_zero = worst_zero.max(i.abs());
    }
    let mut worst_drift: f64 = 0.0;
    for k in 0..=20 {
        let h = k as f64 / 20.0;
        let (v_dev, _) = solve_terminal(READ_VOLTAGE, h, &d, &p).map_err(|e| e.to_string())?;
        let after = step_state(h, v_dev, 1.0, &d, &p);
        let g0 = composite_conductance(h, &p, READ_VOLTAGE).map_err(|e| e.to_string())?;
        let g1 = composite_conductance(after, &p, READ_VOLTAGE).map_err(|e| e.to_string())?;
        worst_drift = worst_drift.max(rel_err(g1, g0));
    }
    let summary = format!(
        "max |I(0 V)| {worst_zero:.1e} A; loop areas 0.8/8/80 V/s = {:.3e}/{:.3e}/{:.3e} W; max 1 s read drift {:.2e}",
        areas[0], areas[1], areas[2], worst_drift
    );
    ensure(worst_zero < 1e-9, || format!("not pinched; {summary}"))?;
    ensure(areas.windows(2).all(|w| w[1] < w[0]), || {
        format!("loop area not strictly decreasing with rate; {summary}")
    })?;
    ensure(worst_drift < 0.01, || format!("read disturb; {summary}"))?;
    Ok(summary)
}

// 6 -----------------------------------------------------------------------

/// Farthest point from the end-to-end chord by explicit projection onto the
/// chord direction; lowest voltage wins ties.
fn exhaustive_set_voltage(branch: &[(f64, f64)]) -> f64 {
    let vs: Vec<f64> = branch.iter().map(|p| p.0).collect();
    let is: Vec<f64> = branch.iter().map(|p| p.1).collect();
    let span = |x: &[f64]| {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let ((vlo, vw), (ilo, iw)) = (span(&vs), span(&is));
    let pts: Vec<(f64, f64)> = branch
        .iter()
        .map(|&(v, i)| {
            (
                if vw > 0.0 { (v - vlo) / vw } else { 0.0 },
                if iw > 0.0 { (i - ilo) / iw } else { 0.0 },
            )
        })
        .collect();
    let a = pts[0];
    let b = pts[pts.len() - 1];
    let (ux, uy) = (b.0 - a.0, b.1 - a.1);
    let len2 = ux * ux + uy * uy;
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for (k, q) in pts.iter().enumerate() {
        let t = ((q.0 - a.0) * ux + (q.1 - a.1) * uy) / len2;
        let (fx, fy) = (a.0 + t * ux, a.1 + t * uy);
        let dist = ((q.0 - fx).powi(2) + (q.1 - fy).powi(2)).sqrt();
        let v = branch[k].0;
        if dist > best.0 + 1e-12 || ((dist - best.0).abs() <= 1e-12 && v < best.1) {
            best = (dist, v);
        }
    }
    best.1
}

fn characterization() -> Check {
    let p = DeviceParams::table4();
    let ramp = RampConfig::new(0.8, 0.8 / 8.0, 200);
    let trace = simulate_ramp_with(&p, &ramp, 6).map_err(|e| e.to_string())?;
    let split = split_cycles(&trace).map_err(|e| e.to_string())?;
    ensure(split.cycles.len() == 200, || {
        format!("{} cycles", split.cycles.len())
    })?;
    for (n, c) in split.cycles.iter().enumerate() {
        let got = extract_set_voltage(&c.set_branch).map_err(|e| e.to_string())?;
        let want = exhaustive_set_voltage(&c.set_branch);
        ensure(got == want, || {
            let d = chord_distances(&c.set_branch).unwrap();
            format!(
                "cycle {n}: chord {got} vs scan {want} (max d {:?})",
                d.iter().cloned().fold(0.0, f64::max)
            )
        })?;
    }
    let report = build_report(&trace, &DEFAULT_READ_VOLTAGES).map_err(|e| e.to_string())?;
    ensure(
        report.median_v_set > 0.1 && report.median_v_set < 0.4,
        || format!("set median {:.3} V", report.median_v_set),
    )?;
    ensure(report.median_v_reset < 0.0, || {
        format!("reset median {:.3} V", report.median_v_reset)
    })?;

    let mut dense_ramp = ramp;
    dense_ramp.samples_per_cycle *= 10;
    let dense = simulate_ramp_with(&p, &dense_ramp, 6).map_err(|e| e.to_string())?;
    let dense_report = build_report(&dense, &DEFAULT_READ_VOLTAGES).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (a, b) in report.cycles.iter().zip(&dense_report.cycles) {
        for (ra, rb) in a.reads.iter().zip(&b.reads) {
            worst = worst
                .max(rel_err(ra.i_hrs, rb.i_hrs))
                .max(rel_err(ra.i_lrs, rb.i_lrs));
        }
    }
    ensure(worst < 0.01, || {
        format!(
            "read current differs from 10× denser run by {:.2}%",
            100.0 * worst
        )
    })?;
    Ok(format!(
        "200 cycles match the scan oracle; set median {:.3} V, reset median {:.3} V; read-current error vs 10× denser {:.3}%",
        report.median_v_set,
        report.median_v_reset,
        100.0 * worst
    ))
}

// 7 -----------------------------------------------------------------------

fn mapping_round_trip() -> Check {
    let p = DeviceParams::table4();
    let table = table4_calibration();
    ensure(table.len() == 10_000, || format!("{} nodes", table.len()))?;
    ensure(table.g.windows(2).all(|w| w[1] >= w[0]), || {
        "table not monotone".into()
    })?;
    ensure(table.g_to_h(0.0).ok() == Some(0.0), || {
        "g_to_h(0) != 0".into()
    })?;
    let k = table.conductance_scale();
    let g0 = composite_conductance(0.0, &p, READ_VOLTAGE).map_err(|e| e.to_string())?;
    // oracle: the device model itself, not the table
    let realized = |h: f64| (composite_conductance(h, &p, READ_VOLTAGE).unwrap() - g0) / k;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for n in 0..1000 {
        let mag = (rng.random_range(1e-6f64.ln()..=8e-5f64.ln())).exp();
        let w = if n % 2 == 0 { mag } else { -mag };
        let s = table.weight_to_synapse(w).map_err(|e| e.to_string())?;
        ensure(s.h_plus == 0.0 || s.h_minus == 0.0, || {
            format!("{w:e}: both devices set")
        })?;
        let back = realized(s.h_plus) - realized(s.h_minus);
        let e = rel_err(back, w);
        worst = worst.max(e);
        ensure(e < 0.01, || format!("{w:e} reconstructs to {back:e}"))?;
    }
    Ok(format!(
        "1000 weights, max rel err {worst:.2e}; table monotone over 10000 nodes; gain k = {k:.4}"
    ))
}

// 8 -----------------------------------------------------------------------

fn random_small_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let w = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(-8e-5..=8e-5)
        }
    };
    let b = |rng: &mut ChaCha8Rng| rng.random_range(-8e-6..=8e-6);
    let acts = [
        Activation::Identity,
        Activation::Relu,
        Activation::SigmoidTenth,
    ];
    let use_conv = rng.random_bool(0.5);
    let n = rng.random_range(5..=8);
    let mut layers = Vec::new();
    let mut width;
    if use_conv {
        let c_out = rng.random_range(1..=2);
        let stride = rng.random_range(1..=2);
        let f = fmap_size(n, 3, stride).unwrap();
        layers.push(LayerSpec::Conv(ConvLayerSpec {
            in_channels: 1,
            out_channels: c_out,
            input_size: n,
            kernel_size: 3,
            stride,
            kernels: (0..c_out * 9).map(|_| w(rng)).collect(),
            biases: (0..c_out).map(|_| b(rng)).collect(),
            activation: acts[rng.random_range(0..3)],
            norm: 1e4,
        }));
        width = c_out * f * f;
    } else {
        width = n * n;
    }
    for depth in 0..rng.random_range(1..=2) {
        let last = depth == 1 || rng.random_bool(0.5);
        let outputs = if last { 10 } else { rng.random_range(2..=5) };
        layers.push(LayerSpec::Linear(LinearLayerSpec {
            inputs: width,
            outputs,
            weights: (0..width * outputs).map(|_| w(rng)).collect(),
            biases: (0..outputs).map(|_| b(rng)).collect(),
            activation: if last {
                Activation::Identity
            } else {
                acts[rng.random_range(0..3)]
            },
            norm: 1e4,
        }));
        width = outputs;
        if last {
            break;
        }
    }
    if width != 10 {
        layers.push(LayerSpec::Linear(LinearLayerSpec {
            inputs: width,
            outputs: 10,
            weights: (0..width * 10).map(|_| w(rng)).collect(),
            biases: (0..10).map(|_| b(rng)).collect(),
            activation: Activation::Identity,
            norm: 1e4,
        }));
    }
    NetworkSpec {
        format: FORMAT_NOTE.into(),
        architecture: Some("random".into()),
        input_size: n,
        input_channels: 1,
        output_neurons: 10,
        layers,
    }
}

fn counted_params(spec: &NetworkSpec) -> usize {
    spec.layers
        .iter()
        .map(|l| match l {
            LayerSpec::Linear(l) => l.weights.len() + l.biases.len(),
            LayerSpec::Conv(c) => {
                let f = fmap_size(c.input_size, c.kernel_size, c.stride).unwrap();
                f * f * c.out_channels * (c.in_channels * c.kernel_size * c.kernel_size + 1)
            }
        })
        .sum()
}

fn netlist_checks() -> Check {
    let table = calibrate(&DeviceParams::table4(), 1000, READ_VOLTAGE).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..100 {
        let spec = random_small_spec(&mut rng);
        spec.validate().map_err(|e| format!("spec {n}: {e}"))?;
        let net = netlist::compile(&spec, &table).map_err(|e| format!("spec {n}: {e}"))?;
        for params in [false, true] {
            let parsed = netlist::parse(&net.emit(params)).map_err(|e| format!("spec {n}: {e}"))?;
            ensure(parsed == net, || {
                format!("spec {n}: parse(emit) differs (params {params})")
            })?;
        }
        let law = 2 * counted_params(&spec);
        ensure(net.memristor_count() == law, || {
            format!("spec {n}: {} memristors, law {law}", net.memristor_count())
        })?;
        ensure(spec.memristor_count().unwrap() == law, || {
            format!("spec {n}: spec count")
        })?;
    }

    // one input, one neuron, one negative weight
    let spec = NetworkSpec {
        format: FORMAT_NOTE.into(),
        architecture: Some("single".into()),
        input_size: 1,
        input_channels: 1,
        output_neurons: 1,
        layers: vec![LayerSpec::Linear(LinearLayerSpec {
            inputs: 1,
            outputs: 1,
            weights: vec![-3e-5],
            biases: vec![0.0],
            activation: Activation::Identity,
            norm: 1000.0,
        })],
    };
    let net = netlist::compile(&spec, &table).map_err(|e| e.to_string())?;
    let text = net.emit(false);
    let h = netlist::format_value(table.g_to_h(3e-5).unwrap());
    let norm = netlist::format_value(1000.0 / table.conductance_scale());
    let expect = [
        "Vin000\tH0_0\t0\t0".to_string(),
        "VBias\tBias\t0\t1e-01".to_string(),
        "Xw1_0_0+\tH0_0\tH1_0+\tmemristor PARAMS: Hvalue=0".to_string(),
        format!("Xw1_0_0-\tH0_0\tH1_0-\tmemristor PARAMS: Hvalue={h}"),
        "Xb1_0+\tBias\tH1_0+\tmemristor PARAMS: Hvalue=0".to_string(),
        "Xb1_0-\tBias\tH1_0-\tmemristor PARAMS: Hvalue=0".to_string(),
        format!("XNeuron0\tH1_0+\tH1_0-\tOUTPUT0\tsimple PARAMS: norm={norm} bias=0"),
    ];
    let body: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('*') && !l.starts_with('.') && l.contains('\t'))
        .collect();
    ensure(body == expect, || {
        format!("emitted component lines:\n{}", body.join("\n"))
    })?;
    for l in &body[2..6] {
        let (head, _) = l.split_once(" PARAMS: ").unwrap();
        ensure(head.split('\t').count() == 4, || {
            format!("not 4 tokens: {l}")
        })?;
    }
    Ok(format!(
        "100 random specs round-trip with exact count law; 1-synapse lines match (Hvalue={h})"
    ))
}

// 9 -----------------------------------------------------------------------

fn estimators() -> Check {
    let e = EstimatorInputs::default();
    let (t, f) = estimate_timing(&e, &[256, 20]).map_err(|e| e.to_string())?;
    let power = estimate_power(&e, 30).map_err(|e| e.to_string())?;
    let shown = (
        format!("{:.1}", t * 1e9),
        format!("{:.1}", f / 1e6),
        format!("{power:.4}"),
    );
    let summary = format!("{} ns / {} MHz, {} W", shown.0, shown.1, shown.2);
    ensure(
        shown == ("27.6".into(), "36.2".into(), "0.1131".into()),
        || summary.clone(),
    )?;
    ensure(
        rel_err(t, 27.6e-9) < 1e-12 && rel_err(power, 0.1131) < 1e-12,
        || format!("not exact: {t:e} s, {power:e} W"),
    )?;
    Ok(summary)
}

// 10 ----------------------------------------------------------------------

/// Every artifact of a small pipeline, as bytes.
fn pipeline_artifacts(parallel: bool) -> Vec<(String, String)> {
    let seed = 10;
    let p = DeviceParams::table4();
    let mut out = Vec::new();

    let mut ramp = RampConfig::new(0.8, 0.1, 20);
    ramp.samples_per_cycle = 400;
    let trace = simulate_ramp_with(&p, &ramp, seed).unwrap();
    out.push(("trace.csv".into(), trace.to_csv()));
    let report = build_report(&trace, &DEFAULT_READ_VOLTAGES).unwrap();
    out.push(("per_cycle.csv".into(), report.per_cycle_csv()));

    let mut short = RampConfig::new(0.8, 0.1, 1);
    short.samples_per_cycle = 200;
    let reference = simulate_ramp_with(&p, &short, seed).unwrap();
    let init = p.scaled(1.3);
    let mut ga = GaConfig::new(&init, 4, seed);
    ga.population_size = 8;
    ga.parallel = parallel;
    let fitted = fit(&[reference], &init, &ga).unwrap();
    out.push(("fit.json".into(), fitted.best.to_json()));
    out.push(("loss.csv".into(), fitted.history_csv()));

    let table = calibrate(&p, 2000, READ_VOLTAGE).unwrap();
    out.push(("calibration.csv".into(), table.to_csv()));

    let (train_set, test) = (
        mnist_split("train", 12).head(600),
        mnist_split("t10k", 12).head(100),
    );
    let mut cfg = TrainConfig::new(Architecture::FcSimple, 12);
    cfg.epochs = 1;
    cfg.seed = seed;
    let trained = trainer::train(&cfg, &train_set, &test).unwrap();
    out.push(("network.json".into(), trained.spec.to_json()));
    out.push(("log.csv".into(), trained.log_csv()));

    out.push((
        "netlist.cir".into(),
        netlist::compile(&trained.spec, &table).unwrap().emit(true),
    ));
    let net = engine::compile(&trained.spec, &table, &p, opts(Mode::Nonlinear)).unwrap();
    out.push(("engine.json".into(), net.to_json()));
    let eval = net.evaluate(&test, 3, seed, true, parallel).unwrap();
    out.push((
        "predictions".into(),
        format!("{:?} {}", eval.predictions, eval.accuracy),
    ));
    let mc = net
        .monte_carlo(&test.voltages(0), 8, seed, true, parallel)
        .unwrap();
    out.push(("mc.csv".into(), engine::monte_carlo_csv(&mc)));
    out
}

fn determinism() -> Check {
    let run = |threads: usize, parallel: bool| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pipeline_artifacts(parallel))
    };
    let reference = run(1, false);
    let mut compared = 0;
    for (threads, parallel) in [(1, true), (4, true), (4, true), (3, false)] {
        let other = run(threads, parallel);
        for ((name, a), (_, b)) in reference.iter().zip(&other) {
            ensure(a == b, || {
                format!("{name} differs with {threads} workers (parallel {parallel})")
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{} artifacts identical across 5 runs with 1–4 workers ({compared} comparisons)",
        reference.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("digital equivalence", digital_equivalence),
        ("table 5 reproduction", table5_reproduction),
        ("conv correctness", conv_correctness),
        ("GA synthetic recovery", ga_recovery),
        ("device-model properties", device_properties),
        ("characterization", characterization),
        ("mapping round trip", mapping_round_trip),
        ("netlist", netlist_checks),
        ("estimators", estimators),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
