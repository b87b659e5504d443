//! memxbar command-line workflow: device simulation, characterization,
//! parameter fitting, calibration, training, compilation and evaluation.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memxbar::characterization::{build_report, DEFAULT_READ_VOLTAGES};
use memxbar::device::{simulate_ramp_with, DeviceParams, IVTrace, RampConfig};
use memxbar::engine::{self, EngineOptions, EstimatorInputs, Mode, Report, ReportRow};
use memxbar::genetic::{fit, GaConfig};
use memxbar::mapping::{calibrate, CalibrationTable, DEFAULT_CALIBRATION_POINTS};
use memxbar::netlist::{self, NetworkSpec};
use memxbar::trainer::{self, Architecture, Dataset, TrainConfig, EVAL_IMAGES};
use memxbar::Error;

#[derive(Parser, Debug)]
#[command(
    name = "memxbar",
    version,
    about = "Memristor crossbar neural-network workflow"
)]
struct Cli {
    /// Directory holding every produced artifact.
    #[arg(
        long,
        global = true,
        env = "MEMXBAR_ARTIFACTS",
        default_value = "artifacts"
    )]
    artifacts: PathBuf,
    /// Root seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate triangular voltage sweeps and write I-V traces.
    SimulateDevice(SimulateArgs),
    /// Extract set/reset voltages, CDFs and read currents from a trace.
    Characterize(CharacterizeArgs),
    /// Fit device parameters to reference traces with the genetic algorithm.
    Fit(FitArgs),
    /// Build the state-to-conductance calibration table.
    Calibrate(CalibrateArgs),
    /// Train a hardware-constrained network on MNIST.
    Train(TrainArgs),
    /// Map a trained network onto devices: netlist text plus engine spec.
    Compile(CompileArgs),
    /// Run analog inference and record digital vs analog accuracy.
    Evaluate(EvaluateArgs),
    /// Print the accuracy table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Device parameter JSON (default: built-in fitted set).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Sweep amplitude (volts).
    #[arg(long, default_value_t = 0.8)]
    amplitude: f64,
    /// Duration of one quarter of the triangle (seconds); repeatable.
    /// Default: three sweeps at 0.8, 8 and 80 V/s.
    #[arg(long)]
    period: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    cycles: usize,
    #[arg(long, default_value_t = RampConfig::DEFAULT_SAMPLES_PER_CYCLE)]
    samples_per_cycle: usize,
    /// Disable cycle-to-cycle variability.
    #[arg(long)]
    no_variability: bool,
    /// Output directory (default: <artifacts>/traces).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CharacterizeArgs {
    /// I-V trace CSV (`t,v,i`).
    trace: PathBuf,
    /// Read voltages for HRS/LRS currents.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_READ_VOLTAGES)]
    read_voltages: Vec<f64>,
    /// Output directory (default: <artifacts>/characterization/<trace stem>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Reference traces (default: every CSV in <artifacts>/traces).
    #[arg(long)]
    refs: Vec<PathBuf>,
    /// Initial parameter JSON (default: built-in initial set, same as
    /// configs/table3.json).
    #[arg(long)]
    init: Option<PathBuf>,
    /// GA settings file (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    generations: Option<usize>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Device parameter JSON (default: built-in fitted set).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_POINTS)]
    points: usize,
    #[arg(long, default_value_t = memxbar::device::READ_VOLTAGE)]
    v_read: f64,
}

#[derive(Args, Debug, Clone)]
struct NetworkSelect {
    /// fc_simple | fc_double | cv_simple | cv_double | fc_double_sigmoid
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    /// Input side in pixels (12 or 16).
    #[arg(long, value_parser = parse_size)]
    size: usize,
}

impl NetworkSelect {
    fn name(&self) -> String {
        format!("{}_{}", self.arch.id(), self.size)
    }
}

fn parse_size(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(n @ (12 | 16)) => Ok(n),
        _ => Err(format!("`{s}` is not a supported input size (12 or 16)")),
    }
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    net: NetworkSelect,
    /// Training settings file (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the MNIST IDX files (optionally gzipped).
    #[arg(long, env = "MEMXBAR_DATA", default_value = "data/mnist")]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Use only the first N training images.
    #[arg(long)]
    train_limit: Option<usize>,
}

#[derive(Args, Debug)]
struct CompileArgs {
    #[command(flatten)]
    net: NetworkSelect,
    /// Device parameter JSON; must match the calibration table.
    #[arg(long)]
    params: Option<PathBuf>,
    /// nonlinear | linear | ideal
    #[arg(long, default_value = "nonlinear", value_parser = parse_mode)]
    mode: Mode,
    /// Draw variability independently for every device.
    #[arg(long)]
    per_device: bool,
    /// Let states drift during a read pulse of this length (seconds).
    #[arg(long)]
    disturb: Option<f64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    net: NetworkSelect,
    #[arg(long, env = "MEMXBAR_DATA", default_value = "data/mnist")]
    data: PathBuf,
    /// Runs per input; the prediction is the majority vote.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Number of leading test images to classify.
    #[arg(long, default_value_t = EVAL_IMAGES)]
    images: usize,
    #[arg(long)]
    no_variability: bool,
    /// Also export Monte-Carlo outputs for this test image.
    #[arg(long)]
    mc_input: Option<usize>,
    #[arg(long, default_value_t = 20)]
    mc_runs: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Print the JSON instead of the table.
    #[arg(long)]
    json: bool,
}

/// Failures with their exit status.
enum Failure {
    Usage(String),
    Missing {
        path: PathBuf,
        producer: &'static str,
    },
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Missing { .. } => 2,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) => 1,
                Error::Numerical(_) | Error::Training { .. } => 3,
                _ => 2,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Missing { path, producer } => format!(
                "{} not found; run `memxbar {producer}` first",
                path.display()
            ),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Directory layout under the artifacts root.
struct Project {
    root: PathBuf,
    seed: u64,
}

impl Project {
    fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }
    fn calibration(&self) -> PathBuf {
        self.root.join("calibration.csv")
    }
    fn network(&self, name: &str) -> PathBuf {
        self.root.join("networks").join(format!("{name}.json"))
    }
    fn engine(&self, name: &str) -> PathBuf {
        self.root.join("engines").join(format!("{name}.json"))
    }
    fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn require(
        &self,
        path: PathBuf,
        producer: &'static str,
    ) -> std::result::Result<PathBuf, Failure> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Failure::Missing { path, producer })
        }
    }
}

fn mkdirs(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Core(Error::io(dir, e)))
}

fn load_params(
    path: Option<&Path>,
    fallback: DeviceParams,
) -> std::result::Result<DeviceParams, Failure> {
    match path {
        Some(p) => Ok(DeviceParams::load(p)?),
        None => Ok(fallback),
    }
}

/// `0.8` → "0.8", `8.000000000000002` → "8".
fn rate_label(rate: f64) -> String {
    let s = format!("{rate:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn simulate_device(pr: &Project, a: &SimulateArgs) -> Outcome {
    let p = load_params(a.params.as_deref(), DeviceParams::table4())?;
    let periods = if a.period.is_empty() {
        [0.8, 8.0, 80.0].iter().map(|r| a.amplitude / r).collect()
    } else {
        a.period.clone()
    };
    let dir = a.out_dir.clone().unwrap_or_else(|| pr.traces());
    mkdirs(&dir)?;
    for period in periods {
        let cfg = RampConfig {
            amplitude: a.amplitude,
            period,
            cycles: a.cycles,
            samples_per_cycle: a.samples_per_cycle,
            variability: !a.no_variability,
        };
        let trace = simulate_ramp_with(&p, &cfg, pr.seed)?;
        let path = dir.join(format!("ramp_{}Vps.csv", rate_label(cfg.ramp_rate())));
        trace.write_csv(&path)?;
        println!(
            "{}: {} samples, {} cycles at {} V/s",
            path.display(),
            trace.samples.len(),
            trace.cycles,
            rate_label(cfg.ramp_rate())
        );
    }
    Ok(())
}

fn characterize(pr: &Project, a: &CharacterizeArgs) -> Outcome {
    let trace = IVTrace::read_csv(&a.trace)?;
    let report = build_report(&trace, &a.read_voltages)?;
    let stem = a
        .trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    let dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| pr.root.join("characterization").join(stem));
    report.write_bundle(&dir)?;
    println!(
        "{}: {} cycles ({} dropped), median set {:.4} V, median reset {:.4} V",
        dir.display(),
        report.cycles.len(),
        report.dropped_cycles,
        report.median_v_set,
        report.median_v_reset
    );
    Ok(())
}

fn fit_cmd(pr: &Project, a: &FitArgs) -> Outcome {
    let ref_paths = if a.refs.is_empty() {
        let dir = pr.require(pr.traces(), "simulate-device")?;
        let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        found.sort();
        if found.is_empty() {
            return Err(Failure::Missing {
                path: dir.join("*.csv"),
                producer: "simulate-device",
            });
        }
        found
    } else {
        a.refs.clone()
    };
    let refs = ref_paths
        .iter()
        .map(IVTrace::read_csv)
        .collect::<memxbar::Result<Vec<_>>>()?;
    let init = load_params(a.init.as_deref(), DeviceParams::table3())?;
    let mut cfg = GaConfig::new(&init, 40, pr.seed);
    if let Some(path) = &a.config {
        config::apply_ga(&mut cfg, &init, &config::load(path)?)?;
    }
    if let Some(g) = a.generations {
        cfg.generations = g;
    }
    let result = fit(&refs, &init, &cfg)?;
    let dir = pr.root.join("fit");
    mkdirs(&dir)?;
    result.write(dir.join("params.json"), dir.join("loss.csv"))?;
    println!(
        "fit over {} reference trace(s): best loss {:e} after {} generations -> {}",
        refs.len(),
        result.best_loss,
        cfg.generations,
        dir.display()
    );
    Ok(())
}

fn calibrate_cmd(pr: &Project, a: &CalibrateArgs) -> Outcome {
    let p = load_params(a.params.as_deref(), DeviceParams::table4())?;
    let table = calibrate(&p, a.points, a.v_read)?;
    mkdirs(&pr.root)?;
    table.write(pr.calibration())?;
    println!(
        "{}: {} points, swing {:e} S, conductance scale {:.4}",
        pr.calibration().display(),
        table.len(),
        table.swing(),
        table.conductance_scale()
    );
    Ok(())
}

fn idx_file(dir: &Path, stem: &str) -> std::result::Result<PathBuf, Failure> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Failure::Core(Error::Format(format!(
        "{}: missing {stem}[.gz]",
        dir.display()
    ))))
}

fn load_split(dir: &Path, prefix: &str, size: usize) -> std::result::Result<Dataset, Failure> {
    let images = idx_file(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = idx_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    Ok(trainer::load_idx(images, labels)?.resized(size)?)
}

fn train_cmd(pr: &Project, a: &TrainArgs) -> Outcome {
    let mut cfg = TrainConfig::new(a.net.arch, a.net.size);
    cfg.seed = pr.seed;
    if let Some(path) = &a.config {
        config::apply_train(&mut cfg, &config::load(path)?)?;
        if cfg.architecture != a.net.arch || cfg.input_size != a.net.size {
            return Err(Failure::Usage(format!(
                "config describes {} {}×{}, command line asks for {} {}×{}",
                cfg.architecture,
                cfg.input_size,
                cfg.input_size,
                a.net.arch,
                a.net.size,
                a.net.size
            )));
        }
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(n) = a.train_limit {
        cfg.train_limit = n;
    }
    let train_set = load_split(&a.data, "train", a.net.size)?;
    let test = load_split(&a.data, "t10k", a.net.size)?;
    let result = trainer::train(&cfg, &train_set, &test)?;
    let name = a.net.name();
    let spec_path = pr.network(&name);
    mkdirs(spec_path.parent().expect("network path has a parent"))?;
    result.write(
        &spec_path,
        pr.root.join("networks").join(format!("{name}_log.csv")),
    )?;
    println!(
        "{}: digital accuracy {:.3} on {} test images",
        spec_path.display(),
        result.accuracy,
        test.len().min(EVAL_IMAGES)
    );
    Ok(())
}

fn compile_cmd(pr: &Project, a: &CompileArgs) -> Outcome {
    let name = a.net.name();
    let spec = NetworkSpec::load(pr.require(pr.network(&name), "train")?)?;
    let table = CalibrationTable::read(pr.require(pr.calibration(), "calibrate")?)?;
    let p = load_params(a.params.as_deref(), DeviceParams::table4())?;
    if table.fingerprint != p.fingerprint() {
        return Err(Failure::Usage(
            "calibration table was built for different device parameters; rerun `memxbar calibrate` with the same --params".into(),
        ));
    }
    let options = EngineOptions {
        mode: a.mode,
        per_device: a.per_device,
        disturb: a.disturb,
    };
    let net = engine::compile(&spec, &table, &p, options)?;
    let netlist = netlist::compile(&spec, &table)?;
    let cir = pr.root.join("netlists").join(format!("{name}.cir"));
    mkdirs(cir.parent().expect("netlist path has a parent"))?;
    std::fs::write(&cir, netlist.emit(true)).map_err(|e| Error::io(&cir, e))?;
    let eng = pr.engine(&name);
    mkdirs(eng.parent().expect("engine path has a parent"))?;
    net.save(&eng)?;
    println!(
        "{} and {}: {} memristors, {} neurons",
        cir.display(),
        eng.display(),
        net.memristor_count(),
        net.neuron_count()
    );
    Ok(())
}

fn evaluate_cmd(pr: &Project, a: &EvaluateArgs) -> Outcome {
    let name = a.net.name();
    let spec = NetworkSpec::load(pr.require(pr.network(&name), "train")?)?;
    let net = engine::AnalogNetwork::load(pr.require(pr.engine(&name), "compile")?)?;
    let test = load_split(&a.data, "t10k", a.net.size)?.head(a.images);
    let variability = !a.no_variability;
    let digital = trainer::accuracy(&spec, &test);
    let eval = net.evaluate(&test, a.runs, pr.seed, variability, true)?;
    let est = EstimatorInputs::default();
    let (t, f) = engine::estimate_timing(&est, &net.devices_in_parallel())?;
    let power = engine::estimate_power(&est, net.neuron_count())?;
    let row = ReportRow {
        architecture: a.net.arch.id().to_string(),
        input_size: a.net.size,
        digital_accuracy: digital,
        analog_accuracy: eval.accuracy,
        ratio: if digital > 0.0 {
            eval.accuracy / digital
        } else {
            0.0
        },
        runs_per_input: a.runs,
        images: test.len(),
        inputs_with_violations: eval.inputs_with_violations,
        mode: net.options.mode,
        variability,
        timing_seconds: t,
        frequency_hz: f,
        power_watts: power,
    };
    println!(
        "{name}: digital {:.3}, analog {:.3}, ratio {:.3}, {} input(s) with safe-window violations",
        row.digital_accuracy, row.analog_accuracy, row.ratio, row.inputs_with_violations
    );
    let mut report = if pr.report().exists() {
        Report::load(pr.report())?
    } else {
        Report::default()
    };
    report.upsert(row);
    report.save(pr.report())?;

    if let Some(k) = a.mc_input {
        if k >= test.len() {
            return Err(Failure::Usage(format!(
                "--mc-input {k} is outside the {} evaluated images",
                test.len()
            )));
        }
        let seed = memxbar::seeds::derive(
            pr.seed,
            &[memxbar::seeds::stage::ENGINE, u64::MAX, k as u64],
        );
        let runs = net.monte_carlo(&test.voltages(k), a.mc_runs, seed, variability, true)?;
        let path = pr.root.join("mc").join(format!("{name}_input{k}.csv"));
        mkdirs(path.parent().expect("mc path has a parent"))?;
        std::fs::write(&path, engine::monte_carlo_csv(&runs)).map_err(|e| Error::io(&path, e))?;
        println!(
            "{}: {} runs, label {}",
            path.display(),
            runs.len(),
            test.labels[k]
        );
    }
    Ok(())
}

fn report_cmd(pr: &Project, a: &ReportArgs) -> Outcome {
    let report = Report::load(pr.require(pr.report(), "evaluate")?)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let pr = Project {
        root: cli.artifacts,
        seed: cli.seed,
    };
    match &cli.command {
        Command::SimulateDevice(a) => simulate_device(&pr, a),
        Command::Characterize(a) => characterize(&pr, a),
        Command::Fit(a) => fit_cmd(&pr, a),
        Command::Calibrate(a) => calibrate_cmd(&pr, a),
        Command::Train(a) => train_cmd(&pr, a),
        Command::Compile(a) => compile_cmd(&pr, a),
        Command::Evaluate(a) => evaluate_cmd(&pr, a),
        Command::Report(a) => report_cmd(&pr, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
