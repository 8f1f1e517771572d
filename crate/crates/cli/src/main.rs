mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use manifest::{load_config, Manifest};
use xbar::calibration::{analytic_symmetry_points, zero_shift_calibrate, CalibrationConfig};
use xbar::dataset::load_dir;
use xbar::device::{fit_soft_bound, synthetic_trace, DeviceKind, DeviceVariation, PulseTrace, SoftBoundParams, TraceSpec};
use xbar::experiments::{self, log_grid, SweepSpec};
use xbar::network::{
    train_with, write_epochs_csv, write_weights_hist_csv, Activation, AnalogDevice, DeviceSpec, Network, TrainerConfig,
};
use xbar::rng::stream_rng;
use xbar::tile::{AnalogConfig, CrossbarTile, InitSpec, PulseUpdateConfig, TileConfig};

const DATA_ENV: &str = "XBAR_MNIST_DIR";
const DEFAULT_DATA: &str = "data/mnist-subset";

/// Cross-point array training simulator.
#[derive(Parser)]
#[command(name = "xbar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the MNIST classifier once.
    Train(TrainArgs),
    /// Run a parameter sweep from a JSON spec.
    Sweep(SweepArgs),
    /// Zero-shift calibration demo on a small tile.
    Calibrate(CalibrateArgs),
    /// Fit Soft-Bound parameters to a pulse trace CSV.
    Fit(FitArgs),
    /// Generate a synthetic pulse trace.
    GenTrace(GenTraceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DeviceArg {
    Float,
    Linear,
    Softbound,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct DataArgs {
    /// Directory with train-/t10k- IDX files (optionally .gz) [env: XBAR_MNIST_DIR]
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArgs {
    fn dir(&self) -> PathBuf {
        self.data
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA))
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Trainer config JSON (or a previous run's manifest.json); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, value_enum)]
    device: Option<DeviceArg>,
    /// Mean step at zero weight
    #[arg(long)]
    dw0: Option<f64>,
    /// Device bound magnitude
    #[arg(long)]
    wmax: Option<f64>,
    /// Absolute symmetry point of the nominal device
    #[arg(long, allow_hyphen_values = true)]
    wsym: Option<f64>,
    #[arg(long, value_enum)]
    zero_shift: Option<Switch>,
    /// Train on the first N training images only
    #[arg(long)]
    train_limit: Option<usize>,
    /// Evaluate on the first N test images only
    #[arg(long)]
    test_limit: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Sigmoid,
    Tanh,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    /// Every cell as listed in the spec
    Grid,
    /// Balanced devices only (w_sym = 0, no zero-shifting)
    Contour,
    /// Symmetry-point sweep as listed in the spec
    Wsym,
    /// ±w_sym under both sigmoid and tanh
    Activation,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON (or a previous sweep's manifest.json)
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grid")]
    mode: SweepMode,
    /// 30 epochs on a 9×9 grid spanning the spec's ranges
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct CalibrateConfig {
    rows: usize,
    cols: usize,
    dw0: f64,
    w_max: f64,
    w_sym: f64,
    variation: DeviceVariation,
    n_pairs: usize,
    trace_device: usize,
    seed: u64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            rows: 4,
            cols: 4,
            dw0: 0.01,
            w_max: 1.0,
            w_sym: 0.3,
            variation: DeviceVariation::default(),
            n_pairs: xbar::calibration::DEFAULT_PAIRS,
            trace_device: 0,
            seed: 0,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Calibration config JSON (or a previous run's manifest.json)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    dw0: Option<f64>,
    #[arg(long)]
    wmax: Option<f64>,
    /// Absolute symmetry point of the nominal device
    #[arg(long, allow_hyphen_values = true)]
    wsym: Option<f64>,
    /// Relative spread of device-to-device variation (steps and bounds)
    #[arg(long)]
    dtod: Option<f64>,
    /// Relative cycle-to-cycle spread of each pulse
    #[arg(long)]
    ctoc: Option<f64>,
    /// Number of (up, down) pulse pairs
    #[arg(long)]
    pairs: Option<usize>,
    /// Device (row-major index) whose pulse-by-pulse trace is written
    #[arg(long)]
    trace_device: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Trace CSV with header pulse_index,direction,weight
    #[arg(long)]
    trace: PathBuf,
    /// Directory for fit.json and manifest.json; the fit is printed either way
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenTraceConfig {
    #[serde(flatten)]
    spec: TraceSpec,
    seed: u64,
}

#[derive(Args)]
struct GenTraceArgs {
    /// Trace generator config JSON (or a previous run's manifest.json)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dw0_plus: Option<f64>,
    #[arg(long)]
    dw0_minus: Option<f64>,
    #[arg(long)]
    wmax: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    wmin: Option<f64>,
    /// Initial weight
    #[arg(long, allow_hyphen_values = true)]
    w0: Option<f64>,
    /// Number of (up run, down run) cycles
    #[arg(long)]
    cycles: Option<usize>,
    /// Pulses per run
    #[arg(long)]
    pulses: Option<usize>,
    /// Gaussian noise on each reading
    #[arg(long)]
    read_noise: Option<f64>,
    /// Relative cycle-to-cycle spread of each pulse
    #[arg(long)]
    ctoc: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (trace.csv, manifest.json)
    #[arg(long)]
    out: PathBuf,
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = SystemTime::now();
    let t0 = Instant::now();
    let mut cfg: TrainerConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => TrainerConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(act) = a.activation {
        cfg.activation = act.into();
    }
    if a.train_limit.is_some() {
        cfg.train_limit = a.train_limit;
    }
    if a.test_limit.is_some() {
        cfg.test_limit = a.test_limit;
    }
    match a.device {
        Some(DeviceArg::Float) => cfg.device = DeviceSpec::Float,
        Some(kind @ (DeviceArg::Linear | DeviceArg::Softbound)) => {
            let mut dev = match &cfg.device {
                DeviceSpec::Analog(d) => d.clone(),
                DeviceSpec::Float => AnalogDevice::default(),
            };
            dev.kind = match kind {
                DeviceArg::Linear => DeviceKind::Linear,
                _ => DeviceKind::SoftBound,
            };
            cfg.device = DeviceSpec::Analog(dev);
        }
        None => {}
    }
    let device_flags = a.dw0.is_some() || a.wmax.is_some() || a.wsym.is_some() || a.zero_shift.is_some();
    match &mut cfg.device {
        DeviceSpec::Analog(dev) => {
            if let Some(v) = a.dw0 {
                dev.dw0 = v;
            }
            if let Some(v) = a.wmax {
                dev.w_max = v;
            }
            if let Some(v) = a.wsym {
                dev.w_sym = v;
            }
            if let Some(z) = a.zero_shift {
                dev.zero_shift = z == Switch::On;
            }
        }
        DeviceSpec::Float if device_flags => bail!("--dw0/--wmax/--wsym/--zero-shift need an analog device"),
        DeviceSpec::Float => {}
    }
    cfg.validate()?;

    let data_dir = a.data.dir();
    let (train_set, test_set) =
        load_dir(&data_dir).with_context(|| format!("loading data from {}", data_dir.display()))?;
    create_out(&a.out)?;
    let built = Network::build(&cfg)?;
    let mut net = built.network;
    let records = train_with(&mut net, &train_set, &test_set, &cfg, |r| {
        let err = r.test_error_pct.map_or("-".to_string(), |e| format!("{e:.2}%"));
        eprintln!("epoch {:>3}  lr {:.5}  loss {:.4}  test error {err}", r.epoch, r.lr, r.train_loss);
    })?;
    write_epochs_csv(&records, BufWriter::new(File::create(a.out.join("epochs.csv"))?))?;
    write_weights_hist_csv(&records, BufWriter::new(File::create(a.out.join("weights_hist.csv"))?))?;
    Manifest::new("train", Some(cfg.seed), serde_json::to_value(&cfg)?, started, t0.elapsed()).write(&a.out)
}

fn refine(grid: &[f64]) -> Vec<f64> {
    match (grid.first(), grid.last()) {
        (Some(&lo), Some(&hi)) if grid.len() > 1 => log_grid(lo, hi, 9),
        _ => grid.to_vec(),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let started = SystemTime::now();
    let t0 = Instant::now();
    let mut spec: SweepSpec = match &a.spec {
        Some(p) => load_config(p)?,
        None => SweepSpec::default(),
    };
    if a.full {
        spec.base.epochs = 30;
        spec.dw0 = refine(&spec.dw0);
        spec.w_max = refine(&spec.w_max);
    }
    spec.validate()?;
    let data_dir = a.data.dir();
    let (train_set, test_set) =
        load_dir(&data_dir).with_context(|| format!("loading data from {}", data_dir.display()))?;
    create_out(&a.out)?;
    let result = match a.mode {
        SweepMode::Grid => experiments::run_sweep(&spec, &train_set, &test_set)?,
        SweepMode::Contour => experiments::run_contour(&spec, &train_set, &test_set)?,
        SweepMode::Wsym => experiments::run_wsym_sweep(&spec, &train_set, &test_set)?,
        SweepMode::Activation => experiments::activation_comparison(&spec, &train_set, &test_set)?,
    };
    let failed = result.records.iter().filter(|r| r.error.is_some()).count();
    experiments::write_outputs(&a.out, &spec, &result)?;
    if let Ok(curve) = experiments::min_error_curve(&result) {
        for p in curve {
            eprintln!(
                "{:<8} w_sym {:>6.3}  zero-shift {:<5}  min error {:.2}%",
                p.activation.name(),
                p.w_sym,
                p.zero_shift,
                p.min_error_pct
            );
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see results.csv", result.records.len());
    }
    Manifest::new("sweep", Some(spec.seed), serde_json::to_value(&spec)?, started, t0.elapsed()).write(&a.out)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let started = SystemTime::now();
    let t0 = Instant::now();
    let mut cfg: CalibrateConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => CalibrateConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:expr),*) => { $(if let Some(v) = a.$flag { $field = v; })* };
    }
    set!(rows => cfg.rows, cols => cfg.cols, dw0 => cfg.dw0, wmax => cfg.w_max, wsym => cfg.w_sym,
         pairs => cfg.n_pairs, trace_device => cfg.trace_device, seed => cfg.seed);
    if let Some(v) = a.dtod {
        cfg.variation.dtod_dw0_std = v;
        cfg.variation.dtod_bound_std = v;
    }
    if let Some(v) = a.ctoc {
        cfg.variation.ctoc_dw0_std = v;
    }
    let mut tile = CrossbarTile::new(TileConfig {
        rows: cfg.rows,
        cols: cfg.cols,
        nominal: SoftBoundParams::from_imbalance(cfg.dw0, cfg.w_max, cfg.w_sym)?,
        kind: DeviceKind::SoftBound,
        variation: cfg.variation,
        analog: AnalogConfig::default(),
        pulse: PulseUpdateConfig::default(),
        init: InitSpec::Uniform(cfg.w_max),
        seed: cfg.seed,
    })?;
    let cal = CalibrationConfig {
        n_pairs: cfg.n_pairs,
        trace_device: Some(cfg.trace_device),
    };
    let report = zero_shift_calibrate(&mut tile, &cal, &mut stream_rng(cfg.seed, 2))?;
    create_out(&a.out)?;
    let wsym = analytic_symmetry_points(&tile);
    report.write_csv(&wsym, BufWriter::new(File::create(a.out.join("convergence.csv"))?))?;
    if let Some(trace) = &report.trace {
        trace.write_csv(BufWriter::new(File::create(a.out.join("trace.csv"))?))?;
    }
    let res = report.residuals(&wsym);
    let max = res.iter().copied().fold(0.0, f64::max);
    let mean = res.iter().sum::<f64>() / res.len() as f64;
    eprintln!("{} devices, {} pairs: |w - w_sym| mean {mean:.4}, max {max:.4}", res.len(), cfg.n_pairs);
    Manifest::new("calibrate", Some(cfg.seed), serde_json::to_value(&cfg)?, started, t0.elapsed()).write(&a.out)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let started = SystemTime::now();
    let t0 = Instant::now();
    let file = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let trace = PulseTrace::read_csv(file).with_context(|| format!("reading {}", a.trace.display()))?;
    let report = fit_soft_bound(&trace)?;
    let params = report.params();
    let out = serde_json::json!({
        "params": params.as_ref().ok(),
        "params_error": params.as_ref().err().map(|e| e.to_string()),
        "symmetry_point": params.as_ref().ok().map(|p| p.symmetry_point()),
        "report": report,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    if let Some(dir) = &a.out {
        create_out(dir)?;
        fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&out)? + "\n")?;
        let cfg = serde_json::json!({ "trace": a.trace });
        Manifest::new("fit", None, cfg, started, t0.elapsed()).write(dir)?;
    }
    Ok(())
}

fn cmd_gen_trace(a: GenTraceArgs) -> Result<()> {
    let started = SystemTime::now();
    let t0 = Instant::now();
    let mut cfg: GenTraceConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => GenTraceConfig {
            spec: TraceSpec {
                params: SoftBoundParams::new(0.012, 0.008, 1.0, -1.0)?,
                kind: DeviceKind::SoftBound,
                w0: 0.0,
                cycles: 3,
                pulses_per_run: 300,
                read_noise_std: 0.0,
                ctoc_std: 0.0,
            },
            seed: 0,
        },
    };
    let p = &mut cfg.spec.params;
    macro_rules! set {
        ($($flag:ident => $field:expr),*) => { $(if let Some(v) = a.$flag { $field = v; })* };
    }
    set!(dw0_plus => p.dw0_plus, dw0_minus => p.dw0_minus, wmax => p.w_max, wmin => p.w_min,
         w0 => cfg.spec.w0, cycles => cfg.spec.cycles, pulses => cfg.spec.pulses_per_run,
         read_noise => cfg.spec.read_noise_std, ctoc => cfg.spec.ctoc_std, seed => cfg.seed);
    let trace = synthetic_trace(&cfg.spec, &mut stream_rng(cfg.seed, 0))?;
    create_out(&a.out)?;
    trace.write_csv(BufWriter::new(File::create(a.out.join("trace.csv"))?))?;
    Manifest::new("gen-trace", Some(cfg.seed), serde_json::to_value(&cfg)?, started, t0.elapsed()).write(&a.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
