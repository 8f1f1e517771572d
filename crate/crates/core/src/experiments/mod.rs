//! Parameter sweeps over device models.
//!
//! A [`SweepSpec`] expands into cells (activation × w_sym × zero-shift ×
//! (Δw₀, w_max) × seed). Cells are independent training runs; each gets a
//! seed derived from the master seed and its (Δw₀, w_max, seed) coordinates,
//! so the same grid point sees the same random numbers under every w_sym,
//! zero-shift and activation setting, and results do not depend on how
//! many cells run at once.

mod analysis;
mod output;

pub use analysis::{
    activation_asymmetry, is_interior_minimum, min_error_curve, spearman, states_scatter, MinErrorPoint,
};
pub use output::{read_results_csv, write_outputs, write_results_csv};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::exec::{map_indexed, Execution};
use crate::network::{train, Activation, AnalogDevice, DeviceSpec, EpochRecord, Network, TrainerConfig};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("no results for {0}")]
    EmptySlice(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Sweep definition, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// Δw₀ grid; crossed with `w_max` unless `pairs` is given.
    pub dw0: Vec<f64>,
    pub w_max: Vec<f64>,
    /// Explicit `[dw0, w_max]` cells, replacing the grid.
    pub pairs: Option<Vec<[f64; 2]>>,
    /// Symmetry points as a fraction of `w_max`.
    pub w_sym: Vec<f64>,
    pub zero_shift: Vec<bool>,
    pub activations: Vec<Activation>,
    pub seeds_per_cell: usize,
    pub seed: u64,
    /// Everything else about training; `device` must be analog and acts as
    /// the template for every cell.
    pub base: TrainerConfig,
    /// Cell-level parallelism.
    pub execution: Execution,
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            dw0: log_grid(0.004, 0.3, 5),
            w_max: log_grid(0.5, 20.0, 5),
            pairs: None,
            w_sym: vec![-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75],
            zero_shift: vec![false],
            activations: vec![Activation::Sigmoid],
            seeds_per_cell: 1,
            seed: 0,
            base: TrainerConfig {
                epochs: 10,
                ..TrainerConfig::default()
            },
            execution: Execution::default(),
        }
    }
}

/// One training run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub dw0: f64,
    pub w_max: f64,
    /// Relative to `w_max`.
    pub w_sym: f64,
    pub zero_shift: bool,
    pub activation: Activation,
    pub seed_index: usize,
    pub seed: u64,
}

impl Cell {
    pub fn w_sym_abs(&self) -> f64 {
        self.w_sym * self.w_max
    }

    /// `(w_max − w_min) / Δw₀` of the nominal device.
    pub fn nominal_states(&self) -> f64 {
        2.0 * self.w_max / self.dw0
    }

    /// Directory name for this cell's artifacts.
    pub fn id(&self) -> String {
        format!("cell{:04}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub final_error_pct: Option<f64>,
    pub min_error_pct: Option<f64>,
    /// Mean effective weight of the last layer after training.
    pub last_layer_mean: Option<f64>,
    /// Failure message if the cell could not be run.
    pub error: Option<String>,
    #[serde(skip)]
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub records: Vec<CellResult>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::InvalidSpec(m.to_string()));
        let points = self.points();
        if points.is_empty() {
            return bad("empty dw0 / w_max grid");
        }
        if points.iter().any(|&(d, w)| !(d > 0.0) || !(w > 0.0)) {
            return bad("all dw0 and w_max values must be positive");
        }
        if self.w_sym.is_empty() || self.zero_shift.is_empty() || self.activations.is_empty() {
            return bad("w_sym, zero_shift and activations must be non-empty");
        }
        if self.w_sym.iter().any(|s| !(s.abs() < 1.0)) {
            return bad("relative w_sym values must lie in (-1, 1)");
        }
        if self.seeds_per_cell == 0 {
            return bad("seeds_per_cell must be at least 1");
        }
        if !matches!(self.base.device, DeviceSpec::Analog(_)) {
            return bad("base.device must be analog");
        }
        self.base
            .validate()
            .map_err(|e| SweepError::InvalidSpec(e.to_string()))
    }

    /// `(dw0, w_max)` points in order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        match &self.pairs {
            Some(p) => p.iter().map(|&[d, w]| (d, w)).collect(),
            None => self
                .dw0
                .iter()
                .flat_map(|&d| self.w_max.iter().map(move |&w| (d, w)))
                .collect(),
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let points = self.points();
        let mut cells = Vec::new();
        for &activation in &self.activations {
            for &w_sym in &self.w_sym {
                for &zero_shift in &self.zero_shift {
                    for (p, &(dw0, w_max)) in points.iter().enumerate() {
                        for s in 0..self.seeds_per_cell {
                            cells.push(Cell {
                                index: cells.len(),
                                dw0,
                                w_max,
                                w_sym,
                                zero_shift,
                                activation,
                                seed_index: s,
                                seed: derive_seed(self.seed, &[p as u64, s as u64]),
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    /// The exact training configuration of one cell.
    pub fn trainer_config(&self, cell: &Cell) -> TrainerConfig {
        let template = match &self.base.device {
            DeviceSpec::Analog(d) => d.clone(),
            DeviceSpec::Float => AnalogDevice::default(),
        };
        TrainerConfig {
            activation: cell.activation,
            seed: cell.seed,
            device: DeviceSpec::Analog(AnalogDevice {
                dw0: cell.dw0,
                w_max: cell.w_max,
                w_sym: cell.w_sym_abs(),
                zero_shift: cell.zero_shift,
                ..template
            }),
            ..self.base.clone()
        }
    }
}

fn run_cell(spec: &SweepSpec, cell: Cell, train_set: &Dataset, test_set: &Dataset) -> CellResult {
    let cfg = spec.trainer_config(&cell);
    let outcome = Network::build(&cfg).and_then(|b| {
        let mut net = b.network;
        let recs = train(&mut net, train_set, test_set, &cfg)?;
        Ok((net, recs))
    });
    match outcome {
        Ok((net, epochs)) => {
            let errors: Vec<f64> = epochs.iter().filter_map(|r| r.test_error_pct).collect();
            let last = net.layers().last().map(|l| {
                let w = l.weights();
                w.iter().sum::<f64>() / w.len() as f64
            });
            CellResult {
                cell,
                final_error_pct: errors.last().copied(),
                min_error_pct: errors.iter().copied().reduce(f64::min),
                last_layer_mean: last,
                error: None,
                epochs,
            }
        }
        Err(e) => CellResult {
            cell,
            final_error_pct: None,
            min_error_pct: None,
            last_layer_mean: None,
            error: Some(e.to_string()),
            epochs: Vec::new(),
        },
    }
}

/// Train every cell of `spec`. Failing cells are recorded, not fatal.
pub fn run_sweep(spec: &SweepSpec, train_set: &Dataset, test_set: &Dataset) -> Result<SweepResult, SweepError> {
    spec.validate()?;
    let cells = spec.cells();
    let records = map_indexed(spec.execution, cells.len(), |k| run_cell(spec, cells[k], train_set, test_set));
    Ok(SweepResult { records })
}

/// Balanced-device grid: forces `w_sym = 0` without zero-shifting.
pub fn run_contour(spec: &SweepSpec, train_set: &Dataset, test_set: &Dataset) -> Result<SweepResult, SweepError> {
    let spec = SweepSpec {
        w_sym: vec![0.0],
        zero_shift: vec![false],
        ..spec.clone()
    };
    run_sweep(&spec, train_set, test_set)
}

/// Symmetry-point sweep as configured in `spec` (typically with
/// `zero_shift = [false, true]`).
pub fn run_wsym_sweep(spec: &SweepSpec, train_set: &Dataset, test_set: &Dataset) -> Result<SweepResult, SweepError> {
    run_sweep(spec, train_set, test_set)
}

/// Run every `±s` of `spec.w_sym` under both sigmoid and tanh.
pub fn activation_comparison(spec: &SweepSpec, train_set: &Dataset, test_set: &Dataset) -> Result<SweepResult, SweepError> {
    let mut w_sym: Vec<f64> = spec.w_sym.iter().flat_map(|&s| [s.abs(), -s.abs()]).collect();
    w_sym.sort_by(f64::total_cmp);
    w_sym.dedup();
    let spec = SweepSpec {
        w_sym,
        activations: vec![Activation::Sigmoid, Activation::Tanh],
        ..spec.clone()
    };
    run_sweep(&spec, train_set, test_set)
}
