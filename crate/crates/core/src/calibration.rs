//! Zero-shift calibration.
//!
//! Repeated up/down pulse pairs drive every device towards its symmetry
//! point. Copying the converged states into the reference array then makes
//! each device's symmetry point read as zero. The procedure only sees the
//! [`PulseArray`] interface, so it never needs per-device parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Direction, PulseTrace, SoftBoundParams, TraceError};
use crate::tile::CrossbarTile;

pub const DEFAULT_PAIRS: usize = 1000;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("n_pairs must be at least 1")]
    NoPairs,
    #[error("device index {index} out of range for {len} devices")]
    BadDevice { index: usize, len: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// The primitives a calibration routine may use on an array.
pub trait PulseArray {
    fn num_devices(&self) -> usize;
    /// One pulse in `dir` to every device.
    fn pulse_all<R: Rng + ?Sized>(&mut self, dir: Direction, rng: &mut R);
    /// Measured state of one device (not device minus reference).
    fn device_state(&self, index: usize) -> f64;
    fn copy_to_reference(&mut self);
}

impl PulseArray for CrossbarTile {
    fn num_devices(&self) -> usize {
        self.device_weights().len()
    }

    fn pulse_all<R: Rng + ?Sized>(&mut self, dir: Direction, rng: &mut R) {
        CrossbarTile::pulse_all(self, dir, rng)
    }

    fn device_state(&self, index: usize) -> f64 {
        self.device_weights()[index]
    }

    fn copy_to_reference(&mut self) {
        CrossbarTile::copy_to_reference(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub n_pairs: usize,
    /// Record a pulse-by-pulse trace of this device.
    pub trace_device: Option<usize>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n_pairs: DEFAULT_PAIRS,
            trace_device: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub n_pairs: usize,
    pub final_weights: Vec<f64>,
    pub trace: Option<PulseTrace>,
}

impl ConvergenceReport {
    /// Per-device `|w − w_sym|` against known symmetry points.
    pub fn residuals(&self, w_sym: &[f64]) -> Vec<f64> {
        self.final_weights
            .iter()
            .zip(w_sym)
            .map(|(w, s)| (w - s).abs())
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w_sym: &[f64], out: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["device_index", "analytic_wsym", "final_weight", "residual"])?;
        for (k, (w, s)) in self.final_weights.iter().zip(w_sym).enumerate() {
            wtr.write_record(&[k.to_string(), s.to_string(), w.to_string(), (w - s).abs().to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Apply `n_pairs` of (up, down) pulses to every device.
pub fn converge_to_symmetry<A: PulseArray, R: Rng + ?Sized>(
    array: &mut A,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<ConvergenceReport, CalibrationError> {
    if cfg.n_pairs == 0 {
        return Err(CalibrationError::NoPairs);
    }
    let n = array.num_devices();
    if let Some(index) = cfg.trace_device {
        if index >= n {
            return Err(CalibrationError::BadDevice { index, len: n });
        }
    }
    let mut trace = cfg.trace_device.map(|k| {
        let mut readings = Vec::with_capacity(2 * cfg.n_pairs + 1);
        readings.push(array.device_state(k));
        (k, Vec::with_capacity(2 * cfg.n_pairs), readings)
    });
    for _ in 0..cfg.n_pairs {
        for dir in [Direction::Up, Direction::Down] {
            array.pulse_all(dir, rng);
            if let Some((k, dirs, readings)) = trace.as_mut() {
                dirs.push(dir);
                readings.push(array.device_state(*k));
            }
        }
    }
    let trace = match trace {
        Some((_, dirs, readings)) => Some(PulseTrace::new(dirs, readings)?),
        None => None,
    };
    Ok(ConvergenceReport {
        n_pairs: cfg.n_pairs,
        final_weights: (0..n).map(|k| array.device_state(k)).collect(),
        trace,
    })
}

pub fn copy_to_reference<A: PulseArray>(array: &mut A) {
    array.copy_to_reference();
}

/// Converge, then store the converged states as the reference.
pub fn zero_shift_calibrate<A: PulseArray, R: Rng + ?Sized>(
    array: &mut A,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<ConvergenceReport, CalibrationError> {
    let report = converge_to_symmetry(array, cfg, rng)?;
    array.copy_to_reference();
    Ok(report)
}

/// Noiseless one-pair map `w → d(u(w))`, up pulse first.
pub fn pair_map(p: &SoftBoundParams, w: f64) -> f64 {
    let u = (w + p.up_step(w)).clamp(p.w_min, p.w_max);
    (u + p.down_step(u)).clamp(p.w_min, p.w_max)
}

/// Fixed point of [`pair_map`].
///
/// The map is affine, `w → A·w + B`, so the fixed point is `B / (1 − A)`.
pub fn pair_fixed_point(p: &SoftBoundParams) -> f64 {
    let (a, b) = (p.up_rate(), p.down_rate());
    // u = (1−a)w + a·w_max;  d = (1−b)u + b·w_min.
    let slope = (1.0 - a) * (1.0 - b);
    let offset = (1.0 - b) * a * p.w_max + b * p.w_min;
    offset / (1.0 - slope)
}

/// Analytic symmetry point of every device in a tile.
pub fn analytic_symmetry_points(tile: &CrossbarTile) -> Vec<f64> {
    tile.params().iter().map(|p| p.symmetry_point()).collect()
}
