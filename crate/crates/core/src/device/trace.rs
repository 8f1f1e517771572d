//! Pulse-response traces: prediction, synthetic generation and CSV I/O.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{apply_pulse, DeviceError, DeviceKind, Direction, SoftBoundParams};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace has {readings} readings for {pulses} pulses (expected pulses + 1)")]
    LengthMismatch { readings: usize, pulses: usize },
    #[error("trace row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Weight readings of one device under a pulse sequence.
///
/// `readings[0]` is the initial state and `readings[n]` the state after the
/// n-th pulse, so `readings.len() == directions.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrace {
    directions: Vec<Direction>,
    readings: Vec<f64>,
}

/// A maximal block of consecutive same-direction pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub direction: Direction,
    /// Index of the reading taken just before the first pulse of the run.
    pub start: usize,
    pub pulses: usize,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    pulse_index: usize,
    direction: String,
    weight: f64,
}

impl PulseTrace {
    pub fn new(directions: Vec<Direction>, readings: Vec<f64>) -> Result<Self, TraceError> {
        if readings.len() != directions.len() + 1 {
            return Err(TraceError::LengthMismatch {
                readings: readings.len(),
                pulses: directions.len(),
            });
        }
        Ok(PulseTrace {
            directions,
            readings,
        })
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }

    pub fn num_pulses(&self) -> usize {
        self.directions.len()
    }

    pub fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = Vec::new();
        for (n, &d) in self.directions.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.direction == d => r.pulses += 1,
                _ => runs.push(Run {
                    direction: d,
                    start: n,
                    pulses: 1,
                }),
            }
        }
        runs
    }

    /// Append `other`, whose first reading must be this trace's last state.
    pub fn extend(&mut self, other: &PulseTrace) {
        self.directions.extend_from_slice(&other.directions);
        self.readings.extend_from_slice(&other.readings[1..]);
    }

    /// Write as CSV with header `pulse_index,direction,weight`.
    ///
    /// Row `n` holds the reading after pulse `n` and that pulse's direction.
    /// Row 0 is the initial state; its direction column repeats the first
    /// pulse's direction and is ignored on read.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut wtr = csv::Writer::from_writer(out);
        for (n, &weight) in self.readings.iter().enumerate() {
            let dir = if n == 0 {
                self.directions.first().copied().unwrap_or(Direction::Up)
            } else {
                self.directions[n - 1]
            };
            wtr.serialize(TraceRow {
                pulse_index: n,
                direction: dir.as_char().to_string(),
                weight,
            })?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TraceError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut directions = Vec::new();
        let mut readings = Vec::new();
        for (row, rec) in rdr.deserialize::<TraceRow>().enumerate() {
            let rec = rec?;
            if rec.pulse_index != row {
                return Err(TraceError::BadRow {
                    row,
                    msg: format!("pulse_index {} out of sequence", rec.pulse_index),
                });
            }
            let mut chars = rec.direction.trim().chars();
            let dir = match (chars.next().and_then(Direction::from_char), chars.next()) {
                (Some(d), None) => d,
                _ => {
                    return Err(TraceError::BadRow {
                        row,
                        msg: format!("direction {:?} is not U or D", rec.direction),
                    })
                }
            };
            if !rec.weight.is_finite() {
                return Err(TraceError::BadRow {
                    row,
                    msg: "weight is not finite".into(),
                });
            }
            if row > 0 {
                directions.push(dir);
            }
            readings.push(rec.weight);
        }
        if readings.is_empty() {
            return Err(TraceError::Empty);
        }
        PulseTrace::new(directions, readings)
    }
}

/// Closed-form Soft-Bound weight after `n` same-direction pulses from `w0`.
///
/// Potentiation: `w_max − (w_max − w0)(1 − Δw₀⁺/w_max)ⁿ`;
/// depression: `w_min + (w0 − w_min)(1 − Δw₀⁻/|w_min|)ⁿ`.
pub fn predict_weight(p: &SoftBoundParams, w0: f64, n: u32, dir: Direction) -> f64 {
    match dir {
        Direction::Up => p.w_max - (p.w_max - w0) * (1.0 - p.up_rate()).powi(n as i32),
        Direction::Down => p.w_min + (w0 - p.w_min) * (1.0 - p.down_rate()).powi(n as i32),
    }
}

/// Noiseless Soft-Bound trace of `n_pulses` in one direction.
pub fn predict_trace(
    p: &SoftBoundParams,
    w0: f64,
    n_pulses: usize,
    dir: Direction,
) -> Result<PulseTrace, TraceError> {
    if !p.contains(w0) {
        return Err(DeviceError::OutOfRange {
            w: w0,
            w_min: p.w_min,
            w_max: p.w_max,
        }
        .into());
    }
    let mut readings = Vec::with_capacity(n_pulses + 1);
    let mut w = w0;
    readings.push(w);
    for _ in 0..n_pulses {
        w += p.step(DeviceKind::SoftBound, dir, w);
        readings.push(w);
    }
    PulseTrace::new(vec![dir; n_pulses], readings)
}

/// Settings for a synthetic potentiation/depression measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub params: SoftBoundParams,
    #[serde(default)]
    pub kind: DeviceKind,
    pub w0: f64,
    pub cycles: usize,
    pub pulses_per_run: usize,
    /// Gaussian noise added to every reading (not to the device state).
    #[serde(default)]
    pub read_noise_std: f64,
    #[serde(default)]
    pub ctoc_std: f64,
}

/// Generate `cycles` × (up run, down run) from `spec`.
pub fn synthetic_trace<R: Rng + ?Sized>(spec: &TraceSpec, rng: &mut R) -> Result<PulseTrace, TraceError> {
    spec.params.validate()?;
    if !spec.params.contains(spec.w0) {
        return Err(DeviceError::OutOfRange {
            w: spec.w0,
            w_min: spec.params.w_min,
            w_max: spec.params.w_max,
        }
        .into());
    }
    let read = |w: f64, rng: &mut R| {
        if spec.read_noise_std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            w + spec.read_noise_std * z
        } else {
            w
        }
    };
    let total = 2 * spec.cycles * spec.pulses_per_run;
    let mut directions = Vec::with_capacity(total);
    let mut readings = Vec::with_capacity(total + 1);
    let mut w = spec.w0;
    readings.push(read(w, rng));
    for _ in 0..spec.cycles {
        for dir in [Direction::Up, Direction::Down] {
            for _ in 0..spec.pulses_per_run {
                w = apply_pulse(&spec.params, spec.kind, w, dir, spec.ctoc_std, rng);
                directions.push(dir);
                readings.push(read(w, rng));
            }
        }
    }
    PulseTrace::new(directions, readings)
}
