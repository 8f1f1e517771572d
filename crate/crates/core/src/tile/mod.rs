//! Crossbar tile: a weight array of simulated devices paired with a fixed
//! reference array.
//!
//! The effective weight of cross-point `(i, j)` is `device − reference`.
//! Rows carry layer inputs and columns carry outputs, so a forward read
//! computes `Wᵀx` and a backward read computes `W d`. Both reads go through
//! the same DAC → analog sum → read noise → ADC pipeline unless the tile is
//! in ideal mode.
//!
//! Weights are changed only by programming pulses, except for the two ideal
//! writes used by calibration ([`CrossbarTile::copy_to_reference`]) and
//! initialisation ([`CrossbarTile::program_effective`]).

mod quant;
mod snapshot;

pub use quant::Quantizer;
pub use snapshot::{read_snapshot, write_snapshot, SnapshotError};

use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{apply_pulse, sample_device, DeviceError, DeviceKind, DeviceVariation, Direction, SoftBoundParams};
use crate::exec::{for_each_chunk_mut, Execution};
use crate::rng::stream_rng;

/// Arrays with at least this many cross-points use the parallel read path.
const PAR_MIN_CELLS: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid tile configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Periphery settings for analog reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalogConfig {
    pub dac_bits: u32,
    /// Inputs are clipped to `±dac_full_scale` before conversion.
    pub dac_full_scale: f64,
    pub adc_bits: u32,
    pub adc_full_scale: f64,
    /// Gaussian noise on every analog output, before the ADC.
    pub read_noise_std: f64,
    /// Exact floating-point reads; disables quantization, noise and clipping.
    pub ideal: bool,
    /// Divide forward inputs by their max magnitude before the DAC and
    /// multiply the digitised outputs back.
    pub forward_input_scaling: bool,
    /// Same for backward reads, where error signals are far below full scale.
    pub backward_input_scaling: bool,
}

impl Default for AnalogConfig {
    fn default() -> Self {
        AnalogConfig {
            dac_bits: 5,
            dac_full_scale: 1.0,
            adc_bits: 9,
            adc_full_scale: 12.0,
            read_noise_std: 0.06,
            ideal: false,
            forward_input_scaling: false,
            backward_input_scaling: true,
        }
    }
}

impl AnalogConfig {
    pub fn ideal() -> Self {
        AnalogConfig {
            ideal: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(Quantizer, Quantizer), TileError> {
        let dac = Quantizer::new(self.dac_bits, self.dac_full_scale)
            .ok_or_else(|| TileError::InvalidConfig(format!("bad DAC: {} bits, ±{}", self.dac_bits, self.dac_full_scale)))?;
        let adc = Quantizer::new(self.adc_bits, self.adc_full_scale)
            .ok_or_else(|| TileError::InvalidConfig(format!("bad ADC: {} bits, ±{}", self.adc_bits, self.adc_full_scale)))?;
        if !(self.read_noise_std >= 0.0) {
            return Err(TileError::InvalidConfig(format!("read noise std {}", self.read_noise_std)));
        }
        Ok((dac, adc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseScheme {
    #[default]
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseUpdateConfig {
    /// Pulse slots per update (`BL`).
    pub train_length: u32,
    pub scheme: PulseScheme,
}

impl Default for PulseUpdateConfig {
    fn default() -> Self {
        PulseUpdateConfig {
            train_length: 10,
            scheme: PulseScheme::Stochastic,
        }
    }
}

/// Initial device weights (before clipping to each device's bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitSpec {
    Constant(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

impl InitSpec {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitSpec::Constant(v) => v,
            InitSpec::Uniform(b) if b > 0.0 => rng.sample(Uniform::new_inclusive(-b, b).unwrap()),
            InitSpec::Uniform(_) => 0.0,
        }
    }
}

/// Everything needed to rebuild a tile bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub rows: usize,
    pub cols: usize,
    pub nominal: SoftBoundParams,
    pub kind: DeviceKind,
    pub variation: DeviceVariation,
    pub analog: AnalogConfig,
    pub pulse: PulseUpdateConfig,
    pub init: InitSpec,
    pub seed: u64,
}

/// One coincidence pulse delivered by an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseEvent {
    pub row: usize,
    pub col: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct CrossbarTile {
    cfg: TileConfig,
    dac: Quantizer,
    adc: Quantizer,
    params: Vec<SoftBoundParams>,
    device: Vec<f64>,
    reference: Vec<f64>,
    /// `device − reference`, kept in sync on every write.
    effective: Vec<f64>,
    exec: Execution,
    rows_fired: Vec<usize>,
    cols_fired: Vec<usize>,
}

impl CrossbarTile {
    /// Build a tile: sample per-device parameters, initialise device weights
    /// and zero the reference array. Deterministic in `cfg.seed`.
    pub fn new(cfg: TileConfig) -> Result<Self, TileError> {
        if cfg.rows == 0 || cfg.cols == 0 {
            return Err(TileError::InvalidConfig(format!("{}x{} tile", cfg.rows, cfg.cols)));
        }
        cfg.nominal.validate()?;
        cfg.variation.validate()?;
        if cfg.pulse.train_length == 0 {
            return Err(TileError::InvalidConfig("pulse train length must be >= 1".into()));
        }
        let (dac, adc) = cfg.analog.validate()?;
        let n = cfg.rows * cfg.cols;
        let mut param_rng = stream_rng(cfg.seed, 0);
        let params: Vec<SoftBoundParams> = (0..n)
            .map(|_| sample_device(&cfg.nominal, &cfg.variation, &mut param_rng))
            .collect();
        let mut init_rng = stream_rng(cfg.seed, 1);
        let device: Vec<f64> = params
            .iter()
            .map(|p| cfg.init.sample(&mut init_rng).clamp(p.w_min, p.w_max))
            .collect();
        Ok(Self::from_parts(cfg, dac, adc, params, device, vec![0.0; n]))
    }

    fn from_parts(
        cfg: TileConfig,
        dac: Quantizer,
        adc: Quantizer,
        params: Vec<SoftBoundParams>,
        device: Vec<f64>,
        reference: Vec<f64>,
    ) -> Self {
        let effective = device.iter().zip(&reference).map(|(d, r)| d - r).collect();
        CrossbarTile {
            cfg,
            dac,
            adc,
            params,
            device,
            reference,
            effective,
            exec: Execution::default(),
            rows_fired: Vec::new(),
            cols_fired: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.cfg.rows
    }

    pub fn cols(&self) -> usize {
        self.cfg.cols
    }

    pub fn config(&self) -> &TileConfig {
        &self.cfg
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn set_analog(&mut self, analog: AnalogConfig) -> Result<(), TileError> {
        let (dac, adc) = analog.validate()?;
        self.cfg.analog = analog;
        self.dac = dac;
        self.adc = adc;
        Ok(())
    }

    pub fn params(&self) -> &[SoftBoundParams] {
        &self.params
    }

    pub fn device_weights(&self) -> &[f64] {
        &self.device
    }

    pub fn reference_weights(&self) -> &[f64] {
        &self.reference
    }

    /// Step used to scale pulse probabilities: the nominal mean `Δw₀`.
    pub fn dw0_nominal(&self) -> f64 {
        self.cfg.nominal.mean_dw0()
    }

    /// Noise-free effective weights, row-major.
    pub fn read_weights(&self) -> Vec<f64> {
        self.effective.clone()
    }

    pub fn effective_weights(&self) -> &[f64] {
        &self.effective
    }

    pub fn set_reference(&mut self, values: &[f64]) -> Result<(), TileError> {
        self.check_len(values.len(), self.device.len())?;
        self.reference.copy_from_slice(values);
        self.sync_effective();
        Ok(())
    }

    /// Ideal write of every reference device to its paired device's state.
    pub fn copy_to_reference(&mut self) {
        self.reference.copy_from_slice(&self.device);
        self.sync_effective();
    }

    /// Ideal write of device states so that `device − reference = values`,
    /// clipped to each device's bounds.
    pub fn program_effective(&mut self, values: &[f64]) -> Result<(), TileError> {
        self.check_len(values.len(), self.device.len())?;
        for (k, &v) in values.iter().enumerate() {
            let p = &self.params[k];
            self.device[k] = (self.reference[k] + v).clamp(p.w_min, p.w_max);
        }
        self.sync_effective();
        Ok(())
    }

    fn sync_effective(&mut self) {
        for ((e, d), r) in self.effective.iter_mut().zip(&self.device).zip(&self.reference) {
            *e = d - r;
        }
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<(), TileError> {
        if got == expected {
            Ok(())
        } else {
            Err(TileError::DimensionMismatch { expected, got })
        }
    }

    fn exec_for_reads(&self) -> Execution {
        if self.effective.len() >= PAR_MIN_CELLS {
            self.exec
        } else {
            Execution::Sequential
        }
    }

    /// Exact `Wᵀx`.
    fn matvec_t(&self, x: &[f64], out: &mut [f64]) {
        let cols = self.cfg.cols;
        let eff = &self.effective;
        let chunk = cols.div_ceil(rayon_chunks());
        for_each_chunk_mut(self.exec_for_reads(), out, chunk, |off, y| {
            y.iter_mut().for_each(|v| *v = 0.0);
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &eff[i * cols + off..i * cols + off + y.len()];
                for (yj, w) in y.iter_mut().zip(row) {
                    *yj += xi * w;
                }
            }
        });
    }

    /// Exact `W d`.
    fn matvec(&self, d: &[f64], out: &mut [f64]) {
        let cols = self.cfg.cols;
        let eff = &self.effective;
        let chunk = self.cfg.rows.div_ceil(rayon_chunks());
        for_each_chunk_mut(self.exec_for_reads(), out, chunk, |off, y| {
            for (k, yi) in y.iter_mut().enumerate() {
                let i = off + k;
                let row = &eff[i * cols..(i + 1) * cols];
                *yi = row.iter().zip(d).map(|(w, v)| w * v).sum();
            }
        });
    }

    /// Analog pipeline shared by both read directions.
    fn analog_read<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        out: &mut [f64],
        scaling: bool,
        transpose: bool,
        rng: &mut R,
    ) {
        let a = &self.cfg.analog;
        let product = |v: &[f64], out: &mut [f64]| {
            if transpose {
                self.matvec_t(v, out)
            } else {
                self.matvec(v, out)
            }
        };
        if a.ideal {
            product(input, out);
            return;
        }
        let max_abs = input.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs == 0.0 {
            // Nothing is driven onto the lines; the read is skipped.
            // Individual zero inputs below are likewise left undriven.
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let scale = if scaling { max_abs / a.dac_full_scale } else { 1.0 };
        let fs = a.dac_full_scale;
        let driven: Vec<f64> = input
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { self.dac.quantize((v / scale).clamp(-fs, fs)) })
            .collect();
        product(&driven, out);
        let adc_fs = a.adc_full_scale;
        for y in out.iter_mut() {
            let mut v = *y;
            if a.read_noise_std > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v += a.read_noise_std * z;
            }
            *y = self.adc.quantize(v.clamp(-adc_fs, adc_fs)) * scale;
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>, TileError> {
        let mut y = vec![0.0; self.cfg.cols];
        self.forward_into(x, &mut y, rng)?;
        Ok(y)
    }

    /// Forward read `y = Wᵀx` into `y`.
    pub fn forward_into<R: Rng + ?Sized>(&self, x: &[f64], y: &mut [f64], rng: &mut R) -> Result<(), TileError> {
        self.check_len(x.len(), self.cfg.rows)?;
        self.check_len(y.len(), self.cfg.cols)?;
        self.analog_read(x, y, self.cfg.analog.forward_input_scaling, true, rng);
        Ok(())
    }

    pub fn backward<R: Rng + ?Sized>(&self, d: &[f64], rng: &mut R) -> Result<Vec<f64>, TileError> {
        let mut y = vec![0.0; self.cfg.rows];
        self.backward_into(d, &mut y, rng)?;
        Ok(y)
    }

    /// Backward read `y = W d` into `y`.
    pub fn backward_into<R: Rng + ?Sized>(&self, d: &[f64], y: &mut [f64], rng: &mut R) -> Result<(), TileError> {
        self.check_len(d.len(), self.cfg.cols)?;
        self.check_len(y.len(), self.cfg.rows)?;
        self.analog_read(d, y, self.cfg.analog.backward_input_scaling, false, rng);
        Ok(())
    }

    #[inline]
    fn pulse_device<R: Rng + ?Sized>(&mut self, k: usize, dir: Direction, rng: &mut R) {
        let w = apply_pulse(
            &self.params[k],
            self.cfg.kind,
            self.device[k],
            dir,
            self.cfg.variation.ctoc_dw0_std,
            rng,
        );
        self.device[k] = w;
        self.effective[k] = w - self.reference[k];
    }

    /// One pulse in `dir` to every device, in row-major order.
    pub fn pulse_all<R: Rng + ?Sized>(&mut self, dir: Direction, rng: &mut R) {
        for k in 0..self.device.len() {
            self.pulse_device(k, dir, rng);
        }
    }

    /// Rank-1 update adding `lr · x ⊗ delta` in expectation.
    ///
    /// `delta` is the descent direction (negative gradient w.r.t. the
    /// outputs). Returns the number of pulses delivered.
    pub fn stochastic_update<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        delta: &[f64],
        lr: f64,
        rng: &mut R,
    ) -> Result<usize, TileError> {
        self.update_impl(x, delta, lr, rng, None)
    }

    /// [`stochastic_update`](Self::stochastic_update) that also records every
    /// delivered pulse.
    pub fn stochastic_update_logged<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        delta: &[f64],
        lr: f64,
        rng: &mut R,
        log: &mut Vec<PulseEvent>,
    ) -> Result<usize, TileError> {
        self.update_impl(x, delta, lr, rng, Some(log))
    }

    fn update_impl<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        delta: &[f64],
        lr: f64,
        rng: &mut R,
        mut log: Option<&mut Vec<PulseEvent>>,
    ) -> Result<usize, TileError> {
        self.check_len(x.len(), self.cfg.rows)?;
        self.check_len(delta.len(), self.cfg.cols)?;
        if !(lr > 0.0) {
            return Ok(0);
        }
        let dw0 = self.dw0_nominal();
        let cols = self.cfg.cols;
        let mut pulses = 0;
        match self.cfg.pulse.scheme {
            PulseScheme::Stochastic => {
                let bl = self.cfg.pulse.train_length;
                let c = (lr / (bl as f64 * dw0)).sqrt();
                let mut rows_fired = std::mem::take(&mut self.rows_fired);
                let mut cols_fired = std::mem::take(&mut self.cols_fired);
                for _ in 0..bl {
                    fire(x, c, rng, &mut rows_fired);
                    fire(delta, c, rng, &mut cols_fired);
                    for &i in &rows_fired {
                        let xs = x[i] > 0.0;
                        for &j in &cols_fired {
                            let dir = if xs == (delta[j] > 0.0) { Direction::Up } else { Direction::Down };
                            self.pulse_device(i * cols + j, dir, rng);
                            if let Some(log) = log.as_deref_mut() {
                                log.push(PulseEvent { row: i, col: j, direction: dir });
                            }
                        }
                    }
                    pulses += rows_fired.len() * cols_fired.len();
                }
                self.rows_fired = rows_fired;
                self.cols_fired = cols_fired;
            }
            PulseScheme::Deterministic => {
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (j, &dj) in delta.iter().enumerate() {
                        let n = (lr * xi * dj / dw0).round();
                        if n == 0.0 {
                            continue;
                        }
                        let dir = if n > 0.0 { Direction::Up } else { Direction::Down };
                        for _ in 0..n.abs() as usize {
                            self.pulse_device(i * cols + j, dir, rng);
                            if let Some(log) = log.as_deref_mut() {
                                log.push(PulseEvent { row: i, col: j, direction: dir });
                            }
                        }
                        pulses += n.abs() as usize;
                    }
                }
            }
        }
        Ok(pulses)
    }
}

/// Indices whose line fires in this slot: probability `min(1, c·|v|)`.
#[inline]
fn fire<R: Rng + ?Sized>(v: &[f64], c: f64, rng: &mut R, fired: &mut Vec<usize>) {
    fired.clear();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let p = c * vi.abs();
        if p >= 1.0 || rng.random::<f64>() < p {
            fired.push(i);
        }
    }
}

fn rayon_chunks() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads().max(1) * 4
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
