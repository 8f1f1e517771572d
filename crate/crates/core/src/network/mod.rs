//! Fully-connected classifier whose layers are crossbar tiles (or exact
//! floating-point matrices for the reference baseline).

mod activation;
mod train;

pub use activation::{softmax, Activation};
pub use train::{
    evaluate, layer_summaries, train, train_with, write_epochs_csv, write_weights_hist_csv, EpochRecord,
    Histogram, TrainerConfig, WeightSummary,
};

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{zero_shift_calibrate, CalibrationConfig, CalibrationError, ConvergenceReport};
use crate::device::{DeviceError, DeviceKind, DeviceVariation, SoftBoundParams};
use crate::rng::{derive_seed, stream_rng};
use crate::tile::{AnalogConfig, CrossbarTile, InitSpec, PulseUpdateConfig, TileConfig, TileError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Analog device settings shared by every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalogDevice {
    pub kind: DeviceKind,
    /// Mean step at zero, `(Δw₀⁺ + Δw₀⁻) / 2`.
    pub dw0: f64,
    /// Bound magnitude; devices span `[-w_max, w_max]`.
    pub w_max: f64,
    /// Absolute symmetry point of the nominal device.
    pub w_sym: f64,
    pub variation: DeviceVariation,
    pub analog: AnalogConfig,
    pub pulse: PulseUpdateConfig,
    pub zero_shift: bool,
    pub calibration_pairs: usize,
}

impl Default for AnalogDevice {
    fn default() -> Self {
        AnalogDevice {
            kind: DeviceKind::SoftBound,
            dw0: 0.01,
            w_max: 2.0,
            w_sym: 0.0,
            variation: DeviceVariation::default(),
            analog: AnalogConfig::default(),
            pulse: PulseUpdateConfig::default(),
            zero_shift: false,
            calibration_pairs: crate::calibration::DEFAULT_PAIRS,
        }
    }
}

impl AnalogDevice {
    pub fn nominal(&self) -> Result<SoftBoundParams, DeviceError> {
        SoftBoundParams::from_imbalance(self.dw0, self.w_max, self.w_sym)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DeviceSpec {
    /// Exact floating-point weights and updates.
    Float,
    Analog(AnalogDevice),
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec::Analog(AnalogDevice::default())
    }
}

/// Exact dense layer, row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl FloatLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self, NetworkError> {
        if weights.len() != rows * cols {
            return Err(TileError::DimensionMismatch { expected: rows * cols, got: weights.len() }.into());
        }
        Ok(FloatLayer { rows, cols, weights })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Float(FloatLayer),
    Analog(CrossbarTile),
}

impl Layer {
    pub fn rows(&self) -> usize {
        match self {
            Layer::Float(l) => l.rows,
            Layer::Analog(t) => t.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Layer::Float(l) => l.cols,
            Layer::Analog(t) => t.cols(),
        }
    }

    /// Effective weights, row-major.
    pub fn weights(&self) -> &[f64] {
        match self {
            Layer::Float(l) => &l.weights,
            Layer::Analog(t) => t.effective_weights(),
        }
    }

    /// Overwrite the effective weights (ideal write; clipped on devices).
    pub fn set_weights(&mut self, w: &[f64]) -> Result<(), NetworkError> {
        match self {
            Layer::Float(l) => {
                if w.len() != l.weights.len() {
                    return Err(TileError::DimensionMismatch { expected: l.weights.len(), got: w.len() }.into());
                }
                l.weights.copy_from_slice(w);
            }
            Layer::Analog(t) => t.program_effective(w)?,
        }
        Ok(())
    }

    pub fn tile(&self) -> Option<&CrossbarTile> {
        match self {
            Layer::Analog(t) => Some(t),
            Layer::Float(_) => None,
        }
    }

    pub fn tile_mut(&mut self) -> Option<&mut CrossbarTile> {
        match self {
            Layer::Analog(t) => Some(t),
            Layer::Float(_) => None,
        }
    }

    pub fn forward_into<R: Rng + ?Sized>(&self, x: &[f64], y: &mut [f64], rng: &mut R) -> Result<(), NetworkError> {
        match self {
            Layer::Float(l) => {
                check(x.len(), l.rows)?;
                check(y.len(), l.cols)?;
                y.iter_mut().for_each(|v| *v = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    if xi != 0.0 {
                        for (yj, w) in y.iter_mut().zip(&l.weights[i * l.cols..(i + 1) * l.cols]) {
                            *yj += xi * w;
                        }
                    }
                }
            }
            Layer::Analog(t) => t.forward_into(x, y, rng)?,
        }
        Ok(())
    }

    pub fn backward_into<R: Rng + ?Sized>(&self, d: &[f64], y: &mut [f64], rng: &mut R) -> Result<(), NetworkError> {
        match self {
            Layer::Float(l) => {
                check(d.len(), l.cols)?;
                check(y.len(), l.rows)?;
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = l.weights[i * l.cols..(i + 1) * l.cols]
                        .iter()
                        .zip(d)
                        .map(|(w, v)| w * v)
                        .sum();
                }
            }
            Layer::Analog(t) => t.backward_into(d, y, rng)?,
        }
        Ok(())
    }

    /// Add `lr · x ⊗ delta` (exactly, or in expectation through pulses).
    pub fn update<R: Rng + ?Sized>(&mut self, x: &[f64], delta: &[f64], lr: f64, rng: &mut R) -> Result<(), NetworkError> {
        match self {
            Layer::Float(l) => {
                check(x.len(), l.rows)?;
                check(delta.len(), l.cols)?;
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let s = lr * xi;
                    for (w, d) in l.weights[i * l.cols..(i + 1) * l.cols].iter_mut().zip(delta) {
                        *w += s * d;
                    }
                }
            }
            Layer::Analog(t) => {
                t.stochastic_update(x, delta, lr, rng)?;
            }
        }
        Ok(())
    }
}

fn check(got: usize, expected: usize) -> Result<(), NetworkError> {
    if got == expected {
        Ok(())
    } else {
        Err(TileError::DimensionMismatch { expected, got }.into())
    }
}

/// Per-layer buffers of one forward/backward pass.
#[derive(Debug, Clone, Default)]
struct Scratch {
    /// Input to each layer, with the bias entry appended.
    inputs: Vec<Vec<f64>>,
    /// Output of each layer (post-activation for hidden layers, softmax last).
    outputs: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    back: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    activation: Activation,
    bias: bool,
    scratch: Scratch,
}

/// Result of building a network, including any calibration reports.
#[derive(Debug, Clone)]
pub struct BuiltNetwork {
    pub network: Network,
    pub calibration: Vec<ConvergenceReport>,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, bias: bool) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::InvalidConfig("no layers".into()));
        }
        let extra = bias as usize;
        for pair in layers.windows(2) {
            if pair[1].rows() != pair[0].cols() + extra {
                return Err(NetworkError::InvalidConfig(format!(
                    "layer with {} outputs feeds a layer with {} inputs",
                    pair[0].cols(),
                    pair[1].rows()
                )));
            }
        }
        let scratch = Scratch {
            inputs: layers.iter().map(|l| vec![0.0; l.rows()]).collect(),
            outputs: layers.iter().map(|l| vec![0.0; l.cols()]).collect(),
            deltas: layers.iter().map(|l| vec![0.0; l.cols()]).collect(),
            back: layers.iter().map(|l| vec![0.0; l.rows()]).collect(),
        };
        Ok(Network {
            layers,
            activation,
            bias,
            scratch,
        })
    }

    /// Build from a trainer config: sample devices, optionally zero-shift,
    /// then write uniform `±1/√fan_in` initial weights.
    pub fn build(cfg: &TrainerConfig) -> Result<BuiltNetwork, NetworkError> {
        cfg.validate()?;
        let extra = cfg.bias as usize;
        let mut layers = Vec::new();
        let mut calibration = Vec::new();
        for (l, pair) in cfg.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let rows = fan_in + extra;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut init_rng = stream_rng(derive_seed(cfg.seed, &[l as u64, 1]), 0);
            let dist = Uniform::new_inclusive(-bound, bound).unwrap();
            let init: Vec<f64> = (0..rows * fan_out).map(|_| init_rng.sample(dist)).collect();
            let mut layer = match &cfg.device {
                DeviceSpec::Float => Layer::Float(FloatLayer::new(rows, fan_out, init.clone())?),
                DeviceSpec::Analog(dev) => {
                    let mut tile = CrossbarTile::new(TileConfig {
                        rows,
                        cols: fan_out,
                        nominal: dev.nominal()?,
                        kind: dev.kind,
                        variation: dev.variation,
                        analog: dev.analog,
                        pulse: dev.pulse,
                        init: InitSpec::Constant(0.0),
                        seed: derive_seed(cfg.seed, &[l as u64, 0]),
                    })?;
                    tile.set_execution(cfg.execution);
                    if dev.zero_shift {
                        let mut rng = stream_rng(derive_seed(cfg.seed, &[l as u64, 2]), 0);
                        let cal = CalibrationConfig {
                            n_pairs: dev.calibration_pairs,
                            trace_device: None,
                        };
                        calibration.push(zero_shift_calibrate(&mut tile, &cal, &mut rng)?);
                    }
                    Layer::Analog(tile)
                }
            };
            layer.set_weights(&init)?;
            layers.push(layer);
        }
        Ok(BuiltNetwork {
            network: Network::from_layers(layers, cfg.activation, cfg.bias)?,
            calibration,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows() - self.bias as usize
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }

    fn fill_input(&self, dst: &mut [f64], src: &[f64]) {
        dst[..src.len()].copy_from_slice(src);
        if self.bias {
            dst[src.len()] = 1.0;
        }
    }

    /// Forward pass storing every intermediate in `s`.
    fn forward_scratch<R: Rng + ?Sized>(&self, image: &[f64], s: &mut Scratch, rng: &mut R) -> Result<(), NetworkError> {
        check(image.len(), self.input_dim())?;
        let last = self.layers.len() - 1;
        self.fill_input(&mut s.inputs[0], image);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&s.inputs[l], &mut s.outputs[l], rng)?;
            if l < last {
                for v in s.outputs[l].iter_mut() {
                    *v = self.activation.apply(*v);
                }
                self.fill_input(&mut s.inputs[l + 1], &s.outputs[l]);
            } else {
                softmax(&mut s.outputs[l]);
            }
        }
        Ok(())
    }

    /// Class probabilities for one image.
    pub fn forward_pass<R: Rng + ?Sized>(&self, image: &[f64], rng: &mut R) -> Result<Vec<f64>, NetworkError> {
        let mut s = self.scratch.clone();
        self.forward_scratch(image, &mut s, rng)?;
        Ok(s.outputs.pop().unwrap())
    }

    /// Descent-direction deltas for every layer, given a completed forward
    /// pass in `s`. The output delta is `onehot − p`.
    fn backward_scratch<R: Rng + ?Sized>(&self, label: usize, s: &mut Scratch, rng: &mut R) -> Result<(), NetworkError> {
        let last = self.layers.len() - 1;
        for (k, (d, p)) in s.deltas[last].iter_mut().zip(&s.outputs[last]).enumerate() {
            *d = if k == label { 1.0 - p } else { -p };
        }
        for l in (1..=last).rev() {
            self.layers[l].backward_into(&s.deltas[l], &mut s.back[l], rng)?;
            for ((d, b), y) in s.deltas[l - 1].iter_mut().zip(&s.back[l]).zip(&s.outputs[l - 1]) {
                *d = b * self.activation.derivative_from_output(*y);
            }
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<(), NetworkError> {
        if label < self.output_dim() {
            Ok(())
        } else {
            Err(NetworkError::InvalidConfig(format!("label {label} >= {} outputs", self.output_dim())))
        }
    }

    /// One SGD step on a single sample; returns the cross-entropy loss
    /// before the update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, image: &[f64], label: usize, lr: f64, rng: &mut R) -> Result<f64, NetworkError> {
        self.check_label(label)?;
        let mut s = std::mem::take(&mut self.scratch);
        let res = (|| {
            self.forward_scratch(image, &mut s, rng)?;
            let loss = cross_entropy(&s.outputs[self.layers.len() - 1], label);
            self.backward_scratch(label, &mut s, rng)?;
            for (l, layer) in self.layers.iter_mut().enumerate() {
                layer.update(&s.inputs[l], &s.deltas[l], lr, rng)?;
            }
            Ok(loss)
        })();
        self.scratch = s;
        res
    }

    pub fn loss<R: Rng + ?Sized>(&self, image: &[f64], label: usize, rng: &mut R) -> Result<f64, NetworkError> {
        self.check_label(label)?;
        let p = self.forward_pass(image, rng)?;
        Ok(cross_entropy(&p, label))
    }

    /// Loss and `∂loss/∂W` for every layer (row-major, same layout as the
    /// weights), computed through the layers' own reads.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        image: &[f64],
        label: usize,
        rng: &mut R,
    ) -> Result<(f64, Vec<Vec<f64>>), NetworkError> {
        self.check_label(label)?;
        let mut s = self.scratch.clone();
        self.forward_scratch(image, &mut s, rng)?;
        let loss = cross_entropy(&s.outputs[self.layers.len() - 1], label);
        self.backward_scratch(label, &mut s, rng)?;
        let grads = s
            .inputs
            .iter()
            .zip(&s.deltas)
            .map(|(x, d)| x.iter().flat_map(|xi| d.iter().map(move |dj| -xi * dj)).collect())
            .collect();
        Ok((loss, grads))
    }
}

pub fn cross_entropy(p: &[f64], label: usize) -> f64 {
    -p[label].max(f64::MIN_POSITIVE).ln()
}
