//! Synapse device models.
//!
//! A device holds a single logical weight `w` in `[w_min, w_max]` and moves
//! it one step per programming pulse. Two response models are provided:
//!
//! * **Soft-Bound**: the step shrinks linearly as the weight approaches the
//!   bound in the pulse direction,
//!   `Δw⁺ = (Δw₀⁺ / w_max)(w_max − w)` and `Δw⁻ = −(Δw₀⁻ / |w_min|)(w − w_min)`.
//! * **Linear**: a constant `±Δw₀` step, hard-clipped at the bounds.
//!
//! `Δw₀⁺` and `Δw₀⁻` are stored as magnitudes; operations apply the sign.
//! The weight at which the Soft-Bound up and down steps have equal magnitude
//! is the *symmetry point*, the attractor of random up/down pulsing.

mod fit;
mod trace;

pub use fit::{fit_linear, fit_soft_bound, DirectionFit, FitError, FitReport, LinearFit};
pub use trace::{predict_trace, predict_weight, synthetic_trace, PulseTrace, TraceError, TraceSpec};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
    #[error("weight {w} outside device range [{w_min}, {w_max}]")]
    OutOfRange { w: f64, w_min: f64, w_max: f64 },
    #[error("symmetry point {target} infeasible for bounds ±{w_max}")]
    InfeasibleSymmetryPoint { target: f64, w_max: f64 },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Pulse polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_char(self) -> char {
        match self {
            Direction::Up => 'U',
            Direction::Down => 'D',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'U' | 'u' => Some(Direction::Up),
            'D' | 'd' => Some(Direction::Down),
            _ => None,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

/// Response model of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    #[default]
    SoftBound,
    Linear,
}

/// Per-device Soft-Bound parameters.
///
/// Invariants: `dw0_plus > 0`, `dw0_minus > 0`, `w_min < 0 < w_max`,
/// `dw0_plus < w_max` and `dw0_minus < |w_min|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftBoundParams {
    pub dw0_plus: f64,
    pub dw0_minus: f64,
    pub w_max: f64,
    pub w_min: f64,
}

impl SoftBoundParams {
    pub fn new(dw0_plus: f64, dw0_minus: f64, w_max: f64, w_min: f64) -> Result<Self, DeviceError> {
        let p = SoftBoundParams {
            dw0_plus,
            dw0_minus,
            w_max,
            w_min,
        };
        p.validate()?;
        Ok(p)
    }

    /// Equal step magnitudes and symmetric bounds `±w_max`.
    pub fn balanced(dw0: f64, w_max: f64) -> Result<Self, DeviceError> {
        Self::new(dw0, dw0, w_max, -w_max)
    }

    /// Parameters with mean step `dw0_mean`, symmetric bounds `±w_max` and
    /// symmetry point at `target_wsym`.
    ///
    /// With symmetric bounds the symmetry point is
    /// `w_max (Δw₀⁺ − Δw₀⁻) / (Δw₀⁺ + Δw₀⁻)`, so the two magnitudes are
    /// `dw0_mean (1 ± target_wsym / w_max)`.
    pub fn from_imbalance(dw0_mean: f64, w_max: f64, target_wsym: f64) -> Result<Self, DeviceError> {
        if !(target_wsym.abs() < w_max) {
            return Err(DeviceError::InfeasibleSymmetryPoint {
                target: target_wsym,
                w_max,
            });
        }
        let r = target_wsym / w_max;
        Self::new(dw0_mean * (1.0 + r), dw0_mean * (1.0 - r), w_max, -w_max)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let all_finite = [self.dw0_plus, self.dw0_minus, self.w_max, self.w_min]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(DeviceError::InvalidParams(format!("non-finite value in {self:?}")));
        }
        if !(self.dw0_plus > 0.0 && self.dw0_minus > 0.0) {
            return Err(DeviceError::InvalidParams(format!(
                "step magnitudes must be positive: {self:?}"
            )));
        }
        if !(self.w_min < 0.0 && 0.0 < self.w_max) {
            return Err(DeviceError::InvalidParams(format!(
                "bounds must straddle zero: {self:?}"
            )));
        }
        if !(self.dw0_plus < self.w_max && self.dw0_minus < -self.w_min) {
            return Err(DeviceError::InvalidParams(format!(
                "a single step may not exceed the bound: {self:?}"
            )));
        }
        Ok(())
    }

    /// Slope of the potentiation step, `Δw₀⁺ / w_max`.
    #[inline]
    pub fn up_rate(&self) -> f64 {
        self.dw0_plus / self.w_max
    }

    /// Slope magnitude of the depression step, `Δw₀⁻ / |w_min|`.
    #[inline]
    pub fn down_rate(&self) -> f64 {
        self.dw0_minus / -self.w_min
    }

    pub fn contains(&self, w: f64) -> bool {
        w >= self.w_min && w <= self.w_max
    }

    fn check(&self, w: f64) -> Result<(), DeviceError> {
        if self.contains(w) {
            Ok(())
        } else {
            Err(DeviceError::OutOfRange {
                w,
                w_min: self.w_min,
                w_max: self.w_max,
            })
        }
    }

    pub fn potentiation_step(&self, w: f64) -> Result<f64, DeviceError> {
        self.check(w)?;
        Ok(self.up_step(w))
    }

    pub fn depression_step(&self, w: f64) -> Result<f64, DeviceError> {
        self.check(w)?;
        Ok(self.down_step(w))
    }

    #[inline]
    pub(crate) fn up_step(&self, w: f64) -> f64 {
        self.up_rate() * (self.w_max - w)
    }

    #[inline]
    pub(crate) fn down_step(&self, w: f64) -> f64 {
        -self.down_rate() * (w - self.w_min)
    }

    /// Noiseless step for `kind` in `dir` at `w` (unchecked).
    #[inline]
    pub fn step(&self, kind: DeviceKind, dir: Direction, w: f64) -> f64 {
        match (kind, dir) {
            (DeviceKind::SoftBound, Direction::Up) => self.up_step(w),
            (DeviceKind::SoftBound, Direction::Down) => self.down_step(w),
            (DeviceKind::Linear, Direction::Up) => self.dw0_plus,
            (DeviceKind::Linear, Direction::Down) => -self.dw0_minus,
        }
    }

    /// Weight at which potentiation and depression steps have equal magnitude,
    /// `(a w_max + b w_min) / (a + b)` with `a`, `b` the two step slopes.
    pub fn symmetry_point(&self) -> f64 {
        let a = self.up_rate();
        let b = self.down_rate();
        (a * self.w_max + b * self.w_min) / (a + b)
    }

    /// Shift the weight range so the symmetry point lands on logical zero.
    pub fn zero_shift(&self) -> ShiftedParams {
        let w_sym = self.symmetry_point();
        ShiftedParams {
            base: *self,
            w_sym,
            w_max_shifted: self.w_max - w_sym,
            w_min_shifted: self.w_min - w_sym,
        }
    }

    /// `(w_max − w_min) / dw0`.
    pub fn nominal_num_states(&self, dw0: f64) -> Result<f64, DeviceError> {
        if !(dw0 > 0.0) {
            return Err(DeviceError::NonPositiveStep(dw0));
        }
        Ok((self.w_max - self.w_min) / dw0)
    }

    /// Multiply steps and bounds by `k`; the response shape is unchanged.
    pub fn scaled(&self, k: f64) -> Self {
        SoftBoundParams {
            dw0_plus: self.dw0_plus * k,
            dw0_minus: self.dw0_minus * k,
            w_max: self.w_max * k,
            w_min: self.w_min * k,
        }
    }

    /// Mean of the two step magnitudes.
    pub fn mean_dw0(&self) -> f64 {
        0.5 * (self.dw0_plus + self.dw0_minus)
    }
}

/// Soft-Bound parameters re-expressed around the symmetry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedParams {
    pub base: SoftBoundParams,
    pub w_sym: f64,
    pub w_max_shifted: f64,
    pub w_min_shifted: f64,
}

impl ShiftedParams {
    /// The shifted device as a Soft-Bound model in shifted coordinates.
    ///
    /// The step slopes are unchanged; the magnitudes at the new zero become
    /// `slope · |bound'|`.
    pub fn as_soft_bound(&self) -> SoftBoundParams {
        SoftBoundParams {
            dw0_plus: self.base.up_rate() * self.w_max_shifted,
            dw0_minus: self.base.down_rate() * -self.w_min_shifted,
            w_max: self.w_max_shifted,
            w_min: self.w_min_shifted,
        }
    }

    pub fn potentiation_step(&self, w_shifted: f64) -> Result<f64, DeviceError> {
        self.base.potentiation_step(w_shifted + self.w_sym)
    }

    pub fn depression_step(&self, w_shifted: f64) -> Result<f64, DeviceError> {
        self.base.depression_step(w_shifted + self.w_sym)
    }
}

/// Relative spreads of device-to-device and cycle-to-cycle variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceVariation {
    pub dtod_dw0_std: f64,
    pub dtod_bound_std: f64,
    pub ctoc_dw0_std: f64,
}

impl Default for DeviceVariation {
    fn default() -> Self {
        DeviceVariation {
            dtod_dw0_std: 0.30,
            dtod_bound_std: 0.30,
            ctoc_dw0_std: 0.30,
        }
    }
}

impl DeviceVariation {
    pub fn none() -> Self {
        DeviceVariation {
            dtod_dw0_std: 0.0,
            dtod_bound_std: 0.0,
            ctoc_dw0_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        for (name, v) in [
            ("dtod_dw0_std", self.dtod_dw0_std),
            ("dtod_bound_std", self.dtod_bound_std),
            ("ctoc_dw0_std", self.ctoc_dw0_std),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(DeviceError::InvalidParams(format!("{name} = {v} not in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Smallest multiplier applied by device-to-device sampling.
pub const MIN_VARIATION_MULTIPLIER: f64 = 0.01;
/// Largest allowed `Δw₀ / bound` after sampling.
pub const MAX_STEP_TO_BOUND: f64 = 0.95;

fn multiplier<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    (1.0 + std * z).max(MIN_VARIATION_MULTIPLIER)
}

/// Draw one device from a nominal model.
///
/// `Δw₀⁺`, `Δw₀⁻`, `w_max` and `|w_min|` get independent Gaussian
/// multipliers `1 + σ·N(0,1)` clamped at [`MIN_VARIATION_MULTIPLIER`]. A
/// step that would exceed its bound is capped at [`MAX_STEP_TO_BOUND`] times
/// the bound. With all spreads zero no random numbers are drawn.
pub fn sample_device<R: Rng + ?Sized>(
    nominal: &SoftBoundParams,
    var: &DeviceVariation,
    rng: &mut R,
) -> SoftBoundParams {
    let w_max = nominal.w_max * multiplier(var.dtod_bound_std, rng);
    let w_min = nominal.w_min * multiplier(var.dtod_bound_std, rng);
    let dw0_plus = (nominal.dw0_plus * multiplier(var.dtod_dw0_std, rng)).min(MAX_STEP_TO_BOUND * w_max);
    let dw0_minus =
        (nominal.dw0_minus * multiplier(var.dtod_dw0_std, rng)).min(MAX_STEP_TO_BOUND * -w_min);
    SoftBoundParams {
        dw0_plus,
        dw0_minus,
        w_max,
        w_min,
    }
}

/// Apply one pulse with multiplicative cycle-to-cycle noise on the step.
///
/// The noise factor `1 + ctoc_std·N(0,1)` is clamped at zero so a pulse never
/// reverses direction; the result is hard-clipped to the device bounds.
#[inline]
pub fn apply_pulse<R: Rng + ?Sized>(
    p: &SoftBoundParams,
    kind: DeviceKind,
    w: f64,
    dir: Direction,
    ctoc_std: f64,
    rng: &mut R,
) -> f64 {
    let mut dw = p.step(kind, dir, w);
    if ctoc_std > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        dw *= (1.0 + ctoc_std * z).max(0.0);
    }
    (w + dw).clamp(p.w_min, p.w_max)
}

/// Constant-step update: `±dw0`, clipped so `w + Δw` stays within bounds.
pub fn linear_step(dw0: f64, dir: Direction, w: f64, w_min: f64, w_max: f64) -> Result<f64, DeviceError> {
    if !(w >= w_min && w <= w_max) {
        return Err(DeviceError::OutOfRange { w, w_min, w_max });
    }
    let target = match dir {
        Direction::Up => w + dw0,
        Direction::Down => w - dw0,
    };
    Ok(target.clamp(w_min, w_max) - w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn p(dp: f64, dm: f64, wmax: f64, wmin: f64) -> SoftBoundParams {
        SoftBoundParams::new(dp, dm, wmax, wmin).unwrap()
    }

    #[test]
    fn potentiation_examples() {
        let d = p(0.1, 0.1, 1.0, -1.0);
        assert_eq!(d.potentiation_step(1.0).unwrap(), 0.0);
        assert_eq!(d.potentiation_step(0.0).unwrap(), 0.1);
        assert!((d.potentiation_step(0.5).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(d.potentiation_step(1.5), Err(DeviceError::OutOfRange { .. })));
    }

    #[test]
    fn depression_examples() {
        let d = p(0.1, 0.1, 1.0, -1.0);
        assert_eq!(d.depression_step(-1.0).unwrap(), 0.0);
        assert_eq!(d.depression_step(0.0).unwrap(), -0.1);
        assert!((d.depression_step(0.5).unwrap() + 0.15).abs() < 1e-15);
        assert!(d.depression_step(-1.0001).is_err());
    }

    #[test]
    fn linear_step_examples() {
        assert!((linear_step(0.1, Direction::Up, 0.0, -1.0, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((linear_step(0.1, Direction::Up, 0.95, -1.0, 1.0).unwrap() - 0.05).abs() < 1e-12);
        assert!((linear_step(0.1, Direction::Down, -0.3, -1.0, 1.0).unwrap() + 0.1).abs() < 1e-15);
        assert!(linear_step(0.1, Direction::Down, 2.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(SoftBoundParams::new(0.0, 0.1, 1.0, -1.0).is_err());
        assert!(SoftBoundParams::new(0.1, 0.1, -1.0, -2.0).is_err());
        assert!(SoftBoundParams::new(1.5, 0.1, 1.0, -1.0).is_err());
        assert!(SoftBoundParams::new(0.1, 0.1, f64::NAN, -1.0).is_err());
    }

    #[test]
    fn symmetry_point_balanced_and_unbalanced() {
        assert_eq!(p(0.1, 0.1, 1.0, -1.0).symmetry_point(), 0.0);
        let w = p(0.2, 0.1, 1.0, -1.0).symmetry_point();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_shift_examples() {
        let s = p(0.1, 0.1, 1.0, -1.0).zero_shift();
        assert_eq!((s.w_max_shifted, s.w_min_shifted), (1.0, -1.0));

        let s = p(0.2, 0.1, 1.0, -1.0).zero_shift();
        assert!((s.w_max_shifted - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.w_min_shifted + 4.0 / 3.0).abs() < 1e-15);
        assert!(s.as_soft_bound().symmetry_point().abs() < 1e-15);
        // Steps in shifted coordinates balance at zero.
        let up = s.potentiation_step(0.0).unwrap();
        let down = s.depression_step(0.0).unwrap();
        assert!((up + down).abs() < 1e-15);
    }

    #[test]
    fn from_imbalance_examples() {
        let d = SoftBoundParams::from_imbalance(0.1, 1.0, 0.0).unwrap();
        assert_eq!((d.dw0_plus, d.dw0_minus), (0.1, 0.1));
        let d = SoftBoundParams::from_imbalance(0.15, 1.0, 1.0 / 3.0).unwrap();
        assert!((d.dw0_plus - 0.2).abs() < 1e-15);
        assert!((d.dw0_minus - 0.1).abs() < 1e-15);
        assert!(matches!(
            SoftBoundParams::from_imbalance(0.1, 1.0, 1.0),
            Err(DeviceError::InfeasibleSymmetryPoint { .. })
        ));
    }

    #[test]
    fn nominal_states_examples() {
        let d = p(0.1, 0.1, 1.0, -1.0);
        assert!((d.nominal_num_states(0.004).unwrap() - 500.0).abs() < 1e-9);
        assert_eq!(d.nominal_num_states(2.0).unwrap(), 1.0);
        assert!(d.nominal_num_states(0.0).is_err());
        let k = 3.7;
        let a = d.nominal_num_states(0.02).unwrap();
        let b = d.scaled(k).nominal_num_states(0.02 * k).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn zero_variation_returns_nominal() {
        let nominal = p(0.1, 0.05, 1.0, -0.8);
        let mut rng = stream_rng(1, 0);
        assert_eq!(sample_device(&nominal, &DeviceVariation::none(), &mut rng), nominal);
    }

    #[test]
    fn sampled_devices_are_valid() {
        // Large nominal step-to-bound ratio exercises the step cap.
        let nominal = p(0.3, 0.3, 0.5, -0.5);
        let mut rng = stream_rng(2, 0);
        for _ in 0..20_000 {
            sample_device(&nominal, &DeviceVariation::default(), &mut rng)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn noiseless_pulse_matches_step_and_stops_at_bound() {
        let d = p(0.1, 0.1, 1.0, -1.0);
        let mut rng = stream_rng(3, 0);
        let w = apply_pulse(&d, DeviceKind::SoftBound, 0.5, Direction::Up, 0.0, &mut rng);
        assert!((w - 0.55).abs() < 1e-15);
        assert_eq!(apply_pulse(&d, DeviceKind::SoftBound, 1.0, Direction::Up, 0.3, &mut rng), 1.0);
        assert_eq!(apply_pulse(&d, DeviceKind::Linear, 0.95, Direction::Up, 0.0, &mut rng), 1.0);
    }

    #[test]
    fn direction_chars() {
        assert_eq!(Direction::from_char('U'), Some(Direction::Up));
        assert_eq!(Direction::from_char('D'), Some(Direction::Down));
        assert_eq!(Direction::from_char('x'), None);
        assert_eq!(Direction::Up.flip().as_char(), 'D');
    }
}
