//! Least-squares fit of the Soft-Bound model to a measured pulse trace.
//!
//! Within one direction the discrete Soft-Bound recurrence is
//! `w[m+1] = (1 − a)·w[m] + c`, where `a` is the step slope and `c` the
//! signed step at `w = 0` (`Δw₀⁺` for potentiation, `−Δw₀⁻` for depression).
//! Its exact solution over a run starting at `s` is
//!
//! ```text
//! w[m] = s·(1 − a)^m + c·h[m],   h[m] = Σ_{i<m} (1 − a)^i
//! ```
//!
//! which reduces to the straight line `s + c·m` at `a = 0`, so the linear
//! model is nested inside the Soft-Bound family. Each direction is fitted
//! independently: the slope and step are shared by all runs of that
//! direction, every run gets its own start value.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use super::trace::{PulseTrace, Run};
use super::{DeviceError, Direction, SoftBoundParams};

/// Minimum pulses in the longest run of each direction.
pub const MIN_RUN_PULSES: usize = 10;
const MAX_SLOPE: f64 = 0.999;
const MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("trace needs a run of at least {MIN_RUN_PULSES} {0:?} pulses")]
    MissingRun(Direction),
    #[error("trace readings are constant; nothing to fit")]
    Degenerate,
    #[error("normal equations are singular")]
    Singular,
    #[error("fitted {0:?} slope is zero; the data is linear and has no finite bound")]
    Unbounded(Direction),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Fitted recurrence for one pulse direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionFit {
    pub direction: Direction,
    /// Signed step at `w = 0`.
    pub step_at_zero: f64,
    /// Step slope `a` (`Δw₀/|bound|`); zero means linear.
    pub slope: f64,
    pub run_starts: Vec<f64>,
    pub sse: f64,
    pub points: usize,
    pub iterations: usize,
}

impl DirectionFit {
    /// Saturation bound `c / a`, infinite for a linear fit.
    pub fn bound(&self) -> f64 {
        if self.slope > 0.0 {
            self.step_at_zero / self.slope
        } else {
            self.step_at_zero.signum() * f64::INFINITY
        }
    }
}

/// Straight-line fit (shared slope per direction, one intercept per run).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub up_step: f64,
    pub down_step: f64,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub up: DirectionFit,
    pub down: DirectionFit,
    /// RMS residual of the Soft-Bound fit over all fitted readings.
    pub rms_residual: f64,
    pub linear: LinearFit,
}

impl FitReport {
    pub fn params(&self) -> Result<SoftBoundParams, FitError> {
        if self.up.slope <= 0.0 {
            return Err(FitError::Unbounded(Direction::Up));
        }
        if self.down.slope <= 0.0 {
            return Err(FitError::Unbounded(Direction::Down));
        }
        Ok(SoftBoundParams::new(
            self.up.step_at_zero,
            -self.down.step_at_zero,
            self.up.bound(),
            self.down.bound(),
        )?)
    }
}

/// Readings of every run in one direction, as (run index, pulse offset, value).
struct Samples {
    runs: usize,
    pts: Vec<(usize, usize, f64)>,
    run_first: Vec<f64>,
}

fn collect(trace: &PulseTrace, runs: &[Run], dir: Direction) -> Result<Samples, FitError> {
    let mine: Vec<&Run> = runs.iter().filter(|r| r.direction == dir).collect();
    if mine.iter().all(|r| r.pulses < MIN_RUN_PULSES) {
        return Err(FitError::MissingRun(dir));
    }
    let readings = trace.readings();
    let mut pts = Vec::new();
    let mut run_first = Vec::new();
    for (k, r) in mine.iter().enumerate() {
        run_first.push(readings[r.start]);
        for m in 0..=r.pulses {
            pts.push((k, m, readings[r.start + m]));
        }
    }
    Ok(Samples {
        runs: mine.len(),
        pts,
        run_first,
    })
}

/// θ = [c, a, s_0, …, s_{k-1}]
fn residuals(s: &Samples, theta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let (c, a) = (theta[0], theta[1]);
    let decay = 1.0 - a;
    // Points are grouped by run in ascending pulse order; walk the recurrence.
    let mut cur_run = usize::MAX;
    let (mut g, mut h, mut m_prev) = (1.0, 0.0, 0usize);
    for &(k, m, y) in &s.pts {
        if k != cur_run {
            cur_run = k;
            g = 1.0;
            h = 0.0;
            m_prev = 0;
        }
        while m_prev < m {
            h = h * decay + 1.0;
            g *= decay;
            m_prev += 1;
        }
        out.push(theta[2 + k] * g + c * h - y);
    }
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn gauss_newton(s: &Samples, mut theta: Vec<f64>) -> (Vec<f64>, f64, usize) {
    let n = theta.len();
    let mut r = Vec::new();
    let mut r_trial = Vec::new();
    residuals(s, &theta, &mut r);
    let mut cost = sse(&r);
    let mut iters = 0;
    for it in 0..MAX_ITERS {
        iters = it + 1;
        // Central-difference Jacobian.
        let mut jac = DMatrix::<f64>::zeros(r.len(), n);
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for j in 0..n {
            let h = 1e-6 * theta[j].abs().max(1e-3);
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            residuals(s, &tp, &mut plus);
            residuals(s, &tm, &mut minus);
            for i in 0..r.len() {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let mut jtj = &jt * &jac;
        // Tiny ridge keeps the solve well-posed when the slope sits at zero.
        for j in 0..n {
            jtj[(j, j)] *= 1.0 + 1e-12;
        }
        let grad = &jt * DVector::from_column_slice(&r);
        let Some(delta) = jtj.lu().solve(&(-grad)) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(delta.iter())
                .enumerate()
                .map(|(j, (v, d))| {
                    let x = v + t * d;
                    if j == 1 {
                        x.clamp(0.0, MAX_SLOPE)
                    } else {
                        x
                    }
                })
                .collect();
            residuals(s, &trial, &mut r_trial);
            let c = sse(&r_trial);
            if c < cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                theta = trial;
                std::mem::swap(&mut r, &mut r_trial);
                cost = c;
                improved = rel > 1e-14;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (theta, cost, iters)
}

/// Linear least squares for θ = [c, s_0, …] with the slope fixed at `a`.
fn solve_fixed_slope(s: &Samples, a: f64) -> Option<Vec<f64>> {
    let n = 1 + s.runs;
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut aty = DVector::<f64>::zeros(n);
    let decay = 1.0 - a;
    let mut cur_run = usize::MAX;
    let (mut g, mut h, mut m_prev) = (1.0, 0.0, 0usize);
    for &(k, m, y) in &s.pts {
        if k != cur_run {
            cur_run = k;
            g = 1.0;
            h = 0.0;
            m_prev = 0;
        }
        while m_prev < m {
            h = h * decay + 1.0;
            g *= decay;
            m_prev += 1;
        }
        let row = [(0usize, h), (1 + k, g)];
        for &(i, vi) in &row {
            aty[i] += vi * y;
            for &(j, vj) in &row {
                ata[(i, j)] += vi * vj;
            }
        }
    }
    let x = ata.lu().solve(&aty)?;
    let mut theta = vec![x[0], a];
    theta.extend(x.iter().skip(1));
    Some(theta)
}

/// Endpoint initialisation: bound 10% beyond the extreme reading, slope
/// from a log-linear regression of the distance to that bound.
fn endpoint_guess(s: &Samples, dir: Direction) -> Option<Vec<f64>> {
    let (lo, hi) = s
        .pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.2), hi.max(p.2)));
    let span = hi - lo;
    let bound = match dir {
        Direction::Up => hi + 0.1 * span,
        Direction::Down => lo - 0.1 * span,
    };
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(_, m, y) in &s.pts {
        let d = (bound - y).abs();
        if d > 0.0 {
            let (x, l) = (m as f64, d.ln());
            sx += x;
            sy += l;
            sxx += x * x;
            sxy += x * l;
            n += 1.0;
        }
    }
    let denom = n * sxx - sx * sx;
    if denom <= 0.0 {
        return None;
    }
    let log_decay = (n * sxy - sx * sy) / denom;
    let a = (1.0 - log_decay.exp()).clamp(1e-6, MAX_SLOPE);
    let mut theta = vec![a * bound, a];
    theta.extend_from_slice(&s.run_first);
    Some(theta)
}

fn fit_direction(s: &Samples, dir: Direction) -> Result<DirectionFit, FitError> {
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let starts = [endpoint_guess(s, dir), solve_fixed_slope(s, 0.0)];
    for theta0 in starts.into_iter().flatten() {
        let cand = gauss_newton(s, theta0);
        if best.as_ref().is_none_or(|b| cand.1 < b.1) {
            best = Some(cand);
        }
    }
    let (theta, sse, iterations) = best.ok_or(FitError::Singular)?;
    Ok(DirectionFit {
        direction: dir,
        step_at_zero: theta[0],
        slope: theta[1],
        run_starts: theta[2..].to_vec(),
        sse,
        points: s.pts.len(),
        iterations,
    })
}

fn check_trace(trace: &PulseTrace) -> Result<Vec<Run>, FitError> {
    let r = trace.readings();
    let (lo, hi) = r
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
        return Err(FitError::Degenerate);
    }
    Ok(trace.runs())
}

/// Fit the straight-line model (`a = 0`) only.
pub fn fit_linear(trace: &PulseTrace) -> Result<LinearFit, FitError> {
    let runs = check_trace(trace)?;
    let mut total = 0.0;
    let mut points = 0;
    let mut steps = [0.0; 2];
    for (i, dir) in [Direction::Up, Direction::Down].into_iter().enumerate() {
        let s = collect(trace, &runs, dir)?;
        let theta = solve_fixed_slope(&s, 0.0).ok_or(FitError::Singular)?;
        let mut r = Vec::new();
        residuals(&s, &theta, &mut r);
        total += sse(&r);
        points += r.len();
        steps[i] = theta[0];
    }
    Ok(LinearFit {
        up_step: steps[0],
        down_step: steps[1],
        rms_residual: (total / points as f64).sqrt(),
    })
}

/// Fit Soft-Bound parameters to `trace` by Gauss–Newton.
///
/// The trace must contain a potentiation and a depression run of at least
/// [`MIN_RUN_PULSES`] pulses each. Two starting points are tried per
/// direction (endpoint heuristic and the straight-line solution); the lower
/// residual wins, so the Soft-Bound residual never exceeds the linear one.
pub fn fit_soft_bound(trace: &PulseTrace) -> Result<FitReport, FitError> {
    let runs = check_trace(trace)?;
    let up_s = collect(trace, &runs, Direction::Up)?;
    let down_s = collect(trace, &runs, Direction::Down)?;
    let up = fit_direction(&up_s, Direction::Up)?;
    let down = fit_direction(&down_s, Direction::Down)?;
    let rms_residual = ((up.sse + down.sse) / (up.points + down.points) as f64).sqrt();
    let linear = fit_linear(trace)?;
    Ok(FitReport {
        up,
        down,
        rms_residual,
        linear,
    })
}
