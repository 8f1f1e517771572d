use serde::{Deserialize, Serialize};

use super::{SweepError, SweepResult};
use crate::network::Activation;

/// Best error over the (Δw₀, w_max) grid for one w_sym slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinErrorPoint {
    pub activation: Activation,
    pub w_sym: f64,
    pub zero_shift: bool,
    pub min_error_pct: f64,
}

/// Reduce every (activation, w_sym, zero_shift) slice to its minimum test
/// error. Seeds of the same grid point are averaged first.
pub fn min_error_curve(result: &SweepResult) -> Result<Vec<MinErrorPoint>, SweepError> {
    let mut keys: Vec<(Activation, f64, bool)> = Vec::new();
    for r in &result.records {
        let k = (r.cell.activation, r.cell.w_sym, r.cell.zero_shift);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(activation, w_sym, zero_shift)| {
            let mut points: Vec<((f64, f64), Vec<f64>)> = Vec::new();
            for r in &result.records {
                let c = &r.cell;
                if (c.activation, c.w_sym, c.zero_shift) != (activation, w_sym, zero_shift) {
                    continue;
                }
                let Some(e) = r.min_error_pct else { continue };
                match points.iter_mut().find(|(p, _)| *p == (c.dw0, c.w_max)) {
                    Some((_, v)) => v.push(e),
                    None => points.push(((c.dw0, c.w_max), vec![e])),
                }
            }
            let best = points
                .iter()
                .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
                .reduce(f64::min)
                .ok_or_else(|| {
                    SweepError::EmptySlice(format!(
                        "{} w_sym={w_sym} zero_shift={zero_shift}",
                        activation.name()
                    ))
                })?;
            Ok(MinErrorPoint {
                activation,
                w_sym,
                zero_shift,
                min_error_pct: best,
            })
        })
        .collect()
}

/// `(nominal states, final test error)` for every successful cell.
pub fn states_scatter(result: &SweepResult) -> Vec<(f64, f64)> {
    result
        .records
        .iter()
        .filter_map(|r| r.final_error_pct.map(|e| (r.cell.nominal_states(), e)))
        .collect()
}

/// `|min error(+s) − min error(−s)|` for one activation and zero-shift
/// setting.
pub fn activation_asymmetry(
    curve: &[MinErrorPoint],
    activation: Activation,
    zero_shift: bool,
    s: f64,
) -> Result<f64, SweepError> {
    let find = |w: f64| {
        curve
            .iter()
            .find(|p| p.activation == activation && p.zero_shift == zero_shift && p.w_sym == w)
            .map(|p| p.min_error_pct)
            .ok_or_else(|| SweepError::EmptySlice(format!("{} w_sym={w}", activation.name())))
    };
    Ok((find(s.abs())? - find(-s.abs())?).abs())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` if either
/// input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// True when the minimum lies strictly inside the sequence and is below
/// both ends.
pub fn is_interior_minimum(v: &[f64]) -> bool {
    if v.len() < 3 {
        return false;
    }
    let (k, &m) = v
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    k > 0 && k + 1 < v.len() && m < v[0] && m < v[v.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{Cell, CellResult};

    fn rec(dw0: f64, w_sym: f64, zs: bool, act: Activation, err: Option<f64>) -> CellResult {
        CellResult {
            cell: Cell {
                index: 0,
                dw0,
                w_max: 1.0,
                w_sym,
                zero_shift: zs,
                activation: act,
                seed_index: 0,
                seed: 0,
            },
            final_error_pct: err,
            min_error_pct: err,
            last_layer_mean: None,
            error: None,
            epochs: Vec::new(),
        }
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 1.0]), None);
        // Ties: ranks x = [1.5, 1.5, 3], y = [1, 2, 3] → ρ = √3/2.
        let r = spearman(&[5.0, 5.0, 9.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn interior_minimum() {
        assert!(is_interior_minimum(&[5.0, 2.0, 3.0, 4.0]));
        assert!(!is_interior_minimum(&[1.0, 2.0, 3.0]));
        assert!(!is_interior_minimum(&[3.0, 2.0, 1.0]));
        assert!(!is_interior_minimum(&[2.0, 2.0, 2.0]));
    }

    #[test]
    fn curve_takes_minimum_per_slice() {
        let s = Activation::Sigmoid;
        let res = SweepResult {
            records: vec![
                rec(0.01, 0.5, false, s, Some(9.0)),
                rec(0.02, 0.5, false, s, Some(7.0)),
                rec(0.01, -0.5, false, s, Some(4.0)),
                rec(0.02, -0.5, false, s, None),
            ],
        };
        let c = min_error_curve(&res).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].min_error_pct, 7.0);
        assert_eq!(c[1].min_error_pct, 4.0);
        assert_eq!(activation_asymmetry(&c, s, false, 0.5).unwrap(), 3.0);
        assert!(activation_asymmetry(&c, Activation::Tanh, false, 0.5).is_err());
        assert_eq!(states_scatter(&res).len(), 3);
    }

    #[test]
    fn empty_slice_is_an_error() {
        let res = SweepResult {
            records: vec![rec(0.01, 0.0, false, Activation::Sigmoid, None)],
        };
        assert!(matches!(min_error_curve(&res), Err(SweepError::EmptySlice(_))));
    }
}
