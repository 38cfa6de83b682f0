use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ControlProblem;

/// Outcome of reconstructing one inventory step backwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardResult {
    Antecedent(f64),
    NoAntecedent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardOptions {
    /// Number of intervals in the sign-change scan of `ψ` over `[0, I_max]`.
    pub scan_intervals: usize,
    pub max_iterations: usize,
    /// Residual tolerance relative to `I_max`.
    pub tolerance: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            scan_intervals: 64,
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

/// Finds `y` with `φ(n, u*(z, y), y) = y_next` for a scalar inventory.
///
/// `ψ(y) = y_next - φ(n, u*(z, y), y)` is scanned on `scan_intervals + 1` points and
/// every bracketing sign change is bisected in ascending order until the residual is
/// within `tolerance · I_max`. A bracket that closes onto a jump of `u*` is discarded.
pub fn backward_inventory_step<F>(
    problem: &ControlProblem,
    n: usize,
    z: &[f64],
    y_next: f64,
    options: &BackwardOptions,
    mut control_map: F,
) -> Result<BackwardResult>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    if problem.inv_dim() != 1 {
        return Err(invalid(
            "backward inventory construction needs a scalar inventory",
        ));
    }
    let i_max = problem.bounds().upper[0];
    let tol = options.tolerance * i_max.max(f64::MIN_POSITIVE);
    let mut u = vec![0.0; problem.control_dim()];
    let mut next = [0.0];
    let mut psi = |y: f64| -> Result<f64> {
        control_map(z, y, &mut u)?;
        problem.transition_into(n, &u, &[y], &mut next);
        Ok(y_next - next[0])
    };

    let k = options.scan_intervals.max(1);
    let grid = |j: usize| {
        if j == k {
            i_max
        } else {
            i_max * j as f64 / k as f64
        }
    };
    let mut prev_y = grid(0);
    let mut prev = psi(prev_y)?;
    if prev.abs() <= tol {
        return Ok(BackwardResult::Antecedent(prev_y));
    }
    for j in 1..=k {
        let y = grid(j);
        let cur = psi(y)?;
        if cur.abs() <= tol {
            return Ok(BackwardResult::Antecedent(y));
        }
        if (prev < 0.0) != (cur < 0.0) {
            let (mut lo, mut hi, mut flo) = (prev_y, y, prev);
            for _ in 0..options.max_iterations {
                let mid = 0.5 * (lo + hi);
                let fm = psi(mid)?;
                if fm.abs() <= tol {
                    return Ok(BackwardResult::Antecedent(mid));
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo <= f64::EPSILON * i_max {
                    break;
                }
            }
        }
        prev_y = y;
        prev = cur;
    }
    Ok(BackwardResult::NoAntecedent)
}
