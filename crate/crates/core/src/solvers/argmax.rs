use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{advance, grid_point, ControlProblem, ControlSpace, Transition};

/// Resolution of the box-control search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgmaxOptions {
    /// Grid points per control dimension.
    pub resolution: usize,
    /// Golden-section iterations per dimension after the grid scan; 0 disables refinement.
    pub golden_iterations: usize,
}

impl Default for ArgmaxOptions {
    fn default() -> Self {
        Self {
            resolution: 21,
            golden_iterations: 30,
        }
    }
}

const TIE_TOL: f64 = 1e-12;
const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Scratch buffers reused across argmax calls.
#[derive(Debug, Clone)]
pub struct ArgmaxWorkspace {
    pub(crate) best: Vec<f64>,
    pub(crate) best_next: Vec<f64>,
    u: Vec<f64>,
    next: Vec<f64>,
    idx: Vec<usize>,
}

impl ArgmaxWorkspace {
    pub fn new(problem: &ControlProblem) -> Self {
        let qc = problem.control_dim();
        let q = problem.inv_dim();
        Self {
            best: vec![0.0; qc],
            best_next: vec![0.0; q],
            u: vec![0.0; qc],
            next: vec![0.0; q],
            idx: vec![0; qc],
        }
    }

    /// Control found by the last call.
    pub fn control(&self) -> &[f64] {
        &self.best
    }

    /// Inventory reached by the last control.
    pub fn next_inventory(&self) -> &[f64] {
        &self.best_next
    }
}

fn norm2(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// Whether `(v, u)` beats `(best_v, best_u)` under the tie rule: larger value, then
/// smaller Euclidean norm, then lexicographically smaller.
fn better(v: f64, u: &[f64], best_v: f64, best_u: &[f64]) -> bool {
    if best_v == f64::NEG_INFINITY {
        return v > f64::NEG_INFINITY;
    }
    let tol = TIE_TOL * v.abs().max(best_v.abs());
    if v > best_v + tol {
        return true;
    }
    if v < best_v - tol {
        return false;
    }
    let (a, b) = (norm2(u), norm2(best_u));
    if a != b {
        return a < b;
    }
    u.iter()
        .zip(best_u)
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

/// Maximises `f(n, x, i, u) + continuation(u, φ(n, u, i))` over admissible controls.
///
/// Finite spaces are scanned exhaustively. Box spaces are scanned on a grid of
/// `resolution` points per dimension (for affine transitions the last dimension is
/// gridded inside its exact admissible interval) and then refined by golden-section
/// search along each dimension around the best grid point.
pub fn argmax_control<F>(
    problem: &ControlProblem,
    n: usize,
    x: &[f64],
    i: &[f64],
    options: &ArgmaxOptions,
    continuation: F,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64], &[f64]) -> f64,
{
    let mut ws = ArgmaxWorkspace::new(problem);
    let v = argmax_into(problem, n, x, i, options, &mut ws, continuation)?;
    Ok((ws.best.clone(), v))
}

/// As [`argmax_control`], leaving the maximiser in `ws`.
pub fn argmax_into<F>(
    problem: &ControlProblem,
    n: usize,
    x: &[f64],
    i: &[f64],
    options: &ArgmaxOptions,
    ws: &mut ArgmaxWorkspace,
    mut continuation: F,
) -> Result<f64>
where
    F: FnMut(&[f64], &[f64]) -> f64,
{
    let mut best_v = f64::NEG_INFINITY;
    let ArgmaxWorkspace {
        best,
        best_next,
        u,
        next,
        idx,
    } = ws;
    let mut eval = |u: &[f64], next: &mut [f64]| -> Option<f64> {
        if !problem.try_transition(n, u, i, next) {
            return None;
        }
        Some(problem.running_reward(n, x, i, u) + continuation(u, next))
    };
    match problem.control_space() {
        ControlSpace::Finite(list) => {
            for c in list {
                {
                    let v = eval(c, next);
                    offer(v, c, next, best, best_next, &mut best_v)
                };
            }
            if best_v == f64::NEG_INFINITY {
                return Err(empty(n, i));
            }
            Ok(best_v)
        }
        ControlSpace::Box { lower, upper } => {
            let dim = lower.len();
            let r = options.resolution.max(2);
            let affine = matches!(problem.transition_kind(), Transition::Affine { .. });
            idx.fill(0);
            if affine {
                let last = dim - 1;
                loop {
                    for d in 0..last {
                        u[d] = grid_point(lower[d], upper[d], r, idx[d]);
                    }
                    u[last] = lower[last];
                    if let Some((l, h)) =
                        problem.line_interval(n, i, u, last, lower[last], upper[last])
                    {
                        for k in 0..r {
                            u[last] = grid_point(l, h, r, k);
                            {
                                let v = eval(u, next);
                                offer(v, u, next, best, best_next, &mut best_v)
                            };
                        }
                    }
                    if !advance(&mut idx[..last], r) {
                        break;
                    }
                }
            } else {
                loop {
                    for d in 0..dim {
                        u[d] = grid_point(lower[d], upper[d], r, idx[d]);
                    }
                    {
                        let v = eval(u, next);
                        offer(v, u, next, best, best_next, &mut best_v)
                    };
                    if !advance(idx, r) {
                        break;
                    }
                }
            }
            // the point of the box closest to the origin, so that flat objectives pick it
            for d in 0..dim {
                u[d] = 0.0f64.clamp(lower[d], upper[d]);
            }
            {
                let v = eval(u, next);
                offer(v, u, next, best, best_next, &mut best_v)
            };
            if best_v == f64::NEG_INFINITY {
                match problem.find_feasible_point(n, i, lower, upper) {
                    Some(p) => {
                        let v = eval(&p, next);
                        offer(v, &p, next, best, best_next, &mut best_v)
                    }
                    None => return Err(empty(n, i)),
                }
                if best_v == f64::NEG_INFINITY {
                    return Err(empty(n, i));
                }
            }
            if options.golden_iterations == 0 {
                return Ok(best_v);
            }
            for d in 0..dim {
                let step = (upper[d] - lower[d]) / (r - 1) as f64;
                u.copy_from_slice(best);
                let Some((l, h)) = problem.line_interval(n, i, u, d, lower[d], upper[d]) else {
                    continue;
                };
                let (mut a, mut b) = ((best[d] - step).max(l), (best[d] + step).min(h));
                if b <= a {
                    continue;
                }
                let mut g = |t: f64, u: &mut [f64], next: &mut [f64]| {
                    u[d] = t;
                    eval(u, next).unwrap_or(f64::NEG_INFINITY)
                };
                let mut c = b - INV_GOLDEN * (b - a);
                let mut e = a + INV_GOLDEN * (b - a);
                let mut gc = g(c, u, next);
                let mut ge = g(e, u, next);
                for _ in 0..options.golden_iterations {
                    if gc >= ge {
                        b = e;
                        e = c;
                        ge = gc;
                        c = b - INV_GOLDEN * (b - a);
                        gc = g(c, u, next);
                    } else {
                        a = c;
                        c = e;
                        gc = ge;
                        e = a + INV_GOLDEN * (b - a);
                        ge = g(e, u, next);
                    }
                }
                let t = if gc >= ge { c } else { e };
                u[d] = t;
                {
                    let v = eval(u, next);
                    offer(v, u, next, best, best_next, &mut best_v)
                };
            }
            Ok(best_v)
        }
    }
}

fn offer(
    v: Option<f64>,
    u: &[f64],
    next: &[f64],
    best: &mut [f64],
    best_next: &mut [f64],
    best_v: &mut f64,
) {
    if let Some(v) = v {
        if better(v, u, *best_v, best) {
            *best_v = v;
            best.copy_from_slice(u);
            best_next.copy_from_slice(next);
        }
    }
}

fn empty(n: usize, i: &[f64]) -> Error {
    Error::EmptyFeasibleSet {
        step: n,
        inventory: i.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSpace;

    fn arbitrage() -> ControlProblem {
        let delta = 1.0 / 200.0;
        ControlProblem::builder("arb")
            .horizon(200)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Finite(vec![
                vec![-11.5],
                vec![0.0],
                vec![11.5],
            ]))
            .affine_transition(vec![delta], vec![0.0])
            .running_reward(move |_, x, _, u| {
                let rho = if u[0] != 0.0 { 2.0 } else { 0.0 };
                -(u[0] + rho) * x[0] * delta
            })
            .terminal_reward(|x, i| 0.5 * x[0] * i[0])
            .build()
            .unwrap()
    }

    #[test]
    fn myopic_arbitrage_sells() {
        let p = arbitrage();
        let (u, v) = argmax_control(&p, 0, &[10.0], &[0.5], &ArgmaxOptions::default(), |_, _| {
            0.0
        })
        .unwrap();
        assert_eq!(u, vec![-11.5]);
        // payoffs: sell 0.475, hold 0, buy -0.675
        assert!((v - 9.5 * 10.0 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn flat_objective_picks_zero() {
        let p = ControlProblem::builder("flat")
            .horizon(2)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Finite(vec![vec![-1.0], vec![1.0], vec![0.0]]))
            .affine_transition(vec![0.1], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        let (u, _) =
            argmax_control(&p, 0, &[1.0], &[0.5], &ArgmaxOptions::default(), |_, _| 0.0).unwrap();
        assert_eq!(u, vec![0.0]);

        let b = ControlProblem::builder("flat box")
            .horizon(2)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Box {
                lower: vec![-0.3],
                upper: vec![0.7],
            })
            .affine_transition(vec![1.0], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        let (u, _) =
            argmax_control(&b, 0, &[1.0], &[0.5], &ArgmaxOptions::default(), |_, _| 0.0).unwrap();
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn box_concave_refined() {
        let p = ControlProblem::builder("quad")
            .horizon(1)
            .inventory_upper(vec![10.0])
            .controls(ControlSpace::Box {
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 1.0],
            })
            .affine_transition(vec![1.0, 1.0], vec![0.0])
            .running_reward(|_, _, _, u| -(u[0] - 0.123).powi(2) - (u[1] + 0.377).powi(2))
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        let (u, v) =
            argmax_control(&p, 0, &[0.0], &[5.0], &ArgmaxOptions::default(), |_, _| 0.0).unwrap();
        assert!(
            (u[0] - 0.123).abs() < 1e-6 && (u[1] + 0.377).abs() < 1e-6,
            "{u:?}"
        );
        assert!(v > -1e-10);
    }

    #[test]
    fn polytope_points_are_admissible() {
        // coupled constraint i + u0 + u1 in [0, 1]
        let p = ControlProblem::builder("coupled")
            .horizon(1)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Box {
                lower: vec![0.0, 0.0],
                upper: vec![1.0, 1.0],
            })
            .affine_transition(vec![1.0, 1.0], vec![0.0])
            .running_reward(|_, _, _, u| u[0] + 2.0 * u[1])
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        let (u, v) = argmax_control(&p, 0, &[0.0], &[0.25], &ArgmaxOptions::default(), |_, _| {
            0.0
        })
        .unwrap();
        assert!(p.is_admissible(0, &[0.25], &u));
        assert!((v - 1.5).abs() < 1e-9, "{u:?} {v}");
    }

    #[test]
    fn empty_set_is_error() {
        let p = ControlProblem::builder("stuck")
            .horizon(1)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Finite(vec![vec![1.0]]))
            .affine_transition(vec![1.0], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        let err = argmax_control(&p, 0, &[0.0], &[0.5], &ArgmaxOptions::default(), |_, _| 0.0);
        assert!(matches!(err, Err(Error::EmptyFeasibleSet { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positive_scaling_keeps_argmax(x in 0.1f64..20.0, i in 0.0f64..1.0, a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0.01f64..100.0) {
                let p = arbitrage();
                let opts = ArgmaxOptions::default();
                let cont = |_: &[f64], nx: &[f64]| a * nx[0] + b * nx[0] * nx[0];
                let (u1, _) = argmax_control(&p, 3, &[x], &[i], &opts, cont).unwrap();
                let scaled = ControlProblem::builder("arb scaled")
                    .horizon(200)
                    .inventory_upper(vec![1.0])
                    .controls(p.control_space().clone())
                    .affine_transition(vec![1.0 / 200.0], vec![0.0])
                    .running_reward(move |_, x, _, u| {
                        let rho = if u[0] != 0.0 { 2.0 } else { 0.0 };
                        -s * (u[0] + rho) * x[0] / 200.0
                    })
                    .terminal_reward(|x, i| 0.5 * x[0] * i[0])
                    .build()
                    .unwrap();
                let (u2, _) = argmax_control(&scaled, 3, &[x], &[i], &opts, |_: &[f64], nx: &[f64]| s * (a * nx[0] + b * nx[0] * nx[0])).unwrap();
                prop_assert_eq!(u1, u2);
            }
        }
    }
}
