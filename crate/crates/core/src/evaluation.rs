//! Forward policy evaluation, the myopic baseline and an exact dynamic-programming
//! oracle for finite Markov chains.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ControlProblem, ControlSpace};
use crate::processes::PathSet;
use crate::solvers::{Algorithm, ArgmaxOptions, Policy};

/// Inventory tolerance used when counting constraint violations.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub mean_inventory: Vec<f64>,
    pub mean_control: Vec<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub algorithm: Algorithm,
    pub mean_value: f64,
    /// Sample standard deviation over `√M'`.
    pub std_error: f64,
    pub per_path_values: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    pub violation_count: usize,
    pub wall_ms: f64,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Full forward trajectories of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub m_paths: usize,
    pub n_steps: usize,
    pub inv_dim: usize,
    pub control_dim: usize,
    /// Path-major, `n_steps + 1` inventories per path.
    pub inventories: Vec<f64>,
    /// Path-major, `n_steps` controls per path.
    pub controls: Vec<f64>,
}

impl Trace {
    pub fn inventory(&self, m: usize, n: usize) -> &[f64] {
        let o = (m * (self.n_steps + 1) + n) * self.inv_dim;
        &self.inventories[o..o + self.inv_dim]
    }

    pub fn control(&self, m: usize, n: usize) -> &[f64] {
        let o = (m * self.n_steps + n) * self.control_dim;
        &self.controls[o..o + self.control_dim]
    }
}

/// Runs `policy` forward along every evaluation path from `(x0, i0)`.
pub fn evaluate_policy(
    policy: &Policy,
    problem: &ControlProblem,
    eval_paths: &PathSet,
    x0: &[f64],
    i0: &[f64],
) -> Result<EvaluationReport> {
    Ok(evaluate_policy_traced(policy, problem, eval_paths, x0, i0)?.0)
}

/// As [`evaluate_policy`], also returning every inventory and control.
pub fn evaluate_policy_traced(
    policy: &Policy,
    problem: &ControlProblem,
    eval_paths: &PathSet,
    x0: &[f64],
    i0: &[f64],
) -> Result<(EvaluationReport, Trace)> {
    policy.check_problem(problem)?;
    let start = Instant::now();
    let n_steps = problem.horizon();
    let q = problem.inv_dim();
    let qc = problem.control_dim();
    let m_paths = eval_paths.m_paths();
    if eval_paths.n_steps() != n_steps || eval_paths.dim() != problem.exo_dim() {
        return Err(invalid(
            "evaluation paths do not match the problem horizon or dimension",
        ));
    }
    if x0.len() != problem.exo_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial exogenous state",
            expected: problem.exo_dim(),
            found: x0.len(),
        });
    }
    if i0.len() != q {
        return Err(Error::DimensionMismatch {
            what: "initial inventory",
            expected: q,
            found: i0.len(),
        });
    }
    if !problem.bounds().contains(i0, VIOLATION_TOL) {
        return Err(invalid(format!(
            "initial inventory {i0:?} is outside the bounds"
        )));
    }
    for m in 0..m_paths {
        let s = eval_paths.state(m, 0);
        if s.iter()
            .zip(x0)
            .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
        {
            return Err(invalid(format!("evaluation path {m} does not start at x0")));
        }
    }
    let controller = policy.controller()?;

    let mut values = vec![0.0; m_paths];
    let mut inventories = vec![0.0; m_paths * (n_steps + 1) * q];
    let mut controls = vec![0.0; m_paths * n_steps * qc];
    let mut violations = vec![0u32; m_paths * n_steps];
    values
        .par_iter_mut()
        .zip(inventories.par_chunks_mut((n_steps + 1) * q))
        .zip(controls.par_chunks_mut((n_steps * qc).max(1)))
        .zip(violations.par_chunks_mut(n_steps.max(1)))
        .enumerate()
        .try_for_each_init(
            || (controller.workspace(problem), vec![0.0; q]),
            |(ws, raw), (m, (((value, inv), ctl), viol))| -> Result<()> {
                inv[..q].copy_from_slice(i0);
                let mut total = 0.0;
                for n in 0..n_steps {
                    let x = eval_paths.state(m, n);
                    let (cur, rest) = inv[n * q..].split_at_mut(q);
                    controller.decide(problem, n, x, cur, ws)?;
                    let u = ws.control();
                    problem.transition_into(n, u, cur, raw);
                    if !problem.control_space().contains(u)
                        || !problem.bounds().contains(raw, VIOLATION_TOL)
                    {
                        viol[n] = 1;
                    }
                    total += problem.running_reward(n, x, cur, u);
                    ctl[n * qc..(n + 1) * qc].copy_from_slice(u);
                    rest[..q].copy_from_slice(ws.next_inventory());
                }
                total += problem.terminal_reward(eval_paths.state(m, n_steps), &inv[n_steps * q..]);
                *value = total;
                Ok(())
            },
        )?;

    let trace = Trace {
        m_paths,
        n_steps,
        inv_dim: q,
        control_dim: qc,
        inventories,
        controls,
    };
    let steps = (0..n_steps)
        .map(|n| {
            let mut mean_inventory = vec![0.0; q];
            let mut mean_control = vec![0.0; qc];
            let mut count = 0;
            for m in 0..m_paths {
                for (a, b) in mean_inventory.iter_mut().zip(trace.inventory(m, n)) {
                    *a += b;
                }
                for (a, b) in mean_control.iter_mut().zip(trace.control(m, n)) {
                    *a += b;
                }
                count += violations[m * n_steps + n] as usize;
            }
            mean_inventory.iter_mut().for_each(|v| *v /= m_paths as f64);
            mean_control.iter_mut().for_each(|v| *v /= m_paths as f64);
            StepDiagnostics {
                step: n,
                mean_inventory,
                mean_control,
                violations: count,
            }
        })
        .collect::<Vec<_>>();
    let violation_count = steps.iter().map(|s| s.violations).sum();
    let (mean_value, std_error) = mean_and_se(&values);
    let report = EvaluationReport {
        algorithm: policy.algorithm,
        mean_value,
        std_error,
        per_path_values: values,
        steps,
        violation_count,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, trace))
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Greedy one-step policy with zero continuation, using the default argmax resolution.
pub fn myopic_policy_value(
    problem: &ControlProblem,
    eval_paths: &PathSet,
    x0: &[f64],
    i0: &[f64],
) -> Result<EvaluationReport> {
    myopic_policy_value_with(problem, eval_paths, x0, i0, ArgmaxOptions::default())
}

pub fn myopic_policy_value_with(
    problem: &ControlProblem,
    eval_paths: &PathSet,
    x0: &[f64],
    i0: &[f64],
    argmax: ArgmaxOptions,
) -> Result<EvaluationReport> {
    evaluate_policy(
        &Policy::myopic(problem, argmax),
        problem,
        eval_paths,
        x0,
        i0,
    )
}

/// Exact optimal values `V*(n, state, node)` for `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub states: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
    pub horizon: usize,
    values: Vec<f64>,
}

impl DpTable {
    pub fn value(&self, n: usize, state: usize, node: usize) -> f64 {
        self.values[(n * self.states.len() + state) * self.nodes.len() + node]
    }

    pub fn state_index(&self, x: f64) -> Option<usize> {
        self.states
            .iter()
            .position(|s| (s - x).abs() <= 1e-9 * (1.0 + s.abs()))
    }

    pub fn node_index(&self, i: &[f64]) -> Option<usize> {
        node_index(&self.nodes, i)
    }
}

fn node_index(nodes: &[Vec<f64>], i: &[f64]) -> Option<usize> {
    nodes.iter().position(|v| {
        v.iter()
            .zip(i)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
    })
}

/// Backward induction over the finite product of chain states and inventory nodes.
///
/// The exogenous process is the chain `states` with row-stochastic `transition`; the
/// control space of `problem` must be finite and `φ` must map nodes to nodes.
pub fn exact_dp_oracle(
    problem: &ControlProblem,
    states: &[f64],
    transition: &[Vec<f64>],
    nodes: &[Vec<f64>],
) -> Result<DpTable> {
    let ControlSpace::Finite(controls) = problem.control_space() else {
        return Err(invalid("the DP oracle needs a finite control space"));
    };
    if problem.exo_dim() != 1 {
        return Err(invalid("the DP oracle needs a scalar chain"));
    }
    let s_count = states.len();
    let j_count = nodes.len();
    if transition.len() != s_count || transition.iter().any(|r| r.len() != s_count) {
        return Err(invalid(
            "transition matrix must be square over the chain states",
        ));
    }
    let n_steps = problem.horizon();
    let mut values = vec![0.0; (n_steps + 1) * s_count * j_count];
    let at = |n: usize, s: usize, j: usize| (n * s_count + s) * j_count + j;
    for s in 0..s_count {
        for (j, node) in nodes.iter().enumerate() {
            values[at(n_steps, s, j)] = problem.terminal_reward(&[states[s]], node);
        }
    }
    let mut next = vec![0.0; problem.inv_dim()];
    for n in (0..n_steps).rev() {
        for s in 0..s_count {
            for (j, node) in nodes.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for u in controls {
                    if !problem.try_transition(n, u, node, &mut next) {
                        continue;
                    }
                    let jn = node_index(nodes, &next).ok_or(Error::ClosureViolation {
                        step: n,
                        value: next[0],
                    })?;
                    let cont: f64 = (0..s_count)
                        .map(|t| transition[s][t] * values[at(n + 1, t, jn)])
                        .sum();
                    best = best.max(problem.running_reward(n, &[states[s]], node, u) + cont);
                }
                if best == f64::NEG_INFINITY {
                    return Err(Error::EmptyFeasibleSet {
                        step: n,
                        inventory: node.clone(),
                    });
                }
                values[at(n, s, j)] = best;
            }
        }
    }
    Ok(DpTable {
        states: states.to_vec(),
        nodes: nodes.to_vec(),
        horizon: n_steps,
        values,
    })
}

/// Every path of a chain whose transition probabilities are multiples of `1 / slots`.
///
/// Each step splits into `slots` equally likely branches, so the empirical law of the
/// returned paths equals the chain's law exactly: from every prefix, all
/// `slots^(N - n)` continuations are present. Paths are ordered by start, then by the
/// branch sequence with the first step most significant.
pub fn enumerate_chain_paths(
    states: &[f64],
    transition: &[Vec<f64>],
    starts: &[usize],
    n_steps: usize,
    slots: usize,
) -> Result<PathSet> {
    let s_count = states.len();
    let mut branch = vec![Vec::with_capacity(slots); s_count];
    for (s, row) in transition.iter().enumerate().take(s_count) {
        for (t, p) in row.iter().enumerate() {
            let c = p * slots as f64;
            if (c - c.round()).abs() > 1e-9 {
                return Err(invalid(format!(
                    "probability {p} is not a multiple of 1/{slots}"
                )));
            }
            branch[s].extend(std::iter::repeat_n(t, c.round() as usize));
        }
        if branch[s].len() != slots {
            return Err(invalid("transition rows must sum to one"));
        }
    }
    if starts.iter().any(|s| *s >= s_count) {
        return Err(invalid("start index out of range"));
    }
    let per_start = slots
        .checked_pow(n_steps as u32)
        .filter(|c| *c <= 1 << 24)
        .ok_or_else(|| invalid("too many paths to enumerate"))?;
    let m_paths = starts.len() * per_start;
    let mut values = Vec::with_capacity(m_paths * (n_steps + 1));
    for &s0 in starts {
        for code in 0..per_start {
            let mut s = s0;
            values.push(states[s]);
            for step in 0..n_steps {
                let digit = (code / slots.pow((n_steps - 1 - step) as u32)) % slots;
                s = branch[s][digit];
                values.push(states[s]);
            }
        }
    }
    PathSet::from_values(m_paths, n_steps, 1, 0, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSpace;

    fn chain() -> (Vec<f64>, Vec<Vec<f64>>) {
        (
            vec![1.0, 2.0, 3.0],
            vec![
                vec![0.5, 0.25, 0.25],
                vec![0.25, 0.5, 0.25],
                vec![0.25, 0.25, 0.5],
            ],
        )
    }

    fn tiny(n: usize) -> ControlProblem {
        ControlProblem::builder("tiny")
            .horizon(n)
            .inventory_upper(vec![4.0])
            .controls(ControlSpace::Finite(vec![vec![-1.0], vec![0.0], vec![1.0]]))
            .transition(|_, u, i, out| out[0] = (i[0] + u[0]).clamp(0.0, 4.0))
            .running_reward(|_, x, _, u| -u[0] * x[0] - if u[0] != 0.0 { 0.3 } else { 0.0 })
            .terminal_reward(|x, i| x[0] * i[0] - 0.2 * i[0] * i[0])
            .build()
            .unwrap()
    }

    fn nodes() -> Vec<Vec<f64>> {
        (0..5).map(|k| vec![k as f64]).collect()
    }

    /// Expectimax over the full tree, independent of the table recursion.
    fn tree(
        p: &ControlProblem,
        chain: &(Vec<f64>, Vec<Vec<f64>>),
        n: usize,
        s: usize,
        i: f64,
    ) -> f64 {
        let x = chain.0[s];
        if n == p.horizon() {
            return p.terminal_reward(&[x], &[i]);
        }
        let mut best = f64::NEG_INFINITY;
        for u in [-1.0, 0.0, 1.0] {
            let ni = (i + u).clamp(0.0, 4.0);
            let mut v = p.running_reward(n, &[x], &[i], &[u]);
            for t in 0..3 {
                v += chain.1[s][t] * tree(p, chain, n + 1, t, ni);
            }
            best = best.max(v);
        }
        best
    }

    #[test]
    fn dp_matches_expectimax() {
        let c = chain();
        let p = tiny(4);
        let dp = exact_dp_oracle(&p, &c.0, &c.1, &nodes()).unwrap();
        for s in 0..3 {
            for j in 0..5 {
                let t = tree(&p, &c, 0, s, j as f64);
                assert!((dp.value(0, s, j) - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_is_best_reward_plus_expected_terminal() {
        let c = chain();
        let p = tiny(1);
        let dp = exact_dp_oracle(&p, &c.0, &c.1, &nodes()).unwrap();
        let (s, i) = (1, 2.0);
        let mut best = f64::NEG_INFINITY;
        for u in [-1.0, 0.0, 1.0] {
            let eg: f64 = (0..3)
                .map(|t| c.1[s][t] * (c.0[t] * (i + u) - 0.2 * (i + u) * (i + u)))
                .sum();
            best = best.max(p.running_reward(0, &[c.0[s]], &[i], &[u]) + eg);
        }
        assert!((dp.value(0, s, 2) - best).abs() < 1e-12);
    }

    #[test]
    fn deterministic_chain_equals_best_control_sequence() {
        let states = vec![1.0, 2.0, 3.0];
        let ident = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let p = tiny(4);
        let dp = exact_dp_oracle(&p, &states, &ident, &nodes()).unwrap();
        for s in 0..3 {
            for j in 0..5 {
                let mut best = f64::NEG_INFINITY;
                for code in 0..81usize {
                    let mut i = j as f64;
                    let mut v = 0.0;
                    for n in 0..4 {
                        let u = [-1.0, 0.0, 1.0][(code / 3usize.pow(n as u32)) % 3];
                        v += p.running_reward(n, &[states[s]], &[i], &[u]);
                        i = (i + u).clamp(0.0, 4.0);
                    }
                    v += p.terminal_reward(&[states[s]], &[i]);
                    best = best.max(v);
                }
                assert!((dp.value(0, s, j) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn open_loop_sequences_never_beat_dp() {
        let c = chain();
        let p = tiny(4);
        let dp = exact_dp_oracle(&p, &c.0, &c.1, &nodes()).unwrap();
        let paths = enumerate_chain_paths(&c.0, &c.1, &[0], 4, 4).unwrap();
        for code in 0..81usize {
            let mut total = 0.0;
            for m in 0..paths.m_paths() {
                let mut i = 2.0;
                for n in 0..4 {
                    let u = [-1.0, 0.0, 1.0][(code / 3usize.pow(n as u32)) % 3];
                    total += p.running_reward(n, paths.state(m, n), &[i], &[u]);
                    i = (i + u).clamp(0.0, 4.0);
                }
                total += p.terminal_reward(paths.state(m, 4), &[i]);
            }
            assert!(total / paths.m_paths() as f64 <= dp.value(0, 0, 2) + 1e-12);
        }
    }

    #[test]
    fn closure_violation_detected() {
        let c = chain();
        let p = tiny(2);
        let half: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0], vec![4.0]];
        assert!(matches!(
            exact_dp_oracle(&p, &c.0, &c.1, &half),
            Err(Error::ClosureViolation { .. })
        ));
    }

    #[test]
    fn enumeration_reproduces_chain_law() {
        let c = chain();
        let paths = enumerate_chain_paths(&c.0, &c.1, &[0, 2], 3, 4).unwrap();
        assert_eq!(paths.m_paths(), 2 * 64);
        // paths from state 1 at step 0: next state is 1 with probability 1/2
        let ones = (0..64).filter(|&m| paths.state(m, 1)[0] == 1.0).count();
        assert_eq!(ones, 32);
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let p = ControlProblem::builder("zero")
            .horizon(3)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Finite(vec![vec![-0.5], vec![0.0], vec![0.5]]))
            .affine_transition(vec![1.0], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        let c = chain();
        let paths = enumerate_chain_paths(&c.0, &c.1, &[1], 3, 4).unwrap();
        let r = myopic_policy_value(&p, &paths, &[2.0], &[0.5]).unwrap();
        assert_eq!(
            (r.mean_value, r.std_error, r.violation_count),
            (0.0, 0.0, 0)
        );
        assert!(r.steps.iter().all(|s| s.mean_control == vec![0.0]));
    }

    #[test]
    fn policy_for_other_problem_rejected() {
        let c = chain();
        let paths = enumerate_chain_paths(&c.0, &c.1, &[0], 4, 4).unwrap();
        let policy = Policy::myopic(&tiny(4), ArgmaxOptions::default());
        let other = tiny(4).with_inventory_upper(vec![3.0]).unwrap();
        assert!(matches!(
            evaluate_policy(&policy, &other, &paths, &[1.0], &[1.0]),
            Err(Error::ProblemMismatch { .. })
        ));
    }
}
