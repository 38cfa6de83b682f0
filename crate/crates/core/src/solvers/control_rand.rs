use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policy::{Policy, Rule};
use super::{
    factor, rollout, stream_rng, uniform_inventory, Algorithm, BackwardValue, ControlSampler,
    FitLog, Mode, SolveOutput, SolverConfig, PURPOSE_CONTROL, PURPOSE_INVENTORY,
};
use crate::basis::BasisSpec;
use crate::error::{invalid, Error, Result};
use crate::model::{AdmissibleControlSet, ControlProblem};
use crate::processes::PathSet;

/// Control randomisation: the control becomes a regressor, `V(n+1)` is regressed on
/// `φ(Z_n, Y_n, ũ_n)` along randomly controlled inventory trajectories.
pub fn solve_control_randomisation(
    problem: &ControlProblem,
    basis_spec: &BasisSpec,
    paths: &PathSet,
    config: &SolverConfig,
) -> Result<SolveOutput> {
    config.validate(problem, paths)?;
    if !matches!(basis_spec, BasisSpec::PolyWithControl(_)) {
        return Err(invalid(
            "control randomisation needs a basis with control terms",
        ));
    }
    let start = Instant::now();
    let basis = basis_spec.compile()?;
    if basis.inv_dim() != problem.inv_dim() || basis.exo_dim() != problem.exo_dim() {
        return Err(invalid("basis dimensions do not match the problem"));
    }
    let k = basis.len();
    let q = problem.inv_dim();
    let qc = problem.control_dim();
    let n_steps = problem.horizon();
    let m_paths = paths.m_paths();
    let rule = Rule::new(
        Algorithm::ControlRandomisation,
        Some(basis.clone()),
        None,
        None,
        config.argmax,
    )?;

    let mut coef = vec![0.0; n_steps * k];
    let mut log = FitLog::default();
    let mut record = None;
    let mut previous: Option<Vec<f64>> = None;

    for sweep in 0..config.cr_sweeps {
        let seed = config.seed.wrapping_add(sweep as u64);
        // path-major training trajectories
        let mut inv = vec![0.0; m_paths * (n_steps + 1) * q];
        let mut ctl = vec![0.0; m_paths * n_steps * qc];
        inv.par_chunks_mut((n_steps + 1) * q)
            .zip(ctl.par_chunks_mut((n_steps * qc).max(1)))
            .enumerate()
            .try_for_each_init(
                || rule.workspace(problem),
                |ws, (m, (yi, ui))| -> Result<()> {
                    let mut rng = stream_rng(seed, PURPOSE_CONTROL, 0, m);
                    match &config.control_sampler {
                        ControlSampler::Uniform => uniform_inventory(
                            problem,
                            &mut stream_rng(seed, PURPOSE_INVENTORY, 0, m),
                            &mut yi[..q],
                        ),
                        ControlSampler::Custom { initial, .. } => {
                            let y0 = initial(m, 0);
                            if y0.len() != q || !problem.bounds().contains(&y0, 1e-9) {
                                return Err(invalid(format!(
                                    "initial training inventory {y0:?} is not admissible"
                                )));
                            }
                            yi[..q].copy_from_slice(&y0);
                        }
                    }
                    for n in 0..n_steps {
                        let x = paths.state(m, n);
                        let (cur, rest) = yi[n * q..].split_at_mut(q);
                        let u = &mut ui[n * qc..(n + 1) * qc];
                        let use_policy = previous.is_some() && rng.gen::<bool>();
                        if let (true, Some(prev)) = (use_policy, previous.as_ref()) {
                            rule.decide(problem, n, x, cur, &prev[n * k..(n + 1) * k], ws)?;
                            u.copy_from_slice(ws.control());
                        } else {
                            match &config.control_sampler {
                                ControlSampler::Uniform => {
                                    sample_uniform_control(problem, n, cur, &mut rng, u)?
                                }
                                ControlSampler::Custom { control, .. } => {
                                    let c = control(m, n, x, cur);
                                    if c.len() != qc {
                                        return Err(Error::DimensionMismatch {
                                            what: "training control",
                                            expected: qc,
                                            found: c.len(),
                                        });
                                    }
                                    u.copy_from_slice(&c);
                                }
                            }
                        }
                        let next = problem.apply_transition(n, u, cur)?;
                        rest[..q].copy_from_slice(&next);
                    }
                    Ok(())
                },
            )?;

        let inv_at =
            |m: usize, n: usize| &inv[(m * (n_steps + 1) + n) * q..(m * (n_steps + 1) + n + 1) * q];
        let mut targets: Vec<f64> = (0..m_paths)
            .into_par_iter()
            .map(|m| problem.terminal_reward(paths.state(m, n_steps), inv_at(m, n_steps)))
            .collect();
        let mut design = vec![0.0; m_paths * k];
        let mut estimates = vec![0.0; m_paths];
        let last_sweep = sweep + 1 == config.cr_sweeps;
        let mut rec = (last_sweep && config.record_backward_values).then(Vec::new);

        for n in (0..n_steps).rev() {
            design.par_chunks_mut(k).enumerate().for_each(|(m, row)| {
                let u = &ctl[(m * n_steps + n) * qc..(m * n_steps + n + 1) * qc];
                basis.eval_into(paths.state(m, n), inv_at(m, n), u, row);
            });
            let ls = factor(&design, m_paths, k, &mut log)?;
            let alpha = ls.solve(&targets)?;
            coef[n * k..(n + 1) * k].copy_from_slice(&alpha);
            let row = &coef[n * k..(n + 1) * k];

            let need_estimates = rec.is_some() || (config.mode == Mode::ValueIteration && n > 0);
            if need_estimates {
                estimates.par_iter_mut().enumerate().try_for_each_init(
                    || rule.workspace(problem),
                    |ws, (m, e)| -> Result<()> {
                        *e = rule.decide(problem, n, paths.state(m, n), inv_at(m, n), row, ws)?;
                        Ok(())
                    },
                )?;
                if let Some(r) = rec.as_mut() {
                    for (m, e) in estimates.iter().enumerate() {
                        r.push(BackwardValue {
                            step: n,
                            path: m,
                            exo: paths.state(m, n).to_vec(),
                            inv: inv_at(m, n).to_vec(),
                            value: *e,
                        });
                    }
                }
            }
            if n == 0 {
                break;
            }
            match config.mode {
                Mode::ValueIteration => targets.copy_from_slice(&estimates),
                Mode::PerformanceIteration => {
                    let coef_ref = &coef;
                    targets.par_iter_mut().enumerate().try_for_each_init(
                        || rule.workspace(problem),
                        |ws, (m, t)| -> Result<()> {
                            *t = rollout(
                                problem,
                                &rule,
                                coef_ref,
                                k,
                                paths,
                                m,
                                n,
                                inv_at(m, n),
                                None,
                                ws,
                            )?;
                            Ok(())
                        },
                    )?;
                }
            }
        }
        record = rec;
        previous = Some(coef.clone());
    }

    let policy = Policy {
        algorithm: Algorithm::ControlRandomisation,
        problem_fingerprint: problem.fingerprint().to_string(),
        basis: Some(basis_spec.clone()),
        process: None,
        levels: None,
        horizon: n_steps,
        row_len: k,
        coefficients: coef,
        argmax: config.argmax,
    };
    Ok(SolveOutput {
        policy,
        diagnostics: log.finish(start),
        backward_values: record,
    })
}

/// Uniform draw from the admissible controls at `(n, i)`.
pub(crate) fn sample_uniform_control(
    problem: &ControlProblem,
    n: usize,
    i: &[f64],
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) -> Result<()> {
    match problem.admissible_controls(n, i)? {
        AdmissibleControlSet::Finite(list) => {
            out.copy_from_slice(&list[rng.gen_range(0..list.len())]);
        }
        AdmissibleControlSet::Box { lower, upper } => {
            for d in 0..out.len() {
                out[d] = lower[d] + rng.gen::<f64>() * (upper[d] - lower[d]);
            }
        }
        AdmissibleControlSet::Polytope { lower, upper } => {
            for _ in 0..1000 {
                for d in 0..out.len() {
                    out[d] = lower[d] + rng.gen::<f64>() * (upper[d] - lower[d]);
                }
                if problem.is_admissible(n, i, out) {
                    return Ok(());
                }
            }
            let p = problem.find_feasible_point(n, i, &lower, &upper).ok_or(
                Error::EmptyFeasibleSet {
                    step: n,
                    inventory: i.to_vec(),
                },
            )?;
            out.copy_from_slice(&p);
        }
    }
    Ok(())
}
