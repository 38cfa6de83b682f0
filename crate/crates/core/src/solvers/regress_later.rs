use std::time::Instant;

use rayon::prelude::*;

use super::backward::{backward_inventory_step, BackwardResult};
use super::policy::{Policy, Rule};
use super::{
    factor, place_inventory, rollout, Algorithm, BackwardValue, FitLog, Mode, SolveOutput,
    SolverConfig, PURPOSE_BROKEN, PURPOSE_INVENTORY,
};
use crate::basis::BasisSpec;
use crate::error::{invalid, Error, Result};
use crate::model::ControlProblem;
use crate::processes::{PathSet, ProcessSpec};

/// Regress-later: regress values at step `n + 1` on `φ(Z_{n+1}, Y_{n+1})` and take the
/// conditional expectation of the fitted function analytically when deciding at `n`.
pub fn solve_regress_later(
    problem: &ControlProblem,
    process: &ProcessSpec,
    basis_spec: &BasisSpec,
    paths: &PathSet,
    config: &SolverConfig,
) -> Result<SolveOutput> {
    config.validate(problem, paths)?;
    if !matches!(
        basis_spec,
        BasisSpec::PolyProduct(_) | BasisSpec::HypercubeAffine(_)
    ) {
        return Err(invalid(
            "regress-later needs a product polynomial or hypercube basis",
        ));
    }
    if process.dim() != problem.exo_dim() {
        return Err(Error::DimensionMismatch {
            what: "process dimension",
            expected: problem.exo_dim(),
            found: process.dim(),
        });
    }
    let start = Instant::now();
    let basis = basis_spec.compile()?;
    if basis.inv_dim() != problem.inv_dim() || basis.exo_dim() != problem.exo_dim() {
        return Err(invalid("basis dimensions do not match the problem"));
    }
    let k = basis.len();
    let q = problem.inv_dim();
    let n_steps = problem.horizon();
    let m_paths = paths.m_paths();
    let plen = basis.prepared_later_len();
    let rule = Rule::new(
        Algorithm::RegressLater,
        Some(basis.clone()),
        Some(process),
        None,
        config.argmax,
    )?;
    let perf = config.mode == Mode::PerformanceIteration;
    let backward = perf && config.rl_backward_paths;

    let mut coef = vec![0.0; n_steps * k];
    let mut log = FitLog::default();
    let mut record = config.record_backward_values.then(Vec::new);
    // performance iteration resimulates forward, so it keeps every step's prepared rows
    let mut prepared = vec![0.0; if perf { n_steps } else { 1 } * m_paths * plen];

    let place = |n: usize, purpose: u64| -> Result<Vec<f64>> {
        let per_path: Vec<Vec<f64>> = (0..m_paths)
            .into_par_iter()
            .map(|m| {
                place_inventory(
                    &config.inventory_sampling,
                    problem,
                    config.seed,
                    purpose,
                    n,
                    m,
                )
            })
            .collect::<Result<_>>()?;
        Ok(per_path.concat())
    };

    // inventories and targets at step n + 1
    let mut inv_next = place(n_steps, PURPOSE_INVENTORY)?;
    let mut targets: Vec<f64> = (0..m_paths)
        .into_par_iter()
        .map(|m| problem.terminal_reward(paths.state(m, n_steps), &inv_next[m * q..(m + 1) * q]))
        .collect();
    let mut design = vec![0.0; m_paths * k];
    let mut broken_by_step = vec![0.0; if backward { n_steps } else { 0 }];

    for n in (0..n_steps).rev() {
        design.par_chunks_mut(k).enumerate().for_each(|(m, row)| {
            basis.eval_into(
                paths.state(m, n + 1),
                &inv_next[m * q..(m + 1) * q],
                &[],
                row,
            );
        });
        let ls = factor(&design, m_paths, k, &mut log)?;
        let alpha = ls.solve(&targets)?;
        coef[n * k..(n + 1) * k].copy_from_slice(&alpha);

        let slot = if perf { n } else { 0 };
        let prep_n = &mut prepared[slot * m_paths * plen..(slot + 1) * m_paths * plen];
        prep_n
            .par_chunks_mut(plen.max(1))
            .enumerate()
            .try_for_each(|(m, out)| {
                basis.prepare_later_into(process, &alpha, paths.state(m, n), out)
            })?;
        let prepared_ref = &prepared;
        let prep_n = &prepared[slot * m_paths * plen..(slot + 1) * m_paths * plen];
        let prep_of = |m: usize| &prep_n[m * plen..(m + 1) * plen];

        if n == 0 && record.is_none() {
            break;
        }

        // inventories at step n and their values or realised payoffs
        let inv_now: Vec<f64>;
        let mut values = vec![0.0; m_paths];
        let mut estimates = vec![0.0; m_paths];
        if !backward {
            inv_now = place(n, PURPOSE_INVENTORY)?;
            let resimulate = perf && n > 0;
            values
                .par_iter_mut()
                .zip(estimates.par_iter_mut())
                .enumerate()
                .try_for_each_init(
                    || rule.workspace(problem),
                    |ws, (m, (v, e))| -> Result<()> {
                        let x = paths.state(m, n);
                        let i = &inv_now[m * q..(m + 1) * q];
                        *e = rule.decide_prepared(problem, n, x, i, prep_of(m), &mut ws.argmax)?;
                        *v = if resimulate {
                            rollout(
                                problem,
                                &rule,
                                &[],
                                k,
                                paths,
                                m,
                                n,
                                i,
                                Some((prepared_ref, plen)),
                                ws,
                            )?
                        } else {
                            *e
                        };
                        Ok(())
                    },
                )?;
        } else {
            let fallback = place(n, PURPOSE_BROKEN)?;
            let results: Vec<(f64, f64, f64, bool)> = (0..m_paths)
                .into_par_iter()
                .map_init(
                    || rule.workspace(problem),
                    |ws, m| -> Result<(f64, f64, f64, bool)> {
                        let x = paths.state(m, n);
                        let y_next = inv_next[m];
                        let found = backward_inventory_step(
                            problem,
                            n,
                            x,
                            y_next,
                            &config.backward,
                            |z, y, u| {
                                rule.decide_prepared(
                                    problem,
                                    n,
                                    z,
                                    &[y],
                                    prep_of(m),
                                    &mut ws.argmax,
                                )?;
                                u.copy_from_slice(ws.argmax.control());
                                Ok(())
                            },
                        )?;
                        match found {
                            BackwardResult::Antecedent(y) => {
                                let e = rule.decide_prepared(
                                    problem,
                                    n,
                                    x,
                                    &[y],
                                    prep_of(m),
                                    &mut ws.argmax,
                                )?;
                                let v = problem.running_reward(n, x, &[y], ws.argmax.control())
                                    + targets[m];
                                Ok((y, v, e, false))
                            }
                            BackwardResult::NoAntecedent => {
                                let y = fallback[m];
                                let e = rule.decide_prepared(
                                    problem,
                                    n,
                                    x,
                                    &[y],
                                    prep_of(m),
                                    &mut ws.argmax,
                                )?;
                                let v = rollout(
                                    problem,
                                    &rule,
                                    &[],
                                    k,
                                    paths,
                                    m,
                                    n,
                                    &[y],
                                    Some((prepared_ref, plen)),
                                    ws,
                                )?;
                                Ok((y, v, e, true))
                            }
                        }
                    },
                )
                .collect::<Result<_>>()?;
            let mut broken = 0usize;
            let mut inv = vec![0.0; m_paths];
            for (m, (y, v, e, b)) in results.into_iter().enumerate() {
                inv[m] = y;
                values[m] = v;
                estimates[m] = e;
                if b {
                    broken += 1;
                }
            }
            broken_by_step[n] = broken as f64 / m_paths as f64;
            inv_now = inv;
        }

        if let Some(rec) = record.as_mut() {
            for m in 0..m_paths {
                rec.push(BackwardValue {
                    step: n,
                    path: m,
                    exo: paths.state(m, n).to_vec(),
                    inv: inv_now[m * q..(m + 1) * q].to_vec(),
                    value: estimates[m],
                });
            }
        }
        if n == 0 {
            break;
        }
        inv_next = inv_now;
        targets = values;
    }

    let mut diagnostics = log.finish(start);
    if backward {
        // mean over the reconstructed steps 0..N-1
        diagnostics.broken_path_fraction = broken_by_step.iter().sum::<f64>() / n_steps as f64;
        diagnostics.broken_by_step = broken_by_step;
    }
    let policy = Policy {
        algorithm: Algorithm::RegressLater,
        problem_fingerprint: problem.fingerprint().to_string(),
        basis: Some(basis_spec.clone()),
        process: Some(process.clone()),
        levels: None,
        horizon: n_steps,
        row_len: k,
        coefficients: coef,
        argmax: config.argmax,
    };
    Ok(SolveOutput {
        policy,
        diagnostics,
        backward_values: record,
    })
}
