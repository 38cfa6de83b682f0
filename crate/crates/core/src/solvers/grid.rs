use std::time::Instant;

use rayon::prelude::*;

use super::policy::{LevelGrid, Policy, Rule};
use super::{factor, rollout, Algorithm, BackwardValue, FitLog, Mode, SolveOutput, SolverConfig};
use crate::basis::BasisSpec;
use crate::error::{invalid, Result};
use crate::model::ControlProblem;
use crate::processes::PathSet;

/// Grid discretisation: one regression per inventory level and step, with the
/// continuation at other inventories interpolated multilinearly between levels.
pub fn solve_grid_discretisation(
    problem: &ControlProblem,
    basis_spec: &BasisSpec,
    paths: &PathSet,
    config: &SolverConfig,
) -> Result<SolveOutput> {
    config.validate(problem, paths)?;
    if !matches!(basis_spec, BasisSpec::ExoOnly(_)) {
        return Err(invalid("grid discretisation needs an exogenous-only basis"));
    }
    let start = Instant::now();
    let basis = basis_spec.compile()?;
    let k = basis.len();
    let levels = LevelGrid::new(config.grid_levels, problem.bounds().upper.clone())?;
    let nl = levels.count();
    let row_len = nl * k;
    let n_steps = problem.horizon();
    let m_paths = paths.m_paths();
    let level_points: Vec<Vec<f64>> = (0..nl).map(|l| levels.level(l)).collect();
    let rule = Rule::new(
        Algorithm::GridDiscretisation,
        Some(basis.clone()),
        None,
        Some(&levels),
        config.argmax,
    )?;

    let mut coef = vec![0.0; n_steps * row_len];
    let mut log = FitLog::default();
    let mut record = config.record_backward_values.then(Vec::new);

    // targets[m * nl + l]: value (or realised payoff) at step n + 1 from level l
    let mut targets = vec![0.0; m_paths * nl];
    targets.par_chunks_mut(nl).enumerate().for_each(|(m, t)| {
        let x = paths.state(m, n_steps);
        for (l, v) in t.iter_mut().enumerate() {
            *v = problem.terminal_reward(x, &level_points[l]);
        }
    });
    let mut design = vec![0.0; m_paths * k];
    let mut estimates = vec![0.0; m_paths * nl];

    for n in (0..n_steps).rev() {
        design.par_chunks_mut(k).enumerate().for_each(|(m, row)| {
            basis.eval_into(paths.state(m, n), &[], &[], row);
        });
        let ls = factor(&design, m_paths, k, &mut log)?;
        let columns: Vec<Vec<f64>> = (0..nl)
            .map(|l| (0..m_paths).map(|m| targets[m * nl + l]).collect())
            .collect();
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        let fits = ls.solve_many(&refs)?;
        for (l, a) in fits.iter().enumerate() {
            coef[n * row_len + l * k..n * row_len + (l + 1) * k].copy_from_slice(a);
        }
        let row = &coef[n * row_len..(n + 1) * row_len];

        let need_estimates = record.is_some() || (config.mode == Mode::ValueIteration && n > 0);
        if need_estimates {
            estimates.par_chunks_mut(nl).enumerate().try_for_each_init(
                || rule.workspace(problem),
                |ws, (m, out)| -> Result<()> {
                    let x = paths.state(m, n);
                    let super::Workspace {
                        argmax,
                        prep,
                        row: scratch,
                    } = ws;
                    rule.prepare(x, &[], row, prep, scratch)?;
                    for (l, o) in out.iter_mut().enumerate() {
                        *o = rule.decide_prepared(problem, n, x, &level_points[l], prep, argmax)?;
                    }
                    Ok(())
                },
            )?;
            if let Some(rec) = record.as_mut() {
                for m in 0..m_paths {
                    for (l, lp) in level_points.iter().enumerate() {
                        rec.push(BackwardValue {
                            step: n,
                            path: m,
                            exo: paths.state(m, n).to_vec(),
                            inv: lp.clone(),
                            value: estimates[m * nl + l],
                        });
                    }
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
                targets.par_chunks_mut(nl).enumerate().try_for_each_init(
                    || rule.workspace(problem),
                    |ws, (m, out)| -> Result<()> {
                        for (l, o) in out.iter_mut().enumerate() {
                            *o = rollout(
                                problem,
                                &rule,
                                coef_ref,
                                row_len,
                                paths,
                                m,
                                n,
                                &level_points[l],
                                None,
                                ws,
                            )?;
                        }
                        Ok(())
                    },
                )?;
            }
        }
    }

    let policy = Policy {
        algorithm: Algorithm::GridDiscretisation,
        problem_fingerprint: problem.fingerprint().to_string(),
        basis: Some(basis_spec.clone()),
        process: None,
        levels: Some(levels.clone()),
        horizon: n_steps,
        row_len,
        coefficients: coef,
        argmax: config.argmax,
    };
    Ok(SolveOutput {
        policy,
        diagnostics: log.finish(start),
        backward_values: record,
    })
}
