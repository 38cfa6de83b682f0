//! Backward-induction engines: grid discretisation (GD), control randomisation (CR)
//! and regress-later (RL), each in value- or performance-iteration mode.

pub mod argmax;
pub mod backward;
mod control_rand;
mod grid;
mod policy;
mod regress_later;

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use argmax::{argmax_control, argmax_into, ArgmaxOptions, ArgmaxWorkspace};
pub use backward::{backward_inventory_step, BackwardOptions, BackwardResult};
pub use control_rand::solve_control_randomisation;
pub use grid::solve_grid_discretisation;
pub use policy::{Controller, LevelGrid, Policy, Workspace, POLICY_VERSION};
pub use regress_later::solve_regress_later;

use crate::basis::BasisSpec;
use crate::error::{invalid, Error, Result};
use crate::model::ControlProblem;
use crate::processes::{PathSet, ProcessSpec};
use crate::regression::{FitDiagnostics, LeastSquares};
use policy::Rule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GridDiscretisation,
    ControlRandomisation,
    RegressLater,
    /// Zero continuation value; only produced by [`Policy::myopic`].
    Myopic,
}

impl Algorithm {
    pub fn short_name(&self) -> &'static str {
        match self {
            Algorithm::GridDiscretisation => "GD",
            Algorithm::ControlRandomisation => "CR",
            Algorithm::RegressLater => "RL",
            Algorithm::Myopic => "myopic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ValueIteration,
    PerformanceIteration,
}

/// Places training inventory `Y_n^m` given `(m, n)`.
pub type InventoryPlacement = Arc<dyn Fn(usize, usize) -> Vec<f64> + Send + Sync>;
/// Draws a training control given `(m, n, x, i)`; must be admissible.
pub type ControlPlacement = Arc<dyn Fn(usize, usize, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Regress-later training inventories.
#[derive(Clone, Default)]
pub enum InventorySampling {
    /// Independent uniform draws on the inventory box at every step.
    #[default]
    UniformIid,
    Custom(InventoryPlacement),
}

/// Control randomisation training design.
#[derive(Clone, Default)]
pub enum ControlSampler {
    /// `Y_0` uniform on the inventory box, then controls uniform over the admissible
    /// set at every step.
    #[default]
    Uniform,
    Custom {
        initial: InventoryPlacement,
        control: ControlPlacement,
    },
}

#[derive(Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub mode: Mode,
    /// Backward construction of inventory paths (regress-later performance iteration only).
    pub rl_backward_paths: bool,
    pub m_paths: usize,
    /// Levels per inventory dimension (grid discretisation only).
    pub grid_levels: usize,
    pub inventory_sampling: InventorySampling,
    pub control_sampler: ControlSampler,
    /// Control randomisation passes; later passes mix the previous policy's controls
    /// into the training design.
    pub cr_sweeps: usize,
    pub seed: u64,
    pub argmax: ArgmaxOptions,
    pub backward: BackwardOptions,
    /// Keep the estimated value at every training point (for diagnostics and tests).
    pub record_backward_values: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, mode: Mode, m_paths: usize) -> Self {
        Self {
            algorithm,
            mode,
            rl_backward_paths: false,
            m_paths,
            grid_levels: 2,
            inventory_sampling: InventorySampling::UniformIid,
            control_sampler: ControlSampler::Uniform,
            cr_sweeps: 1,
            seed: 0,
            argmax: ArgmaxOptions::default(),
            backward: BackwardOptions::default(),
            record_backward_values: false,
        }
    }

    pub fn validate(&self, problem: &ControlProblem, paths: &PathSet) -> Result<()> {
        if self.m_paths == 0 {
            return Err(invalid("m_paths must be positive"));
        }
        if paths.m_paths() != self.m_paths {
            return Err(Error::DimensionMismatch {
                what: "training paths",
                expected: self.m_paths,
                found: paths.m_paths(),
            });
        }
        if paths.n_steps() != problem.horizon() {
            return Err(Error::DimensionMismatch {
                what: "path length",
                expected: problem.horizon(),
                found: paths.n_steps(),
            });
        }
        if paths.dim() != problem.exo_dim() {
            return Err(Error::DimensionMismatch {
                what: "exogenous state",
                expected: problem.exo_dim(),
                found: paths.dim(),
            });
        }
        match self.algorithm {
            Algorithm::Myopic => return Err(invalid("the myopic rule needs no solver")),
            Algorithm::GridDiscretisation if self.grid_levels < 2 => {
                return Err(invalid("grid discretisation needs grid_levels >= 2"))
            }
            _ => {}
        }
        if self.rl_backward_paths {
            if self.algorithm != Algorithm::RegressLater || self.mode != Mode::PerformanceIteration
            {
                return Err(invalid(
                    "backward paths apply to regress-later performance iteration only",
                ));
            }
            if problem.inv_dim() != 1 {
                return Err(invalid("backward paths need a scalar inventory"));
            }
        }
        if self.cr_sweeps == 0 {
            return Err(invalid("cr_sweeps must be at least 1"));
        }
        if self.argmax.resolution < 2 {
            return Err(invalid("argmax resolution must be at least 2"));
        }
        Ok(())
    }
}

/// Estimated value at one training point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardValue {
    pub step: usize,
    pub path: usize,
    pub exo: Vec<f64>,
    pub inv: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub wall_ms: f64,
    /// Steps whose regression fell back to ridge.
    pub ridge_fits: usize,
    pub max_condition: f64,
    /// Per step, the fraction of paths without antecedent (backward construction only).
    pub broken_by_step: Vec<f64>,
    /// Fraction of paths broken per step, averaged over the backward sweep.
    pub broken_path_fraction: f64,
}

pub struct SolveOutput {
    pub policy: Policy,
    pub diagnostics: SolveDiagnostics,
    pub backward_values: Option<Vec<BackwardValue>>,
}

/// Runs the algorithm selected in `config`.
pub fn solve(
    problem: &ControlProblem,
    process: &ProcessSpec,
    basis: &BasisSpec,
    paths: &PathSet,
    config: &SolverConfig,
) -> Result<SolveOutput> {
    match config.algorithm {
        Algorithm::GridDiscretisation => solve_grid_discretisation(problem, basis, paths, config),
        Algorithm::ControlRandomisation => {
            solve_control_randomisation(problem, basis, paths, config)
        }
        Algorithm::RegressLater => solve_regress_later(problem, process, basis, paths, config),
        Algorithm::Myopic => Err(invalid("the myopic rule needs no solver")),
    }
}

/// Deterministic random stream for `(purpose, step, path)`.
pub(crate) fn stream_rng(seed: u64, purpose: u64, n: usize, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(((n as u64) << 40) ^ m as u64);
    rng
}

pub(crate) const PURPOSE_INVENTORY: u64 = 1;
pub(crate) const PURPOSE_CONTROL: u64 = 2;
pub(crate) const PURPOSE_BROKEN: u64 = 3;

pub(crate) fn uniform_inventory(problem: &ControlProblem, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for (o, up) in out.iter_mut().zip(&problem.bounds().upper) {
        *o = if *up > 0.0 {
            rng.gen::<f64>() * up
        } else {
            0.0
        };
    }
}

pub(crate) fn place_inventory(
    sampling: &InventorySampling,
    problem: &ControlProblem,
    seed: u64,
    purpose: u64,
    n: usize,
    m: usize,
) -> Result<Vec<f64>> {
    match sampling {
        InventorySampling::UniformIid => {
            let mut out = vec![0.0; problem.inv_dim()];
            uniform_inventory(problem, &mut stream_rng(seed, purpose, n, m), &mut out);
            Ok(out)
        }
        InventorySampling::Custom(f) => {
            let y = f(m, n);
            if y.len() != problem.inv_dim() {
                return Err(Error::DimensionMismatch {
                    what: "placed inventory",
                    expected: problem.inv_dim(),
                    found: y.len(),
                });
            }
            if !problem.bounds().contains(&y, 1e-9) {
                return Err(invalid(format!(
                    "placed inventory {y:?} is outside the bounds"
                )));
            }
            Ok(y)
        }
    }
}

/// Tracks regression diagnostics across steps.
#[derive(Default)]
pub(crate) struct FitLog {
    ridge: usize,
    max_condition: f64,
}

impl FitLog {
    pub(crate) fn push(&mut self, d: FitDiagnostics) {
        if d.rank_deficient {
            self.ridge += 1;
        }
        if d.condition_estimate.is_finite() {
            self.max_condition = self.max_condition.max(d.condition_estimate);
        }
    }

    pub(crate) fn finish(self, start: Instant) -> SolveDiagnostics {
        SolveDiagnostics {
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            ridge_fits: self.ridge,
            max_condition: self.max_condition,
            broken_by_step: Vec::new(),
            broken_path_fraction: 0.0,
        }
    }
}

/// Least-squares factor of a row-major design, logged.
pub(crate) fn factor(
    design: &[f64],
    rows: usize,
    cols: usize,
    log: &mut FitLog,
) -> Result<LeastSquares> {
    let ls = LeastSquares::new(design, rows, cols)?;
    log.push(ls.diagnostics());
    Ok(ls)
}

/// Realised payoff from step `from` to the horizon, starting at inventory `i0` on
/// path `m` and following `rule` with the rows of `coef` (row `k` decides step `k`).
/// `prepared`, when given, caches inventory-free prepared rows per `(k, m)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rollout(
    problem: &ControlProblem,
    rule: &Rule<'_>,
    coef: &[f64],
    row_len: usize,
    paths: &PathSet,
    m: usize,
    from: usize,
    i0: &[f64],
    prepared: Option<(&[f64], usize)>,
    ws: &mut Workspace,
) -> Result<f64> {
    let n_steps = problem.horizon();
    let mut i = i0.to_vec();
    let mut total = 0.0;
    for k in from..n_steps {
        let x = paths.state(m, k);
        match prepared {
            Some((cache, plen)) => {
                let off = (k * paths.m_paths() + m) * plen;
                rule.decide_prepared(problem, k, x, &i, &cache[off..off + plen], &mut ws.argmax)?
            }
            None => rule.decide(problem, k, x, &i, &coef[k * row_len..(k + 1) * row_len], ws)?,
        };
        total += problem.running_reward(k, x, &i, ws.argmax.control());
        i.copy_from_slice(ws.argmax.next_inventory());
    }
    Ok(total + problem.terminal_reward(paths.state(m, n_steps), &i))
}
