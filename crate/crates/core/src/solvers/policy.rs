use std::path::Path;

use serde::{Deserialize, Serialize};

use super::argmax::{argmax_into, ArgmaxOptions, ArgmaxWorkspace};
use super::Algorithm;
use crate::basis::{Basis, BasisSpec};
use crate::error::{invalid, Error, Result};
use crate::model::ControlProblem;
use crate::processes::ProcessSpec;

pub const POLICY_VERSION: u32 = 1;

/// Inventory levels `Λ_L` of grid discretisation: `per_dim` equally spaced levels on
/// `[0, upper_d]` in every dimension, enumerated with dimension 0 varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub per_dim: usize,
    pub upper: Vec<f64>,
}

impl LevelGrid {
    pub fn new(per_dim: usize, upper: Vec<f64>) -> Result<Self> {
        if per_dim < 2 {
            return Err(invalid("grid discretisation needs at least 2 levels"));
        }
        Ok(Self { per_dim, upper })
    }

    pub fn count(&self) -> usize {
        self.per_dim.pow(self.upper.len() as u32)
    }

    pub fn level_into(&self, l: usize, out: &mut [f64]) {
        let mut rest = l;
        for (d, o) in out.iter_mut().enumerate() {
            let k = rest % self.per_dim;
            rest /= self.per_dim;
            *o = if k + 1 == self.per_dim {
                self.upper[d]
            } else {
                self.upper[d] * k as f64 / (self.per_dim - 1) as f64
            };
        }
    }

    pub fn level(&self, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.upper.len()];
        self.level_into(l, &mut out);
        out
    }

    /// Multilinear interpolation of per-level values at inventory `i`.
    pub fn interpolate(&self, values: &[f64], i: &[f64]) -> f64 {
        let q = self.upper.len();
        let mut cell = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for d in 0..q {
            let top = (self.per_dim - 1) as f64;
            let t = if self.upper[d] > 0.0 {
                (i[d] / self.upper[d]).clamp(0.0, 1.0) * top
            } else {
                0.0
            };
            let k = (t.floor() as usize).min(self.per_dim - 2);
            cell[d] = k;
            frac[d] = t - k as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << q) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for d in 0..q {
                let up = (corner >> d) & 1 == 1;
                w *= if up { frac[d] } else { 1.0 - frac[d] };
                idx += (cell[d] + up as usize) * stride;
                stride *= self.per_dim;
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }
}

/// An estimated control policy: one coefficient row per decision step.
///
/// Row `n` holds the coefficients used when deciding at step `n`: `α^{n+1}` for
/// regress-later and control randomisation, the level family `α_n^l` (levels
/// concatenated) for grid discretisation, nothing for the myopic rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub algorithm: Algorithm,
    pub problem_fingerprint: String,
    pub basis: Option<BasisSpec>,
    /// Exogenous dynamics used for the analytic conditional expectations of regress-later.
    pub process: Option<ProcessSpec>,
    pub levels: Option<LevelGrid>,
    pub horizon: usize,
    pub row_len: usize,
    pub coefficients: Vec<f64>,
    pub argmax: ArgmaxOptions,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    algorithm: Algorithm,
    problem_fingerprint: String,
    basis: Option<BasisSpec>,
    process: Option<ProcessSpec>,
    levels: Option<LevelGrid>,
    horizon: usize,
    row_len: usize,
    /// Row-major, 17 significant digits.
    coefficients: Vec<String>,
    argmax: ArgmaxOptions,
}

impl Policy {
    /// Greedy rule with zero continuation value.
    pub fn myopic(problem: &ControlProblem, argmax: ArgmaxOptions) -> Self {
        Self {
            algorithm: Algorithm::Myopic,
            problem_fingerprint: problem.fingerprint().to_string(),
            basis: None,
            process: None,
            levels: None,
            horizon: problem.horizon(),
            row_len: 0,
            coefficients: Vec::new(),
            argmax,
        }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.coefficients[n * self.row_len..(n + 1) * self.row_len]
    }

    pub fn check_problem(&self, problem: &ControlProblem) -> Result<()> {
        if self.problem_fingerprint != problem.fingerprint() {
            return Err(Error::ProblemMismatch {
                expected: self.problem_fingerprint.clone(),
                found: problem.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PolicyFile {
            version: POLICY_VERSION,
            algorithm: self.algorithm,
            problem_fingerprint: self.problem_fingerprint.clone(),
            basis: self.basis.clone(),
            process: self.process.clone(),
            levels: self.levels.clone(),
            horizon: self.horizon,
            row_len: self.row_len,
            coefficients: self
                .coefficients
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect(),
            argmax: self.argmax,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.version != POLICY_VERSION {
            return Err(Error::UnsupportedVersion(file.version));
        }
        let coefficients = file
            .coefficients
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| invalid(format!("coefficient `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if coefficients.len() != file.horizon * file.row_len {
            return Err(Error::DimensionMismatch {
                what: "policy coefficients",
                expected: file.horizon * file.row_len,
                found: coefficients.len(),
            });
        }
        Ok(Self {
            algorithm: file.algorithm,
            problem_fingerprint: file.problem_fingerprint,
            basis: file.basis,
            process: file.process,
            levels: file.levels,
            horizon: file.horizon,
            row_len: file.row_len,
            coefficients,
            argmax: file.argmax,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Compiles the basis so the policy can take decisions.
    pub fn controller(&self) -> Result<Controller<'_>> {
        let basis = self.basis.as_ref().map(|b| b.compile()).transpose()?;
        let rule = Rule::new(
            self.algorithm,
            basis,
            self.process.as_ref(),
            self.levels.as_ref(),
            self.argmax,
        )?;
        Ok(Controller { policy: self, rule })
    }
}

/// A policy ready to decide `u(n, x, i)`.
pub struct Controller<'a> {
    policy: &'a Policy,
    rule: Rule<'a>,
}

impl Controller<'_> {
    pub fn workspace(&self, problem: &ControlProblem) -> Workspace {
        self.rule.workspace(problem)
    }

    /// Decides at `(n, x, i)`; the control is left in `ws.control()`. Returns the
    /// maximised `f + continuation`.
    pub fn decide(
        &self,
        problem: &ControlProblem,
        n: usize,
        x: &[f64],
        i: &[f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        self.rule.decide(problem, n, x, i, self.policy.row(n), ws)
    }
}

/// How a coefficient row turns into a continuation estimate.
pub(crate) struct Rule<'a> {
    pub(crate) kind: Algorithm,
    pub(crate) basis: Option<Basis>,
    process: Option<&'a ProcessSpec>,
    levels: Option<&'a LevelGrid>,
    pub(crate) argmax: ArgmaxOptions,
}

/// Per-thread scratch space for decisions.
pub struct Workspace {
    pub(crate) argmax: ArgmaxWorkspace,
    pub(crate) prep: Vec<f64>,
    pub(crate) row: Vec<f64>,
}

impl Workspace {
    pub fn control(&self) -> &[f64] {
        self.argmax.control()
    }

    pub fn next_inventory(&self) -> &[f64] {
        self.argmax.next_inventory()
    }
}

impl<'a> Rule<'a> {
    pub(crate) fn new(
        kind: Algorithm,
        basis: Option<Basis>,
        process: Option<&'a ProcessSpec>,
        levels: Option<&'a LevelGrid>,
        argmax: ArgmaxOptions,
    ) -> Result<Self> {
        let missing = |what: &str| invalid(format!("{kind:?} policy is missing its {what}"));
        match kind {
            Algorithm::Myopic => {}
            Algorithm::RegressLater => {
                basis.as_ref().ok_or_else(|| missing("basis"))?;
                process.ok_or_else(|| missing("process"))?;
            }
            Algorithm::ControlRandomisation => {
                basis.as_ref().ok_or_else(|| missing("basis"))?;
            }
            Algorithm::GridDiscretisation => {
                basis.as_ref().ok_or_else(|| missing("basis"))?;
                levels.ok_or_else(|| missing("level grid"))?;
            }
        }
        Ok(Self {
            kind,
            basis,
            process,
            levels,
            argmax,
        })
    }

    pub(crate) fn prepared_len(&self) -> usize {
        match (self.kind, &self.basis) {
            (Algorithm::RegressLater, Some(b)) => b.prepared_later_len(),
            (Algorithm::ControlRandomisation, Some(b)) => b.prepared_control_len(),
            (Algorithm::GridDiscretisation, _) => self.levels.map_or(0, |l| l.count()),
            _ => 0,
        }
    }

    pub(crate) fn workspace(&self, problem: &ControlProblem) -> Workspace {
        Workspace {
            argmax: ArgmaxWorkspace::new(problem),
            prep: vec![0.0; self.prepared_len()],
            row: vec![0.0; self.basis.as_ref().map_or(0, |b| b.len())],
        }
    }

    /// Collapses a coefficient row at `(x, i)` into the form consumed by
    /// [`Rule::decide_prepared`]. For regress-later and grid discretisation the result
    /// depends on `x` only.
    pub(crate) fn prepare(
        &self,
        x: &[f64],
        i: &[f64],
        row: &[f64],
        prep: &mut [f64],
        scratch: &mut [f64],
    ) -> Result<()> {
        let Some(basis) = &self.basis else {
            return Ok(());
        };
        match self.kind {
            Algorithm::RegressLater => {
                let process = self.process.ok_or_else(|| invalid("missing process"))?;
                basis.prepare_later_into(process, row, x, prep)?;
            }
            Algorithm::ControlRandomisation => basis.prepare_control_into(row, x, i, prep),
            Algorithm::GridDiscretisation => {
                let k = basis.len();
                basis.eval_into(x, &[], &[], scratch);
                for (l, p) in prep.iter_mut().enumerate() {
                    *p = row[l * k..(l + 1) * k]
                        .iter()
                        .zip(scratch.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            Algorithm::Myopic => {}
        }
        Ok(())
    }

    pub(crate) fn decide_prepared(
        &self,
        problem: &ControlProblem,
        n: usize,
        x: &[f64],
        i: &[f64],
        prep: &[f64],
        ws: &mut ArgmaxWorkspace,
    ) -> Result<f64> {
        match (self.kind, &self.basis) {
            (Algorithm::RegressLater, Some(b)) => {
                argmax_into(problem, n, x, i, &self.argmax, ws, |_, nx| {
                    b.eval_prepared_later(prep, nx)
                })
            }
            (Algorithm::ControlRandomisation, Some(b)) => {
                argmax_into(problem, n, x, i, &self.argmax, ws, |u, _| {
                    b.eval_prepared_control(prep, u)
                })
            }
            (Algorithm::GridDiscretisation, _) => {
                let levels = self.levels.ok_or_else(|| invalid("missing level grid"))?;
                argmax_into(problem, n, x, i, &self.argmax, ws, |_, nx| {
                    levels.interpolate(prep, nx)
                })
            }
            _ => argmax_into(problem, n, x, i, &self.argmax, ws, |_, _| 0.0),
        }
    }

    pub(crate) fn decide(
        &self,
        problem: &ControlProblem,
        n: usize,
        x: &[f64],
        i: &[f64],
        row: &[f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        let Workspace {
            argmax,
            prep,
            row: scratch,
        } = ws;
        self.prepare(x, i, row, prep, scratch)?;
        self.decide_prepared(problem, n, x, i, prep, argmax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_interpolation_averages_levels() {
        let g = LevelGrid::new(2, vec![1.0]).unwrap();
        assert_eq!(g.interpolate(&[2.0, 4.0], &[0.5]), 3.0);
        let g2 = LevelGrid::new(3, vec![2.0, 1.0]).unwrap();
        // f(i) = i0 + 10 i1 is reproduced exactly by multilinear interpolation
        let vals: Vec<f64> = (0..g2.count())
            .map(|l| {
                let p = g2.level(l);
                p[0] + 10.0 * p[1]
            })
            .collect();
        let v = g2.interpolate(&vals, &[1.3, 0.7]);
        assert!((v - 8.3).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = Policy {
            algorithm: Algorithm::ControlRandomisation,
            problem_fingerprint: "abc".into(),
            basis: None,
            process: None,
            levels: None,
            horizon: 2,
            row_len: 2,
            coefficients: vec![0.1, 1.0 / 3.0, -2.5e-300, 123_456_789.123_456_79],
            argmax: ArgmaxOptions::default(),
        };
        let back = Policy::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn version_checked() {
        let p = Policy {
            algorithm: Algorithm::Myopic,
            problem_fingerprint: "abc".into(),
            basis: None,
            process: None,
            levels: None,
            horizon: 0,
            row_len: 0,
            coefficients: vec![],
            argmax: ArgmaxOptions::default(),
        };
        let text = p
            .to_json()
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            Policy::from_json(&text),
            Err(Error::UnsupportedVersion(9))
        ));
    }
}
