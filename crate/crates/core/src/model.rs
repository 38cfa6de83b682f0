//! Inventory control problems: state spaces, dynamics, rewards and admissibility.
//!
//! A problem couples an uncontrolled `p`-dimensional exogenous state `x` with a
//! `q`-dimensional inventory `i` living on the box `[0, I_max]`. The inventory
//! moves deterministically, `i' = φ(n, u, i)`, and a control is admissible when it
//! lies in the control space and keeps `i'` inside the box.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Slack allowed on inventory bounds before a transition is rejected. Results within
/// the slack are clamped back onto the box.
pub const BOUND_TOL: f64 = 1e-12;

pub type RewardFn = Arc<dyn Fn(usize, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TransitionFn = Arc<dyn Fn(usize, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Per-dimension inventory capacities; dimension `d` lives on `[0, upper[d]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryBounds {
    pub upper: Vec<f64>,
}

impl InventoryBounds {
    pub fn new(upper: Vec<f64>) -> Result<Self> {
        if upper.is_empty() {
            return Err(invalid("inventory must have at least one dimension"));
        }
        if upper.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(invalid("inventory capacities must be finite and >= 0"));
        }
        Ok(Self { upper })
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn contains(&self, i: &[f64], tol: f64) -> bool {
        i.iter()
            .zip(&self.upper)
            .all(|(v, hi)| *v >= -tol && *v <= hi + tol)
    }

    pub fn clamp(&self, i: &mut [f64]) {
        for (v, hi) in i.iter_mut().zip(&self.upper) {
            *v = v.clamp(0.0, *hi);
        }
    }
}

/// The set controls are drawn from before inventory constraints are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpace {
    Finite(Vec<Vec<f64>>),
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ControlSpace {
    pub fn dim(&self) -> usize {
        match self {
            ControlSpace::Finite(list) => list.first().map_or(0, Vec::len),
            ControlSpace::Box { lower, .. } => lower.len(),
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSpace::Finite(list) => list.iter().any(|c| c.as_slice() == u),
            ControlSpace::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v >= lo - BOUND_TOL && *v <= hi + BOUND_TOL),
        }
    }

    /// Per-dimension lower and upper extent of the space.
    pub fn extent(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ControlSpace::Box { lower, upper } => (lower.clone(), upper.clone()),
            ControlSpace::Finite(list) => {
                let dim = self.dim();
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for c in list {
                    for d in 0..dim {
                        lo[d] = lo[d].min(c[d]);
                        hi[d] = hi[d].max(c[d]);
                    }
                }
                (lo, hi)
            }
        }
    }
}

/// Deterministic inventory dynamics.
#[derive(Clone)]
pub enum Transition {
    /// `i' = i + B u + c` with `B` stored row-major as `q × q'`.
    Affine {
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
    Custom(TransitionFn),
}

impl fmt::Debug for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Affine { matrix, offset } => f
                .debug_struct("Affine")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            Transition::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A fully specified inventory control problem.
#[derive(Clone)]
pub struct ControlProblem {
    name: String,
    fingerprint: String,
    horizon: usize,
    exo_dim: usize,
    bounds: InventoryBounds,
    control_space: ControlSpace,
    transition: Transition,
    running_reward: RewardFn,
    terminal_reward: TerminalFn,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("exo_dim", &self.exo_dim)
            .field("bounds", &self.bounds)
            .field("control_space", &self.control_space)
            .field("transition", &self.transition)
            .finish()
    }
}

pub struct ControlProblemBuilder {
    name: String,
    parameters: String,
    horizon: usize,
    exo_dim: usize,
    bounds: Option<InventoryBounds>,
    control_space: Option<ControlSpace>,
    transition: Option<Transition>,
    running_reward: Option<RewardFn>,
    terminal_reward: Option<TerminalFn>,
}

impl ControlProblemBuilder {
    pub fn horizon(mut self, n: usize) -> Self {
        self.horizon = n;
        self
    }

    pub fn exo_dim(mut self, p: usize) -> Self {
        self.exo_dim = p;
        self
    }

    pub fn inventory_upper(mut self, upper: Vec<f64>) -> Self {
        self.bounds = InventoryBounds::new(upper).ok();
        self
    }

    pub fn controls(mut self, space: ControlSpace) -> Self {
        self.control_space = Some(space);
        self
    }

    pub fn affine_transition(mut self, matrix: Vec<f64>, offset: Vec<f64>) -> Self {
        self.transition = Some(Transition::Affine { matrix, offset });
        self
    }

    pub fn transition(
        mut self,
        phi: impl Fn(usize, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.transition = Some(Transition::Custom(Arc::new(phi)));
        self
    }

    pub fn running_reward(
        mut self,
        f: impl Fn(usize, &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running_reward = Some(Arc::new(f));
        self
    }

    pub fn terminal_reward(
        mut self,
        g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal_reward = Some(Arc::new(g));
        self
    }

    /// Free-form description of every parameter hidden inside the closures. It feeds
    /// the problem fingerprint, so two problems with equal fingerprints must agree on it.
    pub fn parameters(mut self, description: impl Into<String>) -> Self {
        self.parameters = description.into();
        self
    }

    pub fn build(self) -> Result<ControlProblem> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be >= 1"));
        }
        if self.exo_dim == 0 {
            return Err(invalid("exogenous dimension must be >= 1"));
        }
        let bounds = self
            .bounds
            .ok_or_else(|| invalid("inventory bounds missing or invalid"))?;
        let control_space = self
            .control_space
            .ok_or_else(|| invalid("control space missing"))?;
        let q = bounds.dim();
        let qc = control_space.dim();
        if qc == 0 {
            return Err(invalid("control space is empty"));
        }
        match &control_space {
            ControlSpace::Finite(list) => {
                if list
                    .iter()
                    .any(|c| c.len() != qc || c.iter().any(|v| !v.is_finite()))
                {
                    return Err(invalid(
                        "finite controls must share one dimension and be finite",
                    ));
                }
            }
            ControlSpace::Box { lower, upper } => {
                if upper.len() != qc
                    || lower
                        .iter()
                        .zip(upper)
                        .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
                {
                    return Err(invalid("control box must have finite lower <= upper"));
                }
            }
        }
        let transition = self
            .transition
            .ok_or_else(|| invalid("transition missing"))?;
        if let Transition::Affine { matrix, offset } = &transition {
            if matrix.len() != q * qc {
                return Err(Error::DimensionMismatch {
                    what: "transition matrix",
                    expected: q * qc,
                    found: matrix.len(),
                });
            }
            if offset.len() != q {
                return Err(Error::DimensionMismatch {
                    what: "transition offset",
                    expected: q,
                    found: offset.len(),
                });
            }
        }
        let running_reward = self
            .running_reward
            .ok_or_else(|| invalid("running reward missing"))?;
        let terminal_reward = self
            .terminal_reward
            .ok_or_else(|| invalid("terminal reward missing"))?;

        let mut hasher = Sha256::new();
        hasher.update(self.name.as_bytes());
        hasher.update(self.parameters.as_bytes());
        hasher.update(format!(
            "|N={}|p={}|bounds={:?}|controls={:?}|transition={:?}",
            self.horizon, self.exo_dim, bounds.upper, control_space, transition
        ));
        let digest = hasher.finalize();
        let fingerprint = digest[..16].iter().map(|b| format!("{b:02x}")).collect();

        Ok(ControlProblem {
            name: self.name,
            fingerprint,
            horizon: self.horizon,
            exo_dim: self.exo_dim,
            bounds,
            control_space,
            transition,
            running_reward,
            terminal_reward,
        })
    }
}

/// Controls admissible at one `(n, i)`.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmissibleControlSet {
    Finite(Vec<Vec<f64>>),
    /// Every point of the box is admissible.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Admissible points form a polytope inside this box; membership is decided by
    /// [`ControlProblem::is_admissible`].
    Polytope {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl ControlProblem {
    pub fn builder(name: impl Into<String>) -> ControlProblemBuilder {
        ControlProblemBuilder {
            name: name.into(),
            parameters: String::new(),
            horizon: 0,
            exo_dim: 1,
            bounds: None,
            control_space: None,
            transition: None,
            running_reward: None,
            terminal_reward: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Stable hash of the problem definition, used to tie policies to problems.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn exo_dim(&self) -> usize {
        self.exo_dim
    }

    pub fn inv_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.control_space.dim()
    }

    pub fn bounds(&self) -> &InventoryBounds {
        &self.bounds
    }

    pub fn control_space(&self) -> &ControlSpace {
        &self.control_space
    }

    pub fn transition_kind(&self) -> &Transition {
        &self.transition
    }

    /// Same problem with different inventory capacities.
    pub fn with_inventory_upper(&self, upper: Vec<f64>) -> Result<Self> {
        let bounds = InventoryBounds::new(upper)?;
        if bounds.dim() != self.inv_dim() {
            return Err(Error::DimensionMismatch {
                what: "inventory bounds",
                expected: self.inv_dim(),
                found: bounds.dim(),
            });
        }
        let mut out = self.clone();
        let mut hasher = Sha256::new();
        hasher.update(self.fingerprint.as_bytes());
        hasher.update(format!("|bounds={:?}", bounds.upper));
        out.fingerprint = hasher.finalize()[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        out.bounds = bounds;
        Ok(out)
    }

    pub fn running_reward(&self, n: usize, x: &[f64], i: &[f64], u: &[f64]) -> f64 {
        (self.running_reward)(n, x, i, u)
    }

    pub fn terminal_reward(&self, x: &[f64], i: &[f64]) -> f64 {
        (self.terminal_reward)(x, i)
    }

    /// Raw `φ(n, u, i)` without any bound check.
    pub fn transition_into(&self, n: usize, u: &[f64], i: &[f64], out: &mut [f64]) {
        match &self.transition {
            Transition::Affine { matrix, offset } => {
                let qc = u.len();
                for (d, o) in out.iter_mut().enumerate() {
                    let row = &matrix[d * qc..(d + 1) * qc];
                    *o = i[d] + offset[d] + row.iter().zip(u).map(|(b, v)| b * v).sum::<f64>();
                }
            }
            Transition::Custom(phi) => phi(n, u, i, out),
        }
    }

    /// Applies `φ` and clamps the result onto the box when it lies within
    /// [`BOUND_TOL`]; returns `false` (leaving `out` unclamped) otherwise.
    pub fn try_transition(&self, n: usize, u: &[f64], i: &[f64], out: &mut [f64]) -> bool {
        self.transition_into(n, u, i, out);
        if self.bounds.contains(out, BOUND_TOL) {
            self.bounds.clamp(out);
            true
        } else {
            false
        }
    }

    /// `φ(n, u, i)` for an admissible control.
    pub fn apply_transition(&self, n: usize, u: &[f64], i: &[f64]) -> Result<Vec<f64>> {
        let mut next = vec![0.0; self.inv_dim()];
        if self.try_transition(n, u, i, &mut next) {
            Ok(next)
        } else {
            Err(Error::InadmissibleControl {
                control: u.to_vec(),
                inventory: i.to_vec(),
                next,
            })
        }
    }

    pub fn is_admissible(&self, n: usize, i: &[f64], u: &[f64]) -> bool {
        if !self.control_space.contains(u) {
            return false;
        }
        let mut next = vec![0.0; self.inv_dim()];
        self.transition_into(n, u, i, &mut next);
        self.bounds.contains(&next, BOUND_TOL)
    }

    /// Admissible controls at `(n, i)`.
    ///
    /// Box spaces with an affine transition whose matrix pairs each control with at
    /// most one inventory dimension are clipped analytically to a box; other box
    /// spaces yield a [`AdmissibleControlSet::Polytope`].
    pub fn admissible_controls(&self, n: usize, i: &[f64]) -> Result<AdmissibleControlSet> {
        if i.len() != self.inv_dim() {
            return Err(Error::DimensionMismatch {
                what: "inventory",
                expected: self.inv_dim(),
                found: i.len(),
            });
        }
        let empty = || Error::EmptyFeasibleSet {
            step: n,
            inventory: i.to_vec(),
        };
        match &self.control_space {
            ControlSpace::Finite(list) => {
                let feasible: Vec<Vec<f64>> = list
                    .iter()
                    .filter(|u| self.is_admissible(n, i, u))
                    .cloned()
                    .collect();
                if feasible.is_empty() {
                    Err(empty())
                } else {
                    Ok(AdmissibleControlSet::Finite(feasible))
                }
            }
            ControlSpace::Box { lower, upper } => {
                if let Some((lo, hi)) = self.clip_separable_box(i, lower, upper) {
                    if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                        return Err(empty());
                    }
                    return Ok(AdmissibleControlSet::Box {
                        lower: lo,
                        upper: hi,
                    });
                }
                if self.find_feasible_point(n, i, lower, upper).is_none() {
                    return Err(empty());
                }
                Ok(AdmissibleControlSet::Polytope {
                    lower: lower.clone(),
                    upper: upper.clone(),
                })
            }
        }
    }

    /// Analytic clipping for affine maps where every row and column of `B` has at
    /// most one nonzero entry.
    fn clip_separable_box(
        &self,
        i: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let Transition::Affine { matrix, offset } = &self.transition else {
            return None;
        };
        let q = self.inv_dim();
        let qc = lower.len();
        let nonzero = |d: usize, j: usize| matrix[d * qc + j] != 0.0;
        for d in 0..q {
            if (0..qc).filter(|&j| nonzero(d, j)).count() > 1 {
                return None;
            }
        }
        for j in 0..qc {
            if (0..q).filter(|&d| nonzero(d, j)).count() > 1 {
                return None;
            }
        }
        let mut lo = lower.to_vec();
        let mut hi = upper.to_vec();
        for d in 0..q {
            let base = i[d] + offset[d];
            let cap = self.bounds.upper[d];
            match (0..qc).find(|&j| nonzero(d, j)) {
                Some(j) => {
                    let b = matrix[d * qc + j];
                    let (a, c) = ((-base) / b, (cap - base) / b);
                    let (l, h) = if b > 0.0 { (a, c) } else { (c, a) };
                    // the BOUND_TOL slack on inventory translates into |b|-scaled slack on u
                    let slack = BOUND_TOL / b.abs();
                    lo[j] = lo[j].max(l - slack);
                    hi[j] = hi[j].min(h + slack);
                    if lo[j] > hi[j] && lo[j] - hi[j] <= 2.0 * slack {
                        let mid = 0.5 * (lo[j] + hi[j]);
                        lo[j] = mid;
                        hi[j] = mid;
                    }
                }
                None => {
                    if base < -BOUND_TOL || base > cap + BOUND_TOL {
                        lo[0] = f64::INFINITY;
                        hi[0] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        Some((lo, hi))
    }

    /// A feasible control inside `[lower, upper]`, searched on a coarse grid and by
    /// sequential clipping along coordinates.
    pub(crate) fn find_feasible_point(
        &self,
        n: usize,
        i: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Option<Vec<f64>> {
        const R: usize = 11;
        let dim = lower.len();
        let mut idx = vec![0usize; dim];
        let mut u = vec![0.0; dim];
        loop {
            for d in 0..dim {
                u[d] = grid_point(lower[d], upper[d], R, idx[d]);
            }
            if self.is_admissible(n, i, &u) {
                return Some(u);
            }
            if !advance(&mut idx, R) {
                break;
            }
        }
        // sequential clipping from the box centre
        let mut u: Vec<f64> = lower
            .iter()
            .zip(upper)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        for _ in 0..2 {
            for d in 0..dim {
                if let Some((l, h)) = self.line_interval(n, i, &u, d, lower[d], upper[d]) {
                    u[d] = u[d].clamp(l, h);
                }
            }
            if self.is_admissible(n, i, &u) {
                return Some(u);
            }
        }
        None
    }

    /// Admissible range of coordinate `d` when the other coordinates of `u` are held
    /// fixed, intersected with `[lo, hi]`. Exact for affine transitions; for custom
    /// transitions the range is assumed to be an interval and located by bisection
    /// from `u[d]`, which must itself be admissible.
    pub fn line_interval(
        &self,
        n: usize,
        i: &[f64],
        u: &[f64],
        d: usize,
        lo: f64,
        hi: f64,
    ) -> Option<(f64, f64)> {
        match &self.transition {
            Transition::Affine { matrix, offset } => {
                let qc = u.len();
                let mut l = lo;
                let mut h = hi;
                for r in 0..self.inv_dim() {
                    let row = &matrix[r * qc..(r + 1) * qc];
                    let mut base = i[r] + offset[r];
                    for (j, (b, v)) in row.iter().zip(u).enumerate() {
                        if j != d {
                            base += b * v;
                        }
                    }
                    let b = row[d];
                    let cap = self.bounds.upper[r];
                    if b == 0.0 {
                        if base < -BOUND_TOL || base > cap + BOUND_TOL {
                            return None;
                        }
                        continue;
                    }
                    let slack = BOUND_TOL / b.abs();
                    let (a, c) = ((-base) / b, (cap - base) / b);
                    let (bl, bh) = if b > 0.0 { (a, c) } else { (c, a) };
                    l = l.max(bl - slack);
                    h = h.min(bh + slack);
                }
                (l <= h).then_some((l, h))
            }
            Transition::Custom(_) => {
                let mut probe = u.to_vec();
                if !self.is_admissible(n, i, &probe) {
                    return None;
                }
                let centre = u[d];
                let mut edge = |target: f64| -> f64 {
                    probe[d] = target;
                    if self.is_admissible(n, i, &probe) {
                        return target;
                    }
                    let (mut good, mut bad) = (centre, target);
                    for _ in 0..60 {
                        let mid = 0.5 * (good + bad);
                        probe[d] = mid;
                        if self.is_admissible(n, i, &probe) {
                            good = mid;
                        } else {
                            bad = mid;
                        }
                    }
                    good
                };
                let l = edge(lo);
                let h = edge(hi);
                Some((l, h))
            }
        }
    }
}

pub(crate) fn grid_point(lo: f64, hi: f64, resolution: usize, k: usize) -> f64 {
    if resolution <= 1 || hi <= lo {
        return if hi <= lo { lo } else { 0.5 * (lo + hi) };
    }
    if k + 1 == resolution {
        hi
    } else {
        lo + (hi - lo) * k as f64 / (resolution - 1) as f64
    }
}

/// Odometer increment over `[0, base)^dim`; `false` once every index wrapped.
pub(crate) fn advance(idx: &mut [usize], base: usize) -> bool {
    for v in idx.iter_mut() {
        *v += 1;
        if *v < base {
            return true;
        }
        *v = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arbitrage(delta: f64) -> ControlProblem {
        ControlProblem::builder("arb")
            .horizon(200)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Finite(vec![
                vec![-11.5],
                vec![0.0],
                vec![11.5],
            ]))
            .affine_transition(vec![delta], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap()
    }

    fn hydro() -> ControlProblem {
        ControlProblem::builder("hydro")
            .horizon(10)
            .inventory_upper(vec![2.0, 1.0])
            .controls(ControlSpace::Box {
                lower: vec![-0.6, 0.0],
                upper: vec![0.6, 1.2],
            })
            .affine_transition(vec![1.0, 0.0, -1.0, -1.0], vec![0.12, 0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn empty_inventory_excludes_selling() {
        let p = arbitrage(1.0 / 200.0);
        let set = p.admissible_controls(0, &[0.0]).unwrap();
        assert_eq!(
            set,
            AdmissibleControlSet::Finite(vec![vec![0.0], vec![11.5]])
        );
    }

    #[test]
    fn interior_inventory_allows_everything() {
        let p = arbitrage(1.0 / 200.0);
        let set = p.admissible_controls(0, &[0.5]).unwrap();
        assert_eq!(
            set,
            AdmissibleControlSet::Finite(vec![vec![-11.5], vec![0.0], vec![11.5]])
        );
    }

    #[test]
    fn additive_transition_arithmetic() {
        let p = arbitrage(1.0 / 200.0);
        let next = p.apply_transition(0, &[11.5], &[0.5]).unwrap();
        assert!((next[0] - 0.5575).abs() < 1e-15);
        assert_eq!(p.apply_transition(0, &[0.0], &[0.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn hydro_bound_violation_is_rejected() {
        let p = hydro();
        let err = p.apply_transition(0, &[0.6, 1.2], &[1.0, 0.5]).unwrap_err();
        match err {
            Error::InadmissibleControl { next, .. } => {
                assert!((next[0] - 1.72).abs() < 1e-12);
                assert!(next[1] < 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn drift_within_tolerance_is_clamped() {
        let p = arbitrage(1.0);
        let next = p.apply_transition(0, &[0.0], &[1.0 + 5e-13]).unwrap();
        assert_eq!(next, vec![1.0]);
    }

    #[test]
    fn hydro_admissible_set_matches_exhaustive_scan() {
        let p = hydro();
        for &(i1, i2) in &[(2.0, 1.0), (2.0, 0.0), (0.0, 0.0), (1.0, 0.5), (0.05, 0.95)] {
            let i = [i1, i2];
            let set = p.admissible_controls(0, &i).unwrap();
            let (lo, hi) = match &set {
                AdmissibleControlSet::Polytope { lower, upper } => (lower.clone(), upper.clone()),
                other => panic!("expected polytope, got {other:?}"),
            };
            let mut found = 0usize;
            for a in 0..=120 {
                for b in 0..=120 {
                    let u = [-0.6 + 0.01 * a as f64, 0.01 * b as f64];
                    let mut next = [0.0; 2];
                    p.transition_into(0, &u, &i, &mut next);
                    let direct = next[0] >= -1e-12
                        && next[0] <= 2.0 + 1e-12
                        && next[1] >= -1e-12
                        && next[1] <= 1.0 + 1e-12;
                    assert_eq!(p.is_admissible(0, &i, &u), direct, "at u={u:?}, i={i:?}");
                    if direct {
                        found += 1;
                        assert!(u[0] >= lo[0] - 1e-12 && u[0] <= hi[0] + 1e-12);
                        // the coordinate range through an admissible point contains it
                        let (l, h) = p.line_interval(0, &i, &u, 1, lo[1], hi[1]).unwrap();
                        assert!(u[1] >= l - 1e-9 && u[1] <= h + 1e-9);
                    }
                }
            }
            assert!(found > 0);
        }
    }

    #[test]
    fn separable_box_is_clipped() {
        let p = ControlProblem::builder("battery-like")
            .horizon(3)
            .inventory_upper(vec![20.0])
            .controls(ControlSpace::Box {
                lower: vec![-2.1],
                upper: vec![2.1],
            })
            .affine_transition(vec![1.0], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        match p.admissible_controls(0, &[19.0]).unwrap() {
            AdmissibleControlSet::Box { lower, upper } => {
                assert!((lower[0] + 2.1).abs() < 1e-12);
                assert!((upper[0] - 1.0).abs() < 1e-11);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        let p = ControlProblem::builder("stuck")
            .horizon(1)
            .inventory_upper(vec![1.0])
            .controls(ControlSpace::Finite(vec![vec![1.0]]))
            .affine_transition(vec![1.0], vec![0.0])
            .running_reward(|_, _, _, _| 0.0)
            .terminal_reward(|_, _| 0.0)
            .build()
            .unwrap();
        assert!(matches!(
            p.admissible_controls(0, &[0.5]),
            Err(Error::EmptyFeasibleSet { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn admissible_controls_always_transition(i in 0.0f64..=1.0, delta in 0.001f64..0.2) {
                let p = arbitrage(delta);
                if let Ok(AdmissibleControlSet::Finite(list)) = p.admissible_controls(0, &[i]) {
                    for u in list {
                        prop_assert!(p.apply_transition(0, &u, &[i]).is_ok());
                    }
                }
            }

            #[test]
            fn enlarging_bounds_never_shrinks(i in 0.0f64..=1.0, extra in 0.0f64..2.0) {
                let p = arbitrage(0.05);
                let bigger = p.with_inventory_upper(vec![1.0 + extra]).unwrap();
                let small = p.admissible_controls(0, &[i]).unwrap();
                let large = bigger.admissible_controls(0, &[i]).unwrap();
                if let (AdmissibleControlSet::Finite(s), AdmissibleControlSet::Finite(l)) = (small, large) {
                    for u in s {
                        prop_assert!(l.contains(&u));
                    }
                }
            }

            #[test]
            fn hydro_water_balance(i1 in 0.0f64..=2.0, i2 in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let p = hydro();
                let u = [-0.6 + 1.2 * a, 1.2 * b];
                let mut next = [0.0; 2];
                p.transition_into(0, &u, &[i1, i2], &mut next);
                let change = next[0] + next[1] - i1 - i2;
                prop_assert!((change - (0.12 - u[1])).abs() < 1e-12);
            }
        }
    }
}
