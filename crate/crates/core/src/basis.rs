//! Basis families over `(x, i)` and `(x, i, u)`, with analytic one-step conditional
//! expectations for the regress-later families.
//!
//! A [`BasisSpec`] is the serialisable description; [`Basis`] is the compiled form
//! used by the solvers. Besides plain evaluation, a compiled basis can collapse a
//! coefficient vector at a fixed exogenous state into a short "prepared" coefficient
//! vector, so that the continuation `Σ α_k E[φ_k(X', i') | X = x]` can be evaluated for
//! many candidate `i'` at the cost of a polynomial in `i'` alone.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::processes::{ProcessSpec, MAX_MOMENT_DEGREE};

/// Exponents of one product monomial; missing blocks mean all-zero exponents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monomial {
    #[serde(default)]
    pub exo: Vec<u32>,
    #[serde(default)]
    pub inv: Vec<u32>,
    #[serde(default)]
    pub control: Vec<u32>,
}

impl Monomial {
    pub fn new(exo: Vec<u32>, inv: Vec<u32>, control: Vec<u32>) -> Self {
        Self { exo, inv, control }
    }
}

/// Coordinates are mapped to `(v - center) / half_width` before taking powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineScaling {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl AffineScaling {
    /// Maps `[lower, upper]` onto `[-1, 1]`.
    pub fn from_range(lower: &[f64], upper: &[f64]) -> Self {
        let center = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        let half_width = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| {
                let h = 0.5 * (u - l);
                if h > 0.0 {
                    h
                } else {
                    1.0
                }
            })
            .collect();
        Self { center, half_width }
    }

    #[inline]
    fn apply(&self, d: usize, v: f64) -> f64 {
        (v - self.center[d]) / self.half_width[d]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    #[serde(default)]
    pub exo: Option<AffineScaling>,
    #[serde(default)]
    pub inv: Option<AffineScaling>,
    #[serde(default)]
    pub control: Option<AffineScaling>,
}

/// A list of product monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    pub exo_dim: usize,
    pub inv_dim: usize,
    #[serde(default)]
    pub control_dim: usize,
    pub terms: Vec<Monomial>,
    #[serde(default)]
    pub scaling: Scaling,
}

fn multi_indices(max: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &m in max {
        let mut next = Vec::with_capacity(out.len() * (m as usize + 1));
        for e in 0..=m {
            for prefix in &out {
                let mut v: Vec<u32> = prefix.clone();
                v.push(e);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn total_degree_indices(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut all = multi_indices(&vec![degree; dim]);
    all.retain(|v| v.iter().sum::<u32>() <= degree);
    all.sort_by_key(|v| v.iter().sum::<u32>());
    all
}

impl PolyBasis {
    pub fn from_terms(
        exo_dim: usize,
        inv_dim: usize,
        control_dim: usize,
        terms: Vec<Monomial>,
    ) -> Self {
        Self {
            exo_dim,
            inv_dim,
            control_dim,
            terms,
            scaling: Scaling::default(),
        }
    }

    /// Every product `x^a i^b u^c` with `a <= exo_max`, `b <= inv_max`, `c <= control_max`
    /// componentwise.
    pub fn tensor(exo_max: &[u32], inv_max: &[u32], control_max: &[u32]) -> Self {
        let mut terms = Vec::new();
        for c in multi_indices(control_max) {
            for b in multi_indices(inv_max) {
                for a in multi_indices(exo_max) {
                    terms.push(Monomial::new(a.clone(), b.clone(), c.clone()));
                }
            }
        }
        Self::from_terms(exo_max.len(), inv_max.len(), control_max.len(), terms)
    }

    /// All monomials in `(x, i, u)` of total degree at most `degree`.
    pub fn total_degree(exo_dim: usize, inv_dim: usize, control_dim: usize, degree: u32) -> Self {
        let terms = total_degree_indices(exo_dim + inv_dim + control_dim, degree)
            .into_iter()
            .map(|v| {
                Monomial::new(
                    v[..exo_dim].to_vec(),
                    v[exo_dim..exo_dim + inv_dim].to_vec(),
                    v[exo_dim + inv_dim..].to_vec(),
                )
            })
            .collect();
        Self::from_terms(exo_dim, inv_dim, control_dim, terms)
    }

    /// Products of every exogenous monomial of total degree `<= exo_degree` with every
    /// inventory monomial of total degree `<= inv_degree`.
    pub fn product_total(exo_dim: usize, exo_degree: u32, inv_dim: usize, inv_degree: u32) -> Self {
        let mut terms = Vec::new();
        for b in total_degree_indices(inv_dim, inv_degree) {
            for a in total_degree_indices(exo_dim, exo_degree) {
                terms.push(Monomial::new(a, b.clone(), vec![]));
            }
        }
        Self::from_terms(exo_dim, inv_dim, 0, terms)
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }
}

/// Tensor partition of `[exo_lower, exo_upper] × [0, inv_upper]` into boxes, with a
/// local affine basis `{1, x_d, i_d}` (in box-centred coordinates) on each box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercubeGrid {
    pub exo_lower: Vec<f64>,
    pub exo_upper: Vec<f64>,
    pub exo_cells: Vec<usize>,
    pub inv_upper: Vec<f64>,
    pub inv_cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisSpec {
    /// `φ_k(x, i) = x^a i^b`, the regress-later polynomial family.
    PolyProduct(PolyBasis),
    /// `φ_k(x, i, u) = x^a i^b u^c`, for control randomisation.
    PolyWithControl(PolyBasis),
    /// `φ_k(x) = x^a`, for grid discretisation.
    ExoOnly(PolyBasis),
    /// Piecewise affine functions on disjoint boxes.
    HypercubeAffine(HypercubeGrid),
}

impl BasisSpec {
    pub fn family(&self) -> &'static str {
        match self {
            BasisSpec::PolyProduct(_) => "poly_product",
            BasisSpec::PolyWithControl(_) => "poly_with_control",
            BasisSpec::ExoOnly(_) => "exo_only",
            BasisSpec::HypercubeAffine(_) => "hypercube_affine",
        }
    }

    pub fn compile(&self) -> Result<Basis> {
        Basis::compile(self.clone())
    }
}

/// Distinct exponent vectors over one block of coordinates; terms map into them.
#[derive(Debug, Clone)]
pub struct GroupLayout {
    dim: usize,
    max_degree: usize,
    exps: Vec<u32>,
    scaling: Option<AffineScaling>,
}

const POW_BUF: usize = 128;
/// Most distinct monomials allowed per coordinate block.
const MAX_GROUPS: usize = 64;

impl GroupLayout {
    fn new(dim: usize, scaling: Option<AffineScaling>) -> Self {
        Self {
            dim,
            max_degree: 0,
            exps: Vec::new(),
            scaling,
        }
    }

    fn intern(&mut self, e: &[u32]) -> usize {
        let n = self.len();
        for g in 0..n {
            if &self.exps[g * self.dim..(g + 1) * self.dim] == e {
                return g;
            }
        }
        self.exps.extend_from_slice(e);
        self.max_degree = self
            .max_degree
            .max(e.iter().copied().max().unwrap_or(0) as usize);
        n
    }

    pub fn len(&self) -> usize {
        self.exps.len().checked_div(self.dim).unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn powers(&self, v: &[f64], buf: &mut [f64; POW_BUF]) {
        let stride = self.max_degree + 1;
        for d in 0..self.dim {
            let z = match &self.scaling {
                Some(s) => s.apply(d, v[d]),
                None => v[d],
            };
            let row = &mut buf[d * stride..(d + 1) * stride];
            row[0] = 1.0;
            for j in 1..stride {
                row[j] = row[j - 1] * z;
            }
        }
    }

    /// Values of every group monomial at `v`.
    #[inline]
    fn eval_groups(&self, v: &[f64], out: &mut [f64]) {
        let mut buf = [0.0; POW_BUF];
        self.powers(v, &mut buf);
        let stride = self.max_degree + 1;
        for (g, o) in out.iter_mut().enumerate() {
            let mut acc = 1.0;
            for d in 0..self.dim {
                acc *= buf[d * stride + self.exps[g * self.dim + d] as usize];
            }
            *o = acc;
        }
    }

    /// `Σ_g coef_g · m_g(v)`.
    #[inline]
    pub fn eval(&self, coef: &[f64], v: &[f64]) -> f64 {
        if self.dim == 1 {
            let z = match &self.scaling {
                Some(s) => s.apply(0, v[0]),
                None => v[0],
            };
            let mut pw = [0.0; MAX_MOMENT_DEGREE + 1];
            pw[0] = 1.0;
            for j in 1..=self.max_degree {
                pw[j] = pw[j - 1] * z;
            }
            return coef
                .iter()
                .zip(&self.exps)
                .map(|(c, e)| c * pw[*e as usize])
                .sum();
        }
        let mut buf = [0.0; POW_BUF];
        self.powers(v, &mut buf);
        let stride = self.max_degree + 1;
        let mut total = 0.0;
        for (g, c) in coef.iter().enumerate() {
            let mut acc = *c;
            for d in 0..self.dim {
                acc *= buf[d * stride + self.exps[g * self.dim + d] as usize];
            }
            total += acc;
        }
        total
    }
}

#[derive(Debug, Clone)]
struct CompiledPoly {
    k: usize,
    exo: GroupLayout,
    inv: GroupLayout,
    control: GroupLayout,
    exo_group: Vec<usize>,
    inv_group: Vec<usize>,
    control_group: Vec<usize>,
}

#[derive(Debug, Clone)]
struct CompiledCells {
    grid: HypercubeGrid,
    p: usize,
    q: usize,
    n_exo_cells: usize,
    n_inv_cells: usize,
}

impl CompiledCells {
    fn terms_per_cell(&self) -> usize {
        1 + self.p + self.q
    }

    fn width(lo: f64, hi: f64, cells: usize) -> f64 {
        (hi - lo) / cells as f64
    }

    /// Cell index along one axis; the top edge belongs to the last cell.
    #[inline]
    fn axis_cell(v: f64, lo: f64, hi: f64, cells: usize) -> Option<usize> {
        if !(v >= lo && v <= hi) {
            return None;
        }
        if v == hi {
            return Some(cells - 1);
        }
        let k = ((v - lo) / Self::width(lo, hi, cells)) as usize;
        Some(k.min(cells - 1))
    }

    #[inline]
    fn local(v: f64, lo: f64, hi: f64, cells: usize, k: usize) -> f64 {
        let w = Self::width(lo, hi, cells);
        let centre = lo + (k as f64 + 0.5) * w;
        (v - centre) / (0.5 * w)
    }

    fn exo_cell(&self, x: &[f64], idx: &mut [usize]) -> Option<usize> {
        let g = &self.grid;
        let mut lin = 0;
        for d in (0..self.p).rev() {
            let k = Self::axis_cell(x[d], g.exo_lower[d], g.exo_upper[d], g.exo_cells[d])?;
            idx[d] = k;
            lin = lin * g.exo_cells[d] + k;
        }
        Some(lin)
    }

    #[inline]
    fn inv_cell(&self, i: &[f64], idx: &mut [usize]) -> Option<usize> {
        let g = &self.grid;
        let mut lin = 0;
        for d in (0..self.q).rev() {
            let k = Self::axis_cell(i[d], 0.0, g.inv_upper[d], g.inv_cells[d])?;
            idx[d] = k;
            lin = lin * g.inv_cells[d] + k;
        }
        Some(lin)
    }

    fn exo_cell_index(&self, mut lin: usize, idx: &mut [usize]) {
        for d in 0..self.p {
            idx[d] = lin % self.grid.exo_cells[d];
            lin /= self.grid.exo_cells[d];
        }
    }

    /// For each exogenous cell: `E[1_cell]` followed by `E[z_e 1_cell]` for each `e`.
    fn exo_factors(&self, process: &ProcessSpec, x: &[f64]) -> Result<Vec<f64>> {
        let g = &self.grid;
        let mut m0: Vec<Vec<f64>> = Vec::with_capacity(self.p);
        let mut m1: Vec<Vec<f64>> = Vec::with_capacity(self.p);
        let mut tmp = [0.0; 2];
        for d in 0..self.p {
            let law = process.components[d].step_law(x[d])?;
            let cells = g.exo_cells[d];
            let w = Self::width(g.exo_lower[d], g.exo_upper[d], cells);
            let mut r0 = Vec::with_capacity(cells);
            let mut r1 = Vec::with_capacity(cells);
            for k in 0..cells {
                let lo = g.exo_lower[d] + k as f64 * w;
                let hi = if k + 1 == cells {
                    g.exo_upper[d]
                } else {
                    lo + w
                };
                law.truncated_moments_into(lo, hi, k + 1 == cells, &mut tmp);
                let centre = lo + 0.5 * w;
                r0.push(tmp[0]);
                r1.push((tmp[1] - centre * tmp[0]) / (0.5 * w));
            }
            m0.push(r0);
            m1.push(r1);
        }
        let stride = 1 + self.p;
        let mut out = vec![0.0; self.n_exo_cells * stride];
        let mut idx = vec![0usize; self.p];
        for c in 0..self.n_exo_cells {
            self.exo_cell_index(c, &mut idx);
            let base: f64 = (0..self.p).map(|d| m0[d][idx[d]]).product();
            out[c * stride] = base;
            for e in 0..self.p {
                let mut v = m1[e][idx[e]];
                for d in 0..self.p {
                    if d != e {
                        v *= m0[d][idx[d]];
                    }
                }
                out[c * stride + 1 + e] = v;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum Layout {
    Poly(CompiledPoly),
    Cells(CompiledCells),
}

/// A validated, compiled basis.
#[derive(Debug, Clone)]
pub struct Basis {
    spec: BasisSpec,
    layout: Layout,
}

impl Basis {
    pub fn compile(spec: BasisSpec) -> Result<Self> {
        let layout = match &spec {
            BasisSpec::PolyProduct(p) | BasisSpec::PolyWithControl(p) | BasisSpec::ExoOnly(p) => {
                Layout::Poly(Self::compile_poly(&spec, p)?)
            }
            BasisSpec::HypercubeAffine(g) => Layout::Cells(Self::compile_cells(g)?),
        };
        Ok(Self { spec, layout })
    }

    fn compile_poly(spec: &BasisSpec, p: &PolyBasis) -> Result<CompiledPoly> {
        if p.terms.is_empty() {
            return Err(invalid("basis needs at least one term"));
        }
        if p.exo_dim == 0 {
            return Err(invalid("basis exogenous dimension must be >= 1"));
        }
        match spec {
            BasisSpec::PolyWithControl(_) if p.control_dim == 0 => {
                return Err(invalid("control basis needs control_dim >= 1"))
            }
            BasisSpec::PolyProduct(_) | BasisSpec::ExoOnly(_) if p.control_dim != 0 => {
                return Err(invalid(
                    "only the control family may have control exponents",
                ))
            }
            _ => {}
        }
        let check_scaling = |s: &Option<AffineScaling>, dim: usize| -> Result<()> {
            if let Some(s) = s {
                if s.center.len() != dim || s.half_width.len() != dim {
                    return Err(invalid("scaling dimension does not match the basis"));
                }
                if s.half_width.iter().any(|h| !(h.is_finite() && *h > 0.0))
                    || s.center.iter().any(|c| !c.is_finite())
                {
                    return Err(invalid("scaling half widths must be finite and positive"));
                }
            }
            Ok(())
        };
        check_scaling(&p.scaling.exo, p.exo_dim)?;
        check_scaling(&p.scaling.inv, p.inv_dim)?;
        check_scaling(&p.scaling.control, p.control_dim)?;

        let pad = |v: &[u32], dim: usize, what: &'static str| -> Result<Vec<u32>> {
            if v.is_empty() {
                Ok(vec![0; dim])
            } else if v.len() == dim {
                Ok(v.to_vec())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected: dim,
                    found: v.len(),
                })
            }
        };
        let mut exo = GroupLayout::new(p.exo_dim, p.scaling.exo.clone());
        let mut inv = GroupLayout::new(p.inv_dim, p.scaling.inv.clone());
        let mut control = GroupLayout::new(p.control_dim, p.scaling.control.clone());
        let mut seen: Vec<(Vec<u32>, Vec<u32>, Vec<u32>)> = Vec::with_capacity(p.terms.len());
        let (mut eg, mut ig, mut cg) = (Vec::new(), Vec::new(), Vec::new());
        for t in &p.terms {
            let a = pad(&t.exo, p.exo_dim, "exogenous exponents")?;
            let b = pad(&t.inv, p.inv_dim, "inventory exponents")?;
            let c = pad(&t.control, p.control_dim, "control exponents")?;
            if matches!(spec, BasisSpec::ExoOnly(_)) && b.iter().any(|e| *e != 0) {
                return Err(invalid(
                    "exogenous-only basis cannot contain inventory powers",
                ));
            }
            if a.iter()
                .chain(&b)
                .chain(&c)
                .any(|e| *e as usize > MAX_MOMENT_DEGREE)
            {
                return Err(Error::UnsupportedMoment(format!(
                    "basis exponent above {MAX_MOMENT_DEGREE}"
                )));
            }
            let key = (a.clone(), b.clone(), c.clone());
            if seen.contains(&key) {
                return Err(invalid(format!("duplicate basis term {key:?}")));
            }
            seen.push(key);
            eg.push(exo.intern(&a));
            ig.push(inv.intern(&b));
            cg.push(control.intern(&c));
        }
        for (layout, what) in [
            (&exo, "exogenous"),
            (&inv, "inventory"),
            (&control, "control"),
        ] {
            if layout.dim * (layout.max_degree + 1) > POW_BUF || layout.len() > MAX_GROUPS {
                return Err(invalid(format!("{what} block has too many monomials")));
            }
        }
        Ok(CompiledPoly {
            k: p.terms.len(),
            exo,
            inv,
            control,
            exo_group: eg,
            inv_group: ig,
            control_group: cg,
        })
    }

    fn compile_cells(g: &HypercubeGrid) -> Result<CompiledCells> {
        let p = g.exo_lower.len();
        let q = g.inv_upper.len();
        if p == 0
            || q == 0
            || g.exo_upper.len() != p
            || g.exo_cells.len() != p
            || g.inv_cells.len() != q
        {
            return Err(invalid("hypercube grid dimensions are inconsistent"));
        }
        if g.exo_cells.iter().chain(&g.inv_cells).any(|c| *c == 0) {
            return Err(invalid("hypercube grid needs at least one cell per axis"));
        }
        if g.exo_lower
            .iter()
            .zip(&g.exo_upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
            || g.inv_upper.iter().any(|u| !(u.is_finite() && *u > 0.0))
        {
            return Err(invalid(
                "hypercube bounds must be finite with lower < upper",
            ));
        }
        Ok(CompiledCells {
            grid: g.clone(),
            p,
            q,
            n_exo_cells: g.exo_cells.iter().product(),
            n_inv_cells: g.inv_cells.iter().product(),
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// Number of basis functions `K`.
    pub fn len(&self) -> usize {
        match &self.layout {
            Layout::Poly(p) => p.k,
            Layout::Cells(c) => c.n_exo_cells * c.n_inv_cells * c.terms_per_cell(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn exo_dim(&self) -> usize {
        match &self.layout {
            Layout::Poly(p) => p.exo.dim,
            Layout::Cells(c) => c.p,
        }
    }

    pub fn inv_dim(&self) -> usize {
        match &self.layout {
            Layout::Poly(p) => p.inv.dim,
            Layout::Cells(c) => c.q,
        }
    }

    pub fn uses_control(&self) -> bool {
        matches!(self.spec, BasisSpec::PolyWithControl(_))
    }

    /// `φ(x, i, u)`; `u` must be given exactly for the control family.
    pub fn eval_basis(&self, x: &[f64], i: &[f64], u: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_checked_into(x, i, u, &mut out)?;
        Ok(out)
    }

    pub fn eval_checked_into(
        &self,
        x: &[f64],
        i: &[f64],
        u: Option<&[f64]>,
        out: &mut [f64],
    ) -> Result<()> {
        let mismatch = |what, expected, found| Error::DimensionMismatch {
            what,
            expected,
            found,
        };
        if x.len() != self.exo_dim() {
            return Err(mismatch("exogenous state", self.exo_dim(), x.len()));
        }
        let needs_inv = !matches!(self.spec, BasisSpec::ExoOnly(_));
        if needs_inv && i.len() != self.inv_dim() {
            return Err(mismatch("inventory", self.inv_dim(), i.len()));
        }
        match (self.uses_control(), u) {
            (true, Some(u)) => {
                if let Layout::Poly(p) = &self.layout {
                    if u.len() != p.control.dim {
                        return Err(mismatch("control", p.control.dim, u.len()));
                    }
                }
            }
            (true, None) => return Err(mismatch("control", 1, 0)),
            (false, Some(u)) => return Err(mismatch("control", 0, u.len())),
            (false, None) => {}
        }
        if out.len() != self.len() {
            return Err(mismatch("basis output", self.len(), out.len()));
        }
        self.eval_into(x, i, u.unwrap_or(&[]), out);
        Ok(())
    }

    /// Unchecked evaluation used on hot paths.
    pub fn eval_into(&self, x: &[f64], i: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.layout {
            Layout::Poly(p) => {
                let mut ev = [0.0; MAX_GROUPS];
                let mut iv = [0.0; MAX_GROUPS];
                let mut cv = [0.0; MAX_GROUPS];
                let ev = &mut ev[..p.exo.len()];
                let iv = &mut iv[..p.inv.len()];
                let cv = &mut cv[..p.control.len()];
                p.exo.eval_groups(x, ev);
                if p.inv.dim > 0 && !matches!(self.spec, BasisSpec::ExoOnly(_)) {
                    p.inv.eval_groups(i, iv);
                } else {
                    iv.fill(1.0);
                }
                if p.control.dim > 0 {
                    p.control.eval_groups(u, cv);
                } else {
                    cv.fill(1.0);
                }
                for k in 0..p.k {
                    out[k] = ev[p.exo_group[k]] * iv[p.inv_group[k]] * cv[p.control_group[k]];
                }
            }
            Layout::Cells(c) => {
                out.fill(0.0);
                let mut xi = [0usize; 16];
                let mut ii = [0usize; 16];
                let (Some(cx), Some(ci)) = (c.exo_cell(x, &mut xi), c.inv_cell(i, &mut ii)) else {
                    return;
                };
                let t = c.terms_per_cell();
                let base = (cx * c.n_inv_cells + ci) * t;
                let g = &c.grid;
                out[base] = 1.0;
                for d in 0..c.p {
                    out[base + 1 + d] = CompiledCells::local(
                        x[d],
                        g.exo_lower[d],
                        g.exo_upper[d],
                        g.exo_cells[d],
                        xi[d],
                    );
                }
                for d in 0..c.q {
                    out[base + 1 + c.p + d] =
                        CompiledCells::local(i[d], 0.0, g.inv_upper[d], g.inv_cells[d], ii[d]);
                }
            }
        }
    }

    /// `E[φ_k(X', i_next) | X = x]` for every `k`.
    pub fn eval_conditional_basis(
        &self,
        process: &ProcessSpec,
        x: &[f64],
        i_next: &[f64],
    ) -> Result<Vec<f64>> {
        if x.len() != self.exo_dim() || process.dim() != self.exo_dim() {
            return Err(Error::DimensionMismatch {
                what: "exogenous state",
                expected: self.exo_dim(),
                found: x.len().min(process.dim()),
            });
        }
        if i_next.len() != self.inv_dim() {
            return Err(Error::DimensionMismatch {
                what: "inventory",
                expected: self.inv_dim(),
                found: i_next.len(),
            });
        }
        let mut out = vec![0.0; self.len()];
        match &self.layout {
            Layout::Poly(p) => {
                if self.uses_control() {
                    return Err(Error::UnsupportedMoment(
                        "conditional expectations are not defined for the control family".into(),
                    ));
                }
                let exo = Self::exo_group_moments(p, process, x)?;
                let mut iv = vec![1.0; p.inv.len()];
                if p.inv.dim > 0 {
                    p.inv.eval_groups(i_next, &mut iv);
                }
                for k in 0..p.k {
                    out[k] = exo[p.exo_group[k]] * iv[p.inv_group[k]];
                }
            }
            Layout::Cells(c) => {
                let factors = c.exo_factors(process, x)?;
                let mut ii = [0usize; 16];
                let Some(ci) = c.inv_cell(i_next, &mut ii) else {
                    return Ok(out);
                };
                let t = c.terms_per_cell();
                let g = &c.grid;
                for cx in 0..c.n_exo_cells {
                    let f = &factors[cx * (1 + c.p)..(cx + 1) * (1 + c.p)];
                    let base = (cx * c.n_inv_cells + ci) * t;
                    out[base] = f[0];
                    out[base + 1..base + 1 + c.p].copy_from_slice(&f[1..]);
                    for d in 0..c.q {
                        out[base + 1 + c.p + d] = f[0]
                            * CompiledCells::local(
                                i_next[d],
                                0.0,
                                g.inv_upper[d],
                                g.inv_cells[d],
                                ii[d],
                            );
                    }
                }
            }
        }
        Ok(out)
    }

    /// `E[Π_d z_d^{a_d}]` for each distinct exogenous monomial, using independence
    /// across components.
    fn exo_group_moments(p: &CompiledPoly, process: &ProcessSpec, x: &[f64]) -> Result<Vec<f64>> {
        let deg = p.exo.max_degree;
        let mut table = vec![0.0; p.exo.dim * (deg + 1)];
        for d in 0..p.exo.dim {
            let law = process.components[d].step_law(x[d])?;
            let row = &mut table[d * (deg + 1)..(d + 1) * (deg + 1)];
            match &p.exo.scaling {
                Some(s) => law.scaled_moments_into(s.center[d], s.half_width[d], row),
                None => law.raw_moments_into(row),
            }
        }
        let n = p.exo.len();
        let mut out = vec![1.0; n];
        for (g, o) in out.iter_mut().enumerate() {
            for d in 0..p.exo.dim {
                *o *= table[d * (deg + 1) + p.exo.exps[g * p.exo.dim + d] as usize];
            }
        }
        Ok(out)
    }

    /// Length of the prepared coefficient vectors produced by [`Basis::prepare_later_into`].
    pub fn prepared_later_len(&self) -> usize {
        match &self.layout {
            Layout::Poly(p) => p.inv.len(),
            Layout::Cells(c) => c.n_inv_cells * (1 + c.q),
        }
    }

    /// Collapses `Σ_k α_k E[φ_k(X', ·) | X = x]` into a function of the next inventory
    /// alone, evaluated by [`Basis::eval_prepared_later`].
    pub fn prepare_later_into(
        &self,
        process: &ProcessSpec,
        alpha: &[f64],
        x: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        match &self.layout {
            Layout::Poly(p) => {
                if self.uses_control() {
                    return Err(Error::UnsupportedMoment(
                        "conditional expectations are not defined for the control family".into(),
                    ));
                }
                let exo = Self::exo_group_moments(p, process, x)?;
                out.fill(0.0);
                for k in 0..p.k {
                    out[p.inv_group[k]] += alpha[k] * exo[p.exo_group[k]];
                }
            }
            Layout::Cells(c) => {
                let factors = c.exo_factors(process, x)?;
                let t = c.terms_per_cell();
                out.fill(0.0);
                for ci in 0..c.n_inv_cells {
                    let o = &mut out[ci * (1 + c.q)..(ci + 1) * (1 + c.q)];
                    for cx in 0..c.n_exo_cells {
                        let f = &factors[cx * (1 + c.p)..(cx + 1) * (1 + c.p)];
                        let a = &alpha
                            [(cx * c.n_inv_cells + ci) * t..(cx * c.n_inv_cells + ci + 1) * t];
                        o[0] += a[0] * f[0];
                        for e in 0..c.p {
                            o[0] += a[1 + e] * f[1 + e];
                        }
                        for d in 0..c.q {
                            o[1 + d] += a[1 + c.p + d] * f[0];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates a prepared continuation at the next inventory.
    #[inline]
    pub fn eval_prepared_later(&self, prepared: &[f64], i_next: &[f64]) -> f64 {
        match &self.layout {
            Layout::Poly(p) => {
                if p.inv.dim == 0 {
                    prepared[0]
                } else {
                    p.inv.eval(prepared, i_next)
                }
            }
            Layout::Cells(c) => {
                let mut ii = [0usize; 16];
                let Some(ci) = c.inv_cell(i_next, &mut ii) else {
                    return 0.0;
                };
                let o = &prepared[ci * (1 + c.q)..(ci + 1) * (1 + c.q)];
                let g = &c.grid;
                let mut v = o[0];
                for d in 0..c.q {
                    v += o[1 + d]
                        * CompiledCells::local(
                            i_next[d],
                            0.0,
                            g.inv_upper[d],
                            g.inv_cells[d],
                            ii[d],
                        );
                }
                v
            }
        }
    }

    pub fn prepared_control_len(&self) -> usize {
        match &self.layout {
            Layout::Poly(p) => p.control.len(),
            Layout::Cells(_) => 0,
        }
    }

    /// Collapses `Σ_k α_k φ_k(x, i, ·)` into a polynomial in the control.
    pub fn prepare_control_into(&self, alpha: &[f64], x: &[f64], i: &[f64], out: &mut [f64]) {
        if let Layout::Poly(p) = &self.layout {
            let mut ev = vec![0.0; p.exo.len()];
            let mut iv = vec![1.0; p.inv.len()];
            p.exo.eval_groups(x, &mut ev);
            if p.inv.dim > 0 {
                p.inv.eval_groups(i, &mut iv);
            }
            out.fill(0.0);
            for k in 0..p.k {
                out[p.control_group[k]] += alpha[k] * ev[p.exo_group[k]] * iv[p.inv_group[k]];
            }
        }
    }

    #[inline]
    pub fn eval_prepared_control(&self, prepared: &[f64], u: &[f64]) -> f64 {
        match &self.layout {
            Layout::Poly(p) => p.control.eval(prepared, u),
            Layout::Cells(_) => 0.0,
        }
    }

    /// Plain inner product `Σ α_k φ_k(x, i, u)`.
    pub fn dot(&self, alpha: &[f64], x: &[f64], i: &[f64], u: &[f64]) -> f64 {
        let mut row = vec![0.0; self.len()];
        self.eval_into(x, i, u, &mut row);
        row.iter().zip(alpha).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::ScalarProcess;

    fn arbitrage_later() -> BasisSpec {
        let t = |a: u32, b: u32| Monomial::new(vec![a], vec![b], vec![]);
        BasisSpec::PolyProduct(PolyBasis::from_terms(
            1,
            1,
            0,
            vec![
                t(0, 0),
                t(1, 0),
                t(0, 1),
                t(1, 1),
                t(2, 0),
                t(0, 2),
                t(2, 1),
                t(2, 2),
            ],
        ))
    }

    #[test]
    fn listed_polynomial_terms() {
        let b = arbitrage_later().compile().unwrap();
        let v = b.eval_basis(&[2.0], &[0.5], None).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 0.5, 1.0, 4.0, 0.25, 2.0, 1.0]);
    }

    #[test]
    fn constant_term_at_origin() {
        for spec in [
            arbitrage_later(),
            BasisSpec::PolyWithControl(PolyBasis::total_degree(1, 1, 1, 2)),
            BasisSpec::ExoOnly(PolyBasis::tensor(&[2], &[], &[])),
        ] {
            let b = spec.compile().unwrap();
            let u = if b.uses_control() {
                Some(&[0.0][..])
            } else {
                None
            };
            assert_eq!(b.eval_basis(&[0.0], &[0.0], u).unwrap()[0], 1.0);
        }
    }

    #[test]
    fn control_family_matches_listed_terms() {
        let b = BasisSpec::PolyWithControl(PolyBasis::total_degree(1, 1, 1, 2))
            .compile()
            .unwrap();
        assert_eq!(b.len(), 10);
        let v = b.eval_basis(&[2.0], &[3.0], Some(&[5.0])).unwrap();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        // {1, x, i, u, xi, x², i², u², xu, iu}
        let mut expected = vec![1.0, 2.0, 3.0, 5.0, 6.0, 4.0, 9.0, 25.0, 10.0, 15.0];
        expected.sort_by(f64::total_cmp);
        assert_eq!(sorted, expected);
    }

    #[test]
    fn outside_all_boxes_is_zero() {
        let b = BasisSpec::HypercubeAffine(HypercubeGrid {
            exo_lower: vec![0.0],
            exo_upper: vec![10.0],
            exo_cells: vec![4],
            inv_upper: vec![1.0],
            inv_cells: vec![2],
        })
        .compile()
        .unwrap();
        assert_eq!(b.len(), 4 * 2 * 3);
        assert!(b
            .eval_basis(&[11.0], &[0.5], None)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let inside = b.eval_basis(&[10.0], &[1.0], None).unwrap();
        assert_eq!(inside.iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn rejects_duplicates_and_bad_dims() {
        let dup = BasisSpec::PolyProduct(PolyBasis::from_terms(
            1,
            1,
            0,
            vec![
                Monomial::new(vec![1], vec![0], vec![]),
                Monomial::new(vec![1], vec![], vec![]),
            ],
        ));
        assert!(dup.compile().is_err());
        let b = arbitrage_later().compile().unwrap();
        assert!(matches!(
            b.eval_basis(&[1.0, 2.0], &[0.5], None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(b.eval_basis(&[1.0], &[0.5], Some(&[1.0])).is_err());
    }

    #[test]
    fn conditional_factoring() {
        let b = arbitrage_later().compile().unwrap();
        let delta = 1.0 / 200.0;
        let process = ProcessSpec::scalar(ScalarProcess::arbitrage_price(delta)).unwrap();
        let c = b.eval_conditional_basis(&process, &[0.0], &[0.7]).unwrap();
        assert_eq!(c[2], 0.7);
        assert!((c[1] - 0.05).abs() < 1e-15);
        let c3 = b.eval_conditional_basis(&process, &[3.0], &[1.0]).unwrap();
        let m = 3.0 + 2.0 * delta * 2.0;
        assert!((c3[4] - (m * m + 25.0 * delta)).abs() < 1e-12);
    }

    #[test]
    fn prepared_matches_direct() {
        let process = ProcessSpec::new(vec![
            ScalarProcess::wind(1.5),
            ScalarProcess::spot_log_price(),
        ])
        .unwrap();
        let mut spec = PolyBasis::product_total(2, 2, 1, 2);
        spec.scaling.exo = Some(AffineScaling::from_range(&[-2.0, 3.0], &[2.0, 5.0]));
        let basis = BasisSpec::PolyProduct(spec).compile().unwrap();
        let alpha: Vec<f64> = (0..basis.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let x = [0.3, 4.1];
        let mut prep = vec![0.0; basis.prepared_later_len()];
        basis
            .prepare_later_into(&process, &alpha, &x, &mut prep)
            .unwrap();
        for &i in &[0.0, 3.3, 20.0] {
            let direct: f64 = basis
                .eval_conditional_basis(&process, &x, &[i])
                .unwrap()
                .iter()
                .zip(&alpha)
                .map(|(a, b)| a * b)
                .sum();
            let fast = basis.eval_prepared_later(&prep, &[i]);
            assert!((direct - fast).abs() < 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn prepared_cells_match_direct() {
        let process = ProcessSpec::scalar(ScalarProcess::Ar1Euler {
            alpha: 0.1,
            mu: 40.0,
            sigma: 1.0,
        })
        .unwrap();
        let basis = BasisSpec::HypercubeAffine(HypercubeGrid {
            exo_lower: vec![35.0],
            exo_upper: vec![45.0],
            exo_cells: vec![5],
            inv_upper: vec![2.0],
            inv_cells: vec![4],
        })
        .compile()
        .unwrap();
        let alpha: Vec<f64> = (0..basis.len()).map(|k| (k as f64 * 0.71).cos()).collect();
        let mut prep = vec![0.0; basis.prepared_later_len()];
        basis
            .prepare_later_into(&process, &alpha, &[41.0], &mut prep)
            .unwrap();
        for &i in &[0.0, 0.3, 1.0, 1.99, 2.0] {
            let direct: f64 = basis
                .eval_conditional_basis(&process, &[41.0], &[i])
                .unwrap()
                .iter()
                .zip(&alpha)
                .map(|(a, b)| a * b)
                .sum();
            assert!((direct - basis.eval_prepared_later(&prep, &[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn prepared_control_matches_dot() {
        let basis = BasisSpec::PolyWithControl(PolyBasis::total_degree(1, 1, 1, 2))
            .compile()
            .unwrap();
        let alpha: Vec<f64> = (0..basis.len()).map(|k| k as f64 - 4.0).collect();
        let mut prep = vec![0.0; basis.prepared_control_len()];
        basis.prepare_control_into(&alpha, &[1.5], &[0.25], &mut prep);
        for &u in &[-11.5, 0.0, 11.5] {
            let direct = basis.dot(&alpha, &[1.5], &[0.25], &[u]);
            assert!((direct - basis.eval_prepared_control(&prep, &[u])).abs() < 1e-10);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inventory_free_terms_ignore_next_inventory(x in -5.0f64..5.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
                let basis = arbitrage_later().compile().unwrap();
                let process = ProcessSpec::scalar(ScalarProcess::arbitrage_price(0.005)).unwrap();
                let ca = basis.eval_conditional_basis(&process, &[x], &[a]).unwrap();
                let cb = basis.eval_conditional_basis(&process, &[x], &[b]).unwrap();
                for k in [0usize, 1, 4] {
                    prop_assert_eq!(ca[k], cb[k]);
                }
            }
        }
    }
}
