//! Least-squares fitting of responses against basis evaluations.
//!
//! Fits use a column-pivoted Householder QR. When the pivoted `R` has a diagonal
//! entry below `1e-10 · |R₁₁|` the design is treated as rank deficient and the fit is
//! redone as ridge regression with `λ = 1e-8 · trace(AᵀA) / K`, solved through the
//! augmented system `[A; √λ I] α ≈ [b; 0]`.

use nalgebra::{DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const PIVOT_TOLERANCE: f64 = 1e-10;
pub const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// True when the ridge fallback was used.
    pub rank_deficient: bool,
    pub ridge_lambda: f64,
    /// `|R₁₁| / |R_KK|` of the pivoted factor of the (possibly augmented) design.
    pub condition_estimate: f64,
}

/// A least-squares problem `min |A α - b|²` with a row-major `m × k` design.
#[derive(Debug, Clone, Copy)]
pub struct RegressionProblem<'a> {
    pub design: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub responses: &'a [f64],
}

pub fn fit_least_squares(problem: RegressionProblem<'_>) -> Result<(Vec<f64>, FitDiagnostics)> {
    let ls = LeastSquares::new(problem.design, problem.rows, problem.cols)?;
    let coef = ls.solve(problem.responses)?;
    Ok((coef, ls.diagnostics()))
}

/// A factored design that can be solved against many response vectors.
pub struct LeastSquares {
    qr: nalgebra::linalg::ColPivQR<f64, Dyn, Dyn>,
    r: DMatrix<f64>,
    rows: usize,
    cols: usize,
    diagnostics: FitDiagnostics,
}

impl LeastSquares {
    pub fn new(design: &[f64], rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("regression needs at least one row and one column"));
        }
        if design.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "design matrix",
                expected: rows * cols,
                found: design.len(),
            });
        }
        if let Some(pos) = design.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "design entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        let a = DMatrix::from_row_slice(rows, cols, design);
        if rows >= cols {
            let qr = a.clone().col_piv_qr();
            let r = Self::square_r(&qr, cols);
            let (full_rank, cond) = Self::inspect(&r);
            if full_rank {
                return Ok(Self {
                    qr,
                    r,
                    rows,
                    cols,
                    diagnostics: FitDiagnostics {
                        rank_deficient: false,
                        ridge_lambda: 0.0,
                        condition_estimate: cond,
                    },
                });
            }
        }
        let trace: f64 = a.iter().map(|v| v * v).sum();
        let mut lambda = RIDGE_SCALE * trace / cols as f64;
        if lambda <= 0.0 {
            lambda = RIDGE_SCALE;
        }
        let mut aug = DMatrix::zeros(rows + cols, cols);
        aug.view_mut((0, 0), (rows, cols)).copy_from(&a);
        for j in 0..cols {
            aug[(rows + j, j)] = lambda.sqrt();
        }
        let qr = aug.col_piv_qr();
        let r = Self::square_r(&qr, cols);
        let (_, cond) = Self::inspect(&r);
        Ok(Self {
            qr,
            r,
            rows,
            cols,
            diagnostics: FitDiagnostics {
                rank_deficient: true,
                ridge_lambda: lambda,
                condition_estimate: cond,
            },
        })
    }

    fn square_r(qr: &nalgebra::linalg::ColPivQR<f64, Dyn, Dyn>, cols: usize) -> DMatrix<f64> {
        let r = qr.r();
        r.view((0, 0), (cols, cols)).into_owned()
    }

    fn inspect(r: &DMatrix<f64>) -> (bool, f64) {
        let first = r[(0, 0)].abs();
        let mut smallest = first;
        for j in 0..r.ncols() {
            smallest = smallest.min(r[(j, j)].abs());
        }
        let full = first > 0.0 && smallest > PIVOT_TOLERANCE * first;
        let cond = if smallest > 0.0 {
            first / smallest
        } else {
            f64::INFINITY
        };
        (full, cond)
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.diagnostics
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn solve(&self, responses: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_many(&[responses])?.pop().unwrap_or_default())
    }

    /// Coefficients for several response vectors sharing this design.
    pub fn solve_many(&self, responses: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let total_rows = self.qr.col_piv_qr_internal().nrows();
        let mut b = DMatrix::zeros(total_rows, responses.len());
        for (c, resp) in responses.iter().enumerate() {
            if resp.len() != self.rows {
                return Err(Error::DimensionMismatch {
                    what: "responses",
                    expected: self.rows,
                    found: resp.len(),
                });
            }
            if let Some(pos) = resp.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput(format!("response {pos}")));
            }
            for (r, v) in resp.iter().enumerate() {
                b[(r, c)] = *v;
            }
        }
        self.qr.q_tr_mul(&mut b);
        let k = self.cols;
        let mut out = Vec::with_capacity(responses.len());
        for c in 0..responses.len() {
            let mut z = DVector::from_iterator(k, (0..k).map(|r| b[(r, c)]));
            for i in (0..k).rev() {
                let mut acc = z[i];
                for j in i + 1..k {
                    acc -= self.r[(i, j)] * z[j];
                }
                z[i] = acc / self.r[(i, i)];
            }
            self.qr.p().inv_permute_rows(&mut z);
            out.push(z.iter().copied().collect());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(design: &[f64], rows: usize, cols: usize, y: &[f64]) -> (Vec<f64>, FitDiagnostics) {
        fit_least_squares(RegressionProblem {
            design,
            rows,
            cols,
            responses: y,
        })
        .unwrap()
    }

    #[test]
    fn constant_column_gives_mean() {
        let (c, d) = fit(&[1.0; 4], 4, 1, &[3.0; 4]);
        assert!((c[0] - 3.0).abs() < 1e-14);
        assert!(!d.rank_deficient);
    }

    #[test]
    fn exact_line() {
        let (c, _) = fit(&[1.0, 0.0, 1.0, 1.0, 1.0, 2.0], 3, 2, &[0.0, 1.0, 2.0]);
        assert!(c[0].abs() < 1e-14 && (c[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn duplicated_column_matches_pseudo_inverse() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let design: Vec<f64> = x.iter().flat_map(|v| [1.0, *v, *v]).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let (c, d) = fit(&design, 5, 3, &y);
        assert!(d.rank_deficient);
        let a = DMatrix::from_row_slice(5, 3, &design);
        let pinv = a.pseudo_inverse(1e-12).unwrap();
        let oracle = pinv * DVector::from_column_slice(&y);
        for (a, b) in c.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6, "{c:?} vs {oracle:?}");
        }
    }

    #[test]
    fn underdetermined_falls_back() {
        let (_, d) = fit(&[1.0, 2.0, 3.0], 1, 3, &[1.0]);
        assert!(d.rank_deficient && d.ridge_lambda > 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let err = fit_least_squares(RegressionProblem {
            design: &[1.0, f64::NAN],
            rows: 2,
            cols: 1,
            responses: &[1.0, 2.0],
        });
        assert!(matches!(err, Err(Error::NonFiniteInput(_))));
        let err = fit_least_squares(RegressionProblem {
            design: &[1.0, 1.0],
            rows: 2,
            cols: 1,
            responses: &[1.0, f64::INFINITY],
        });
        assert!(matches!(err, Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn many_rhs_match_single() {
        let design: Vec<f64> = (0..30)
            .flat_map(|r| {
                let x = r as f64 / 7.0;
                [1.0, x, x * x]
            })
            .collect();
        let y1: Vec<f64> = (0..30).map(|r| (r as f64).sin()).collect();
        let y2: Vec<f64> = (0..30).map(|r| (r as f64).cos()).collect();
        let ls = LeastSquares::new(&design, 30, 3).unwrap();
        let both = ls.solve_many(&[&y1, &y2]).unwrap();
        assert_eq!(both[0], ls.solve(&y1).unwrap());
        assert_eq!(both[1], ls.solve(&y2).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn design_and_response() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
            (8usize..40).prop_flat_map(|m| {
                (
                    Just(m),
                    proptest::collection::vec(-3.0f64..3.0, m * 3),
                    proptest::collection::vec(-10.0f64..10.0, m),
                )
            })
        }

        proptest! {
            #[test]
            fn residual_is_orthogonal((m, mut design, y) in design_and_response()) {
                for r in 0..m { design[r * 3] = 1.0; }
                let (c, d) = fit(&design, m, 3, &y);
                prop_assume!(!d.rank_deficient && d.condition_estimate < 1e6);
                let scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>() * 10.0 + 1.0;
                for j in 0..3 {
                    let g: f64 = (0..m).map(|r| {
                        let fitted: f64 = (0..3).map(|k| design[r * 3 + k] * c[k]).sum();
                        design[r * 3 + j] * (y[r] - fitted)
                    }).sum();
                    prop_assert!(g.abs() <= 1e-6 * scale, "gradient {} at column {}", g, j);
                }
            }

            #[test]
            fn responses_in_span_are_reproduced((m, mut design, _y) in design_and_response(), coef in proptest::collection::vec(-5.0f64..5.0, 3)) {
                for r in 0..m { design[r * 3] = 1.0; }
                let y: Vec<f64> = (0..m).map(|r| (0..3).map(|k| design[r * 3 + k] * coef[k]).sum()).collect();
                let (c, d) = fit(&design, m, 3, &y);
                prop_assume!(!d.rank_deficient);
                let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                let res: f64 = (0..m).map(|r| {
                    let fitted: f64 = (0..3).map(|k| design[r * 3 + k] * c[k]).sum();
                    (y[r] - fitted).powi(2)
                }).sum::<f64>().sqrt();
                prop_assert!(res <= 1e-8 * norm);
            }

            #[test]
            fn row_permutation_invariance((m, mut design, y) in design_and_response(), shift in 1usize..7) {
                for r in 0..m { design[r * 3] = 1.0; }
                let (c, d) = fit(&design, m, 3, &y);
                prop_assume!(!d.rank_deficient && d.condition_estimate < 1e4);
                let perm: Vec<usize> = (0..m).map(|r| (r + shift) % m).collect();
                let pd: Vec<f64> = perm.iter().flat_map(|&r| design[r * 3..r * 3 + 3].to_vec()).collect();
                let py: Vec<f64> = perm.iter().map(|&r| y[r]).collect();
                let (pc, _) = fit(&pd, m, 3, &py);
                for (a, b) in c.iter().zip(&pc) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()) * d.condition_estimate.max(1.0));
                }
            }
        }
    }
}
