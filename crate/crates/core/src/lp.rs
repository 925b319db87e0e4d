//! The column-wise linear programs behind the l1-regularised Yule-Walker
//! estimator: `min |b|_1` subject to `|A b - y|_inf <= lambda`.
//!
//! Each problem is solved through its dual
//!
//! ```text
//! max  y'z - lambda |z|_1   subject to   |A'z|_inf <= 1,
//! ```
//!
//! written with `z = z+ - z-` as a standard-form LP over `2k` rows. The
//! feasible region does not depend on `y` or `lambda`, and the slack basis
//! is feasible, so one dense tableau serves every column and every lambda
//! of a system: each solve starts from the previous optimal basis and only
//! the objective changes. The primal solution is read off the simplex
//! multipliers, recomputed from the original columns at the optimum.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

const REDUCED_COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

/// Warm-started solver for `min |b|_1` s.t. `|A b - y|_inf <= lambda` with
/// a fixed square `A`.
pub(crate) struct L1Solver {
    k: usize,
    /// `[M I]` with `M = [A', -A'; -A', A']`.
    orig: DMatrix<f64>,
    /// `B^{-1} [M I]` for the current basis.
    tab: DMatrix<f64>,
    rhs: DVector<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl L1Solver {
    pub(crate) fn new(a: &DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if a.ncols() != k {
            return Err(Error::Contract(format!("l1 system matrix must be square, got {}x{}", k, a.ncols())));
        }
        let rows = 2 * k;
        let orig = DMatrix::from_fn(rows, 2 * rows, |r, c| {
            if c >= rows {
                return if c - rows == r { 1.0 } else { 0.0 };
            }
            let (i, top) = (r % k, r < k);
            let (j, plus) = (c % k, c < k);
            let v = a[(j, i)];
            if top == plus {
                v
            } else {
                -v
            }
        });
        Ok(Self {
            k,
            tab: orig.clone(),
            orig,
            rhs: DVector::from_element(rows, 1.0),
            basis: (rows..2 * rows).collect(),
            pivots: 0,
        })
    }

    fn reset(&mut self) {
        let rows = 2 * self.k;
        self.tab = self.orig.clone();
        self.rhs = DVector::from_element(rows, 1.0);
        self.basis = (rows..2 * rows).collect();
        self.pivots = 0;
    }

    /// Rebuilds the tableau from the original columns of the basis.
    fn refactor(&mut self) {
        let rows = 2 * self.k;
        let b = DMatrix::from_fn(rows, rows, |r, c| self.orig[(r, self.basis[c])]);
        let lu = b.lu();
        match (lu.solve(&self.orig), lu.solve(&DVector::from_element(rows, 1.0))) {
            (Some(tab), Some(rhs)) if rhs.iter().all(|&v| v > -1e-9) => {
                self.tab = tab;
                self.rhs = rhs.map(|v| v.max(0.0));
                self.pivots = 0;
            }
            _ => self.reset(),
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.tab[(row, col)];
        let mut factors = self.tab.column(col).into_owned();
        factors[row] = 0.0;
        self.tab.row_mut(row).scale_mut(1.0 / p);
        self.rhs[row] /= p;
        // column-major storage: eliminate column by column
        for mut c in self.tab.column_iter_mut() {
            let head = c[row];
            if head != 0.0 {
                c.axpy(-head, &factors, 1.0);
            }
        }
        let head = self.rhs[row];
        self.rhs.axpy(-head, &factors, 1.0);
        self.rhs.apply(|v| *v = v.max(0.0));
        self.basis[row] = col;
        self.pivots += 1;
    }

    pub(crate) fn solve(&mut self, y: DVectorView<'_, f64>, lambda: f64, column: usize) -> Result<DVector<f64>> {
        let k = self.k;
        if y.len() != k {
            return Err(Error::Contract(format!("target has length {} but the system has {k} rows", y.len())));
        }
        if y.amax() <= lambda {
            return Ok(DVector::zeros(k));
        }
        if self.pivots >= REFACTOR_EVERY {
            self.refactor();
        }
        let rows = 2 * k;
        let cols = 2 * rows;
        let cost = DVector::from_fn(cols, |c, _| match c {
            c if c < k => y[c] - lambda,
            c if c < rows => -y[c - k] - lambda,
            _ => 0.0,
        });
        let tol = REDUCED_COST_TOL * cost.amax().max(1.0);
        let bland_after = 20 * rows;
        let give_up = 500 * rows;
        let mut iter = 0;
        let mut is_basic = vec![false; cols];
        for &b in &self.basis {
            is_basic[b] = true;
        }
        loop {
            let cb = DVector::from_fn(rows, |i, _| cost[self.basis[i]]);
            let reduced = &cost - self.tab.tr_mul(&cb);
            let bland = iter >= bland_after;
            let mut enter = None;
            let mut best = tol;
            for (c, &d) in reduced.iter().enumerate() {
                if d > best && !is_basic[c] {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(e) = enter else { break };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..rows {
                let t = self.tab[(r, e)];
                if t > PIVOT_TOL {
                    let ratio = self.rhs[r] / t;
                    let better = match leave {
                        None => true,
                        Some((l, best)) => ratio < best || (ratio == best && self.basis[r] < self.basis[l]),
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((l, _)) = leave else {
                self.reset();
                return Err(Error::Solver {
                    column,
                    message: format!("no b satisfies |A b - y|_inf <= {lambda}"),
                });
            };
            is_basic[self.basis[l]] = false;
            is_basic[e] = true;
            self.pivot(l, e);
            iter += 1;
            if iter > give_up {
                self.reset();
                return Err(Error::Solver { column, message: "simplex iteration limit reached".into() });
            }
        }
        // multipliers from the original basis columns: B' pi = c_B
        let b = DMatrix::from_fn(rows, rows, |r, c| self.orig[(r, self.basis[c])]);
        let cb = DVector::from_fn(rows, |i, _| cost[self.basis[i]]);
        let pi = b.transpose().lu().solve(&cb).ok_or_else(|| {
            self.reset();
            Error::Solver { column, message: "singular optimal basis".into() }
        })?;
        Ok(DVector::from_fn(k, |i, _| pi[i] - pi[k + i]))
    }
}

/// Solves one column problem from a cold start.
#[cfg(test)]
pub(crate) fn l1_min_column(a: &DMatrix<f64>, y: DVectorView<'_, f64>, lambda: f64, column: usize) -> Result<DVector<f64>> {
    L1Solver::new(a)?.solve(y, lambda, column)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_interval_picks_smallest_modulus() {
        let a = DMatrix::from_element(1, 1, 4.0 / 3.0);
        let y = DVector::from_element(1, 2.0 / 3.0);
        let b = l1_min_column(&a, y.column(0), 1.0 / 6.0, 0).unwrap();
        assert_abs_diff_eq!(b[0], 0.375, epsilon = 1e-10);
        let y = DVector::from_element(1, -2.0 / 3.0);
        let b = l1_min_column(&a, y.column(0), 1.0 / 6.0, 0).unwrap();
        assert_abs_diff_eq!(b[0], -0.375, epsilon = 1e-10);
    }

    #[test]
    fn zero_when_lambda_covers_target() {
        let a = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(l1_min_column(&a, y.column(0), 0.3, 0).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn diagonal_system_shrinks_each_coordinate() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 4.0]));
        let y = DVector::from_vec(vec![1.0, -0.5, 0.1]);
        let b = l1_min_column(&a, y.column(0), 0.2, 0).unwrap();
        assert_abs_diff_eq!(b[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(b[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_system_is_a_solver_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        assert!(matches!(l1_min_column(&a, y.column(0), 0.1, 3), Err(Error::Solver { column: 3, .. })));
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 1.0]);
        let ys = [[0.9, -0.4, 0.3], [-0.2, 0.8, 0.5], [0.1, 0.1, -0.7]];
        let mut warm = L1Solver::new(&a).unwrap();
        for lambda in [0.5, 0.2, 0.05, 0.3] {
            for y in &ys {
                let y = DVector::from_row_slice(y);
                let w = warm.solve(y.column(0), lambda, 0).unwrap();
                let c = l1_min_column(&a, y.column(0), lambda, 0).unwrap();
                assert_abs_diff_eq!(w.lp_norm(1), c.lp_norm(1), epsilon = 1e-10);
                assert!((&a * &w - &y).amax() <= lambda + 1e-10);
            }
        }
    }
}
