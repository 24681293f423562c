//! Dense full-tableau primal simplex.
//!
//! This solver exists for one family of problems: the max-min obfuscation
//! games, whose tableaus stay small (a few hundred rows) because the grid is
//! capped. It expects equality standard form `max c·z, A z = b, z >= 0` with
//! `b >= 0` and a caller-supplied starting basis, runs Dantzig pricing with a
//! permanent switch to Bland's rule if the objective stalls, and certifies
//! optimality against the original data with an LU-computed dual solution.

use crate::error::{Error, Result};

const RC_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const CERT_TOL: f64 = 1e-7;
/// Iterations with no objective progress before Bland's rule takes over.
const STALL_LIMIT: usize = 300;
/// Tableau rebuilds allowed when the certificate disagrees with the tableau.
const MAX_ROUNDS: usize = 3;

/// Equality-form LP with a known feasible basis.
pub struct StandardLp {
    /// Number of columns (structural plus slack).
    pub n_cols: usize,
    /// Dense constraint rows, each of length `n_cols`.
    pub rows: Vec<Vec<f64>>,
    /// Right-hand sides, all nonnegative.
    pub rhs: Vec<f64>,
    /// Objective coefficients (maximized).
    pub objective: Vec<f64>,
    /// One basic column per row; the implied basis matrix must be
    /// nonsingular and the implied solution feasible.
    pub initial_basis: Vec<usize>,
}

pub struct SimplexOutcome {
    /// Primal values for every column.
    pub values: Vec<f64>,
    /// Objective recomputed from the original data.
    pub objective: f64,
    pub iterations: usize,
    /// Relative duality gap of the certificate (includes any dual
    /// infeasibility), always `<= 1e-7` on success.
    pub dual_gap: f64,
}

struct Tableau {
    m: usize,
    n: usize,
    stride: usize,
    /// `m` constraint rows then the reduced-cost row; each row is the
    /// coefficient block followed by the rhs entry.
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &StandardLp, basis: &[usize]) -> Result<Tableau> {
        let m = lp.rows.len();
        let n = lp.n_cols;
        let stride = n + 1;
        let mut data = vec![0.0; (m + 1) * stride];
        for (r, row) in lp.rows.iter().enumerate() {
            data[r * stride..r * stride + n].copy_from_slice(row);
            data[r * stride + n] = lp.rhs[r];
        }
        data[m * stride..m * stride + n].copy_from_slice(&lp.objective);

        let mut tab = Tableau { m, n, stride, data, basis: vec![usize::MAX; m] };
        // Gauss-Jordan canonicalization onto the starting basis, choosing the
        // pivot row greedily (partial pivoting); the row-to-variable pairing
        // is free as long as each basic column pivots somewhere. The cost row
        // is swept along, which leaves it exactly in reduced-cost form (zero
        // at basic columns, c - c_B B^-1 A elsewhere, -z in the rhs slot).
        let mut used = vec![false; m];
        for &j in basis {
            let mut best = usize::MAX;
            let mut best_abs = PIVOT_TOL;
            for r in 0..m {
                if !used[r] {
                    let v = tab.data[r * stride + j].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = r;
                    }
                }
            }
            if best == usize::MAX {
                return Err(Error::LpInternal(format!(
                    "starting basis is singular at column {j}"
                )));
            }
            tab.eliminate(best, j);
            tab.basis[best] = j;
            used[best] = true;
        }
        Ok(tab)
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.stride + self.n]
    }

    #[inline]
    fn rc(&self, j: usize) -> f64 {
        self.data[self.m * self.stride + j]
    }

    /// Scale row `r` to pivot 1 at column `j` and clear the column elsewhere
    /// (including the cost row).
    fn eliminate(&mut self, r: usize, j: usize) {
        let stride = self.stride;
        let piv = self.data[r * stride + j];
        let inv = 1.0 / piv;
        for v in &mut self.data[r * stride..(r + 1) * stride] {
            *v *= inv;
        }
        self.data[r * stride + j] = 1.0;

        let (before, rest) = self.data.split_at_mut(r * stride);
        let (prow, after) = rest.split_at_mut(stride);
        let clear = |chunk: &mut [f64]| {
            let f = chunk[j];
            if f != 0.0 {
                for (v, p) in chunk.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                chunk[j] = 0.0;
            }
        };
        before.chunks_exact_mut(stride).for_each(clear);
        after.chunks_exact_mut(stride).for_each(clear);
    }

    /// One simplex pivot. Returns false when optimal under the current rule.
    fn pivot_step(&mut self, bland: bool) -> Result<bool> {
        let enter = if bland {
            (0..self.n).find(|&j| self.rc(j) > RC_TOL)
        } else {
            let mut best = None;
            let mut best_rc = RC_TOL;
            for j in 0..self.n {
                let rc = self.rc(j);
                if rc > best_rc {
                    best_rc = rc;
                    best = Some(j);
                }
            }
            best
        };
        let Some(j) = enter else { return Ok(false) };

        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..self.m {
            let a = self.data[r * self.stride + j];
            if a > PIVOT_TOL {
                let ratio = self.rhs(r) / a;
                let better = ratio < best_ratio - 1e-12
                    || ((ratio - best_ratio).abs() <= 1e-12
                        && leave.map_or(true, |lr| self.basis[r] < self.basis[lr]));
                if better {
                    best_ratio = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(r) = leave else {
            return Err(Error::LpInternal(format!("unbounded direction on column {j}")));
        };
        self.eliminate(r, j);
        self.basis[r] = j;
        Ok(true)
    }

    fn objective_value(&self) -> f64 {
        // Cost row keeps -z in its rhs slot.
        -self.rhs(self.m)
    }
}

/// Solve `B^T pi = c_B` by dense LU with partial pivoting.
fn dual_from_basis(lp: &StandardLp, basis: &[usize]) -> Result<Vec<f64>> {
    let m = lp.rows.len();
    let mut a = vec![0.0; m * m];
    for (k, &var) in basis.iter().enumerate() {
        for i in 0..m {
            // (B^T)[k][i] = A[i][var]
            a[k * m + i] = lp.rows[i][var];
        }
    }
    let mut rhs: Vec<f64> = basis.iter().map(|&v| lp.objective[v]).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    for col in 0..m {
        let mut best = col;
        let mut best_abs = a[perm[col] * m + col].abs();
        for r in col + 1..m {
            let v = a[perm[r] * m + col].abs();
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        if best_abs < 1e-13 {
            return Err(Error::LpInternal("singular basis while extracting duals".into()));
        }
        perm.swap(col, best);
        let prow = perm[col];
        let pval = a[prow * m + col];
        for r in col + 1..m {
            let row = perm[r];
            let f = a[row * m + col] / pval;
            if f != 0.0 {
                a[row * m + col] = 0.0;
                for c in col + 1..m {
                    a[row * m + c] -= f * a[prow * m + c];
                }
                rhs[row] -= f * rhs[prow];
            }
        }
    }
    let mut x = vec![0.0; m];
    for col in (0..m).rev() {
        let row = perm[col];
        let mut v = rhs[row];
        for c in col + 1..m {
            v -= a[row * m + c] * x[c];
        }
        x[col] = v / a[row * m + col];
    }
    Ok(x)
}

pub fn solve(lp: &StandardLp, max_iters: usize) -> Result<SimplexOutcome> {
    let m = lp.rows.len();
    if lp.rhs.len() != m || lp.initial_basis.len() != m || lp.objective.len() != lp.n_cols {
        return Err(Error::LpInternal("inconsistent LP dimensions".into()));
    }
    if lp.rhs.iter().any(|b| *b < 0.0) {
        return Err(Error::LpInternal("standard form requires nonnegative rhs".into()));
    }

    let mut basis = lp.initial_basis.clone();
    let mut iterations = 0usize;
    for round in 0..MAX_ROUNDS {
        let mut tab = Tableau::build(lp, &basis)?;
        let mut bland = false;
        let mut stall = 0usize;
        let mut last_obj = tab.objective_value();
        let mut pivoted_this_round = false;

        loop {
            if iterations >= max_iters {
                return Err(Error::IterationLimit(iterations));
            }
            if !tab.pivot_step(bland)? {
                break;
            }
            iterations += 1;
            pivoted_this_round = true;
            let obj = tab.objective_value();
            if obj > last_obj + 1e-12 {
                stall = 0;
                last_obj = obj;
            } else {
                stall += 1;
                if stall >= STALL_LIMIT {
                    bland = true;
                }
            }
        }
        basis = tab.basis.clone();

        // Certify against the original data.
        let mut values = vec![0.0; lp.n_cols];
        let mut primal_ok = true;
        for r in 0..m {
            let v = tab.rhs(r);
            if v < -1e-7 {
                primal_ok = false;
            }
            values[basis[r]] = v.max(0.0);
        }
        let primal: f64 = values
            .iter()
            .zip(&lp.objective)
            .map(|(v, c)| v * c)
            .sum();
        let pi = dual_from_basis(lp, &basis)?;
        let dual: f64 = pi.iter().zip(&lp.rhs).map(|(p, b)| p * b).sum();
        let mut worst_rc = 0.0f64;
        for j in 0..lp.n_cols {
            let mut rc = lp.objective[j];
            for r in 0..m {
                let a = lp.rows[r][j];
                if a != 0.0 {
                    rc -= pi[r] * a;
                }
            }
            worst_rc = worst_rc.max(rc);
        }
        let scale = 1.0 + primal.abs();
        let gap = ((primal - dual).abs() / scale).max(worst_rc / scale);
        if primal_ok && gap <= CERT_TOL {
            return Ok(SimplexOutcome { values, objective: primal, iterations, dual_gap: gap });
        }
        // Residual drift: rebuild the tableau from the original data with the
        // final basis and keep pivoting. If nothing moved and the certificate
        // still fails, give up.
        if !pivoted_this_round && round + 1 == MAX_ROUNDS {
            return Err(Error::LpInternal(format!(
                "optimality certificate failed (relative gap {gap:.3e})"
            )));
        }
    }
    Err(Error::LpInternal("certificate failed after tableau rebuilds".into()))
}
