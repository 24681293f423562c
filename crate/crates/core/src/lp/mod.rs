//! The exact defense: the discretized max-min obfuscation game as a linear
//! program, plus the hiding-baseline variant.
//!
//! For a grid of `n` points the program has the reporting probabilities
//! `f(x'|x)` (n^2 of them) and one auxiliary `y_{x'}` per observation as
//! variables, maximizing `Σ y_{x'}` subject to
//!
//! - `y_{x'} <= Σ_x ψ(x) f(x'|x) D(x̂, x)` for every pair `(x', x̂)` — the
//!   adversary's best response bounds each observation's contribution;
//! - row-stochastic equalities `Σ_{x'} f(x'|x) = 1`;
//! - service zeroing `f(x'|x) = 0` on uncovered rows with `D(x', x) > q`;
//! - nonnegativity.
//!
//! Covered rows are unconstrained in `x'` (the cache already serves them).
//! The candidate inferences `x̂` range over grid points, consistent with
//! discretizing both sides; the continuum optimum differs by `O(1/m)`.
//!
//! Solving is self-contained: a truthful-reporting basis is always feasible,
//! so the dense simplex in [`simplex`] starts without a phase one. The grid
//! is capped (default [`LP_POINT_CAP`]) because the tableau is dense and the
//! constraint count grows with the square of the point count.

pub mod simplex;

use std::fmt::Write as _;

use crate::domain::{covered_set, distance, CacheState, Grid, Prior, UserProfile, BOUNDARY_TOL};
use crate::error::{Error, Result};

/// Default cap on total grid points accepted by the LP builders.
pub const LP_POINT_CAP: usize = 64;

const MAX_ITERS: usize = 60_000;

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

/// How a strategy row was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    /// Real location served by the cache; decoy query, unconstrained support.
    Covered,
    /// Real location not served; support limited to the service radius.
    Uncovered,
    /// Hiding baseline: no query issued from this row (all-zero row).
    Hidden,
}

/// Row-stochastic conditional reporting distribution `f(x'|x)` over grid
/// points, with a partition tag per row.
#[derive(Clone, Debug)]
pub struct QueryStrategy {
    grid: Grid,
    probs: Vec<f64>,
    kinds: Vec<RowKind>,
}

impl QueryStrategy {
    pub fn new(grid: Grid, probs: Vec<f64>, kinds: Vec<RowKind>) -> Result<QueryStrategy> {
        let n = grid.len();
        if probs.len() != n * n || kinds.len() != n {
            return Err(Error::Param("strategy matrix shape does not match grid".into()));
        }
        for (i, p) in probs.iter().enumerate() {
            if !p.is_finite() || *p < -1e-9 || *p > 1.0 + 1e-9 {
                return Err(Error::Param(format!("strategy entry {i} out of [0,1]: {p}")));
            }
        }
        for x in 0..n {
            let sum: f64 = probs[x * n..(x + 1) * n].iter().sum();
            let want = if kinds[x] == RowKind::Hidden { 0.0 } else { 1.0 };
            if (sum - want).abs() > 1e-9 {
                return Err(Error::Param(format!(
                    "strategy row {x} sums to {sum}, expected {want}"
                )));
            }
        }
        Ok(QueryStrategy { grid, probs, kinds })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn prob(&self, x: usize, x_prime: usize) -> f64 {
        self.probs[x * self.grid.len() + x_prime]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let n = self.grid.len();
        &self.probs[x * n..(x + 1) * n]
    }

    pub fn kind(&self, x: usize) -> RowKind {
        self.kinds[x]
    }

    /// Service feasibility: uncovered rows put no mass beyond the radius.
    pub fn validate_service(&self, q: f64) -> Result<()> {
        let n = self.grid.len();
        for x in 0..n {
            if self.kinds[x] != RowKind::Uncovered {
                continue;
            }
            for xp in 0..n {
                let d = distance(&self.grid.point(xp), &self.grid.point(x));
                if d > q + BOUNDARY_TOL && self.prob(x, xp) > 1e-9 {
                    return Err(Error::Param(format!(
                        "uncovered row {x} reports {xp} at distance {d} > q = {q}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Inverse-CDF sample of the report for true cell `x`.
    pub fn sample_report(&self, x: usize, u: f64) -> usize {
        let row = self.row(x);
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

/// Assembled max-min game in LP form, before standard-form conversion.
#[derive(Clone, Debug)]
pub struct LpProblem {
    grid: Grid,
    prior: Prior,
    q: f64,
    covered: Vec<bool>,
    /// Whether row `x` participates as a decision row (hiding variant drops
    /// covered rows).
    row_active: Vec<bool>,
    /// Allowed report columns per active row.
    allowed: Vec<Vec<usize>>,
    /// Service-zeroed pairs `(x, x')`, listed for the nominal description.
    zeroed: Vec<(usize, usize)>,
    /// Constant privacy contribution outside the LP (hiding variant).
    fixed_term: f64,
    hiding: bool,
}

impl LpProblem {
    /// Nominal variable count of the description: all `f(x'|x)` plus the
    /// per-observation `y` variables. Zeroed entries are kept as pinned
    /// variables here; the solver eliminates them.
    pub fn var_count(&self) -> usize {
        let n = self.grid.len();
        let active = self.row_active.iter().filter(|a| **a).count();
        active * n + n
    }

    pub fn inequality_count(&self) -> usize {
        self.grid.len() * self.grid.len()
    }

    pub fn equality_count(&self) -> usize {
        self.row_active.iter().filter(|a| **a).count()
    }

    pub fn zeroed_count(&self) -> usize {
        self.zeroed.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn covered(&self) -> &[bool] {
        &self.covered
    }

    pub fn fixed_term(&self) -> f64 {
        self.fixed_term
    }

    /// Plain-text dump for cross-checking with external solvers. Column order
    /// is documented and fixed: `f_<x>_<xp>` by row-major `(x, x')` over
    /// active rows and allowed columns, then `y_<xp>` ascending. Coefficients
    /// are printed as 9-digit fixed-precision decimals.
    pub fn write_lp_text(&self, out: &mut String) {
        let n = self.grid.len();
        let pts = self.grid.points();
        out.push_str("\\ max-min obfuscation game");
        let _ = writeln!(
            out,
            " (points={n}, q={:.9}, hiding={}, fixed_term={:.9})",
            self.q, self.hiding, self.fixed_term
        );
        out.push_str("Maximize\n obj:");
        for xp in 0..n {
            let _ = write!(out, " +1 y_{xp}");
        }
        out.push('\n');
        out.push_str("Subject To\n");
        for xp in 0..n {
            for xh in 0..n {
                let _ = write!(out, " c_{xp}_{xh}: y_{xp}");
                for x in 0..n {
                    if !self.row_active[x] || !self.allowed[x].contains(&xp) {
                        continue;
                    }
                    let coeff = self.prior.mass()[x] * distance(&pts[xh], &pts[x]);
                    let _ = write!(out, " -{coeff:.9} f_{x}_{xp}");
                }
                out.push_str(" <= 0\n");
            }
        }
        for x in 0..n {
            if !self.row_active[x] {
                continue;
            }
            let _ = write!(out, " r_{x}:");
            for xp in &self.allowed[x] {
                let _ = write!(out, " +1 f_{x}_{xp}");
            }
            out.push_str(" = 1\n");
        }
        for (x, xp) in &self.zeroed {
            let _ = writeln!(out, " z_{x}_{xp}: f_{x}_{xp} = 0");
        }
        out.push_str("Bounds\n");
        for x in 0..n {
            if !self.row_active[x] {
                continue;
            }
            for xp in &self.allowed[x] {
                let _ = writeln!(out, " 0 <= f_{x}_{xp} <= 1");
            }
        }
        for xp in 0..n {
            let _ = writeln!(out, " 0 <= y_{xp}");
        }
        out.push_str("End\n");
    }
}

/// Exact solution of an assembled game.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub strategy: QueryStrategy,
    /// Expected privacy gain at the optimum (includes the hiding variant's
    /// fixed covered term).
    pub value: f64,
    pub iterations: usize,
    pub dual_gap: f64,
}

fn check_cap(grid: &Grid, cap: usize) -> Result<()> {
    if grid.len() > cap {
        return Err(Error::LpTooLarge { points: grid.len(), cap });
    }
    Ok(())
}

/// Assemble the always-query game for one user against the current cache.
pub fn build_maxmin_lp(profile: &UserProfile, cache: &CacheState, grid: &Grid) -> Result<LpProblem> {
    build_maxmin_lp_with_cap(profile, cache, grid, LP_POINT_CAP)
}

pub fn build_maxmin_lp_with_cap(
    profile: &UserProfile,
    cache: &CacheState,
    grid: &Grid,
    cap: usize,
) -> Result<LpProblem> {
    check_cap(grid, cap)?;
    if profile.prior().grid() != grid {
        return Err(Error::Param("profile prior does not live on the given grid".into()));
    }
    let n = grid.len();
    let q = profile.flexibility();
    let covered = covered_set(cache, q, grid);
    let pts = grid.points();
    let mut allowed = Vec::with_capacity(n);
    let mut zeroed = Vec::new();
    for x in 0..n {
        if covered[x] {
            allowed.push((0..n).collect());
        } else {
            let mut cols = Vec::new();
            for xp in 0..n {
                if distance(&pts[xp], &pts[x]) <= q + BOUNDARY_TOL {
                    cols.push(xp);
                } else {
                    zeroed.push((x, xp));
                }
            }
            allowed.push(cols);
        }
    }
    Ok(LpProblem {
        grid: grid.clone(),
        prior: profile.prior().clone(),
        q,
        covered,
        row_active: vec![true; n],
        allowed,
        zeroed,
        fixed_term: 0.0,
        hiding: false,
    })
}

/// Assemble the hiding-baseline game: only uncovered rows query (restricted
/// to the service radius); covered rows issue nothing and the adversary
/// narrows its inference to the covered set, contributing the fixed term
/// `min_x̂ Σ_{x covered} ψ(x) D(x̂, x)`.
pub fn build_hiding_lp(profile: &UserProfile, cache: &CacheState, grid: &Grid) -> Result<LpProblem> {
    build_hiding_lp_with_cap(profile, cache, grid, LP_POINT_CAP)
}

pub fn build_hiding_lp_with_cap(
    profile: &UserProfile,
    cache: &CacheState,
    grid: &Grid,
    cap: usize,
) -> Result<LpProblem> {
    let mut problem = build_maxmin_lp_with_cap(profile, cache, grid, cap)?;
    let n = grid.len();
    let pts = grid.points();
    let mass = profile.prior().mass();

    let mut fixed = 0.0;
    if problem.covered.iter().any(|c| *c) {
        let mut best = f64::INFINITY;
        for xh in 0..n {
            let e: f64 = (0..n)
                .filter(|x| problem.covered[*x])
                .map(|x| mass[x] * distance(&pts[xh], &pts[x]))
                .sum();
            best = best.min(e);
        }
        fixed = best;
    }

    for x in 0..n {
        if problem.covered[x] {
            problem.row_active[x] = false;
            problem.allowed[x].clear();
        } else {
            // Hiding keeps the service restriction on uncovered rows; the
            // covered rows' columns disappear entirely.
            let pt = pts[x];
            problem.allowed[x] = (0..n)
                .filter(|xp| distance(&pts[*xp], &pt) <= problem.q + BOUNDARY_TOL)
                .collect();
        }
    }
    problem.zeroed = problem
        .zeroed
        .into_iter()
        .filter(|(x, _)| problem.row_active[*x])
        .collect();
    problem.fixed_term = fixed;
    problem.hiding = true;
    Ok(problem)
}

/// Solve an assembled game to optimality.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    let n = problem.grid.len();
    let pts = problem.grid.points();
    let mass = problem.prior.mass();

    // Column layout: f variables for (active row, allowed column) pairs in
    // row-major order, then y variables, then one slack per inequality.
    let mut f_index = vec![vec![usize::MAX; n]; n];
    let mut f_vars: Vec<(usize, usize)> = Vec::new();
    for x in 0..n {
        if !problem.row_active[x] {
            continue;
        }
        for &xp in &problem.allowed[x] {
            f_index[x][xp] = f_vars.len();
            f_vars.push((x, xp));
        }
    }
    let nf = f_vars.len();
    let y_base = nf;
    let slack_base = nf + n;
    let n_rows = n * n + problem.equality_count();
    let n_cols = slack_base + n * n;

    if nf == 0 {
        // Fully covered hiding variant: nothing to optimize.
        let probs = vec![0.0; n * n];
        let kinds = vec![RowKind::Hidden; n];
        let strategy = QueryStrategy::new(problem.grid.clone(), probs, kinds)?;
        return Ok(LpSolution {
            strategy,
            value: problem.fixed_term,
            iterations: 0,
            dual_gap: 0.0,
        });
    }

    let mut rows = vec![vec![0.0; n_cols]; n_rows];
    let mut rhs = vec![0.0; n_rows];
    let mut objective = vec![0.0; n_cols];
    for xp in 0..n {
        objective[y_base + xp] = 1.0;
    }

    // Inequalities: y_{x'} - Σ_x ψ D f(x'|x) + slack = 0, ordered (x', x̂).
    for xp in 0..n {
        for xh in 0..n {
            let r = xp * n + xh;
            rows[r][y_base + xp] = 1.0;
            rows[r][slack_base + r] = 1.0;
            for x in 0..n {
                let j = f_index[x][xp];
                if j != usize::MAX {
                    rows[r][j] = -mass[x] * distance(&pts[xh], &pts[x]);
                }
            }
        }
    }
    // Row-stochastic equalities for active rows.
    let mut basis: Vec<usize> = (0..n * n).map(|r| slack_base + r).collect();
    let mut r = n * n;
    for x in 0..n {
        if !problem.row_active[x] {
            continue;
        }
        for &xp in &problem.allowed[x] {
            rows[r][f_index[x][xp]] = 1.0;
        }
        rhs[r] = 1.0;
        // Truthful reporting is always allowed (distance zero), giving a
        // feasible starting basis with no phase-one.
        debug_assert!(f_index[x][x] != usize::MAX);
        basis.push(f_index[x][x]);
        r += 1;
    }

    let lp = simplex::StandardLp { n_cols, rows, rhs, objective, initial_basis: basis };
    let out = simplex::solve(&lp, MAX_ITERS)?;

    let mut probs = vec![0.0; n * n];
    let mut kinds = Vec::with_capacity(n);
    for x in 0..n {
        kinds.push(if !problem.row_active[x] {
            RowKind::Hidden
        } else if problem.covered[x] {
            RowKind::Covered
        } else {
            RowKind::Uncovered
        });
        for xp in 0..n {
            let j = f_index[x][xp];
            if j != usize::MAX {
                probs[x * n + xp] = out.values[j].clamp(0.0, 1.0);
            }
        }
    }
    let strategy = QueryStrategy::new(problem.grid.clone(), probs, kinds)?;
    strategy.validate_service(problem.q)?;
    Ok(LpSolution {
        strategy,
        value: problem.fixed_term + out.objective,
        iterations: out.iterations,
        dual_gap: out.dual_gap,
    })
}

/// Build and solve the hiding-baseline game in one step.
pub fn solve_hiding_lp(profile: &UserProfile, cache: &CacheState, grid: &Grid) -> Result<LpSolution> {
    let problem = build_hiding_lp(profile, cache, grid)?;
    solve_lp(&problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::strategy_privacy;
    use crate::domain::{CacheState, Grid, Location, Prior, UserProfile};

    fn uniform_profile(grid: &Grid, q: f64) -> UserProfile {
        UserProfile::new(q, Prior::uniform(grid.clone())).unwrap()
    }

    fn prior_bound(prior: &Prior) -> f64 {
        use crate::adversary::{optimal_inference, Posterior};
        let post = Posterior::from_weights(prior.grid().clone(), prior.mass().to_vec()).unwrap();
        optimal_inference(&post).1
    }

    #[test]
    fn description_counts() {
        let grid = Grid::line(2).unwrap();
        let profile = uniform_profile(&grid, 0.5);
        let p = build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap();
        assert_eq!(p.var_count(), 6);
        assert_eq!(p.inequality_count(), 4);
        assert_eq!(p.equality_count(), 2);

        let grid = Grid::line(20).unwrap();
        let profile = uniform_profile(&grid, 0.1);
        let p = build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap();
        assert_eq!(p.var_count(), 420);
        assert_eq!(p.inequality_count(), 400);
        assert_eq!(p.equality_count(), 20);
        assert!(p.zeroed_count() > 0);

        let grid = Grid::line(128).unwrap();
        let profile = uniform_profile(&grid, 0.1);
        assert!(matches!(
            build_maxmin_lp(&profile, &CacheState::new(), &grid),
            Err(Error::LpTooLarge { points: 128, cap: LP_POINT_CAP })
        ));
    }

    #[test]
    fn two_cell_game_hits_quarter() {
        let grid = Grid::line(2).unwrap();
        let profile = uniform_profile(&grid, 0.5);
        let p = build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap();
        let sol = solve_lp(&p).unwrap();
        assert!((sol.value - 0.25).abs() < 1e-9, "value={}", sol.value);
        assert!(sol.dual_gap <= 1e-7);

        // Independent oracle: scan the 2x2 strategy simplex on a lattice that
        // includes all vertices. p = f(report cell0 | cell0), r = f(cell0 | cell1).
        let mut best: f64 = 0.0;
        let lattice = [0.0f64, 0.25, 0.5, 0.75, 1.0];
        for p0 in lattice {
            for r0 in lattice {
                let y0 = 0.25 * p0.min(r0);
                let y1 = 0.25 * (1.0 - p0).min(1.0 - r0);
                best = best.max(y0 + y1);
            }
        }
        assert!((best - 0.25).abs() < 1e-12);
        assert!(sol.value >= best - 1e-9);
    }

    #[test]
    fn zero_flexibility_forces_truthful() {
        let grid = Grid::line(20).unwrap();
        let profile = uniform_profile(&grid, 0.0);
        let sol = solve_lp(&build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap()).unwrap();
        assert!(sol.value.abs() < 1e-9);
    }

    #[test]
    fn full_flexibility_reaches_prior_bound() {
        let grid = Grid::line(20).unwrap();
        let profile = uniform_profile(&grid, 0.5);
        let sol = solve_lp(&build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap()).unwrap();
        let bound = prior_bound(profile.prior());
        assert!((bound - 0.25).abs() < 1e-12);
        assert!(sol.value <= bound + 1e-9);
        assert!((sol.value - bound).abs() <= 0.05, "value={}", sol.value);
    }

    #[test]
    fn lp_objective_matches_strategy_reevaluation() {
        let grid = Grid::line(12).unwrap();
        let profile = uniform_profile(&grid, 0.15);
        let cache = CacheState::from_line_points(&[0.4]).unwrap();
        let sol = solve_lp(&build_maxmin_lp(&profile, &cache, &grid).unwrap()).unwrap();
        let replay = strategy_privacy(profile.prior(), &sol.strategy);
        assert!((replay - sol.value).abs() < 1e-7, "{replay} vs {}", sol.value);
    }

    #[test]
    fn hiding_matches_always_query_on_empty_cache() {
        let grid = Grid::line(10).unwrap();
        let profile = uniform_profile(&grid, 0.2);
        let a = solve_lp(&build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap()).unwrap();
        let h = solve_hiding_lp(&profile, &CacheState::new(), &grid).unwrap();
        assert!((a.value - h.value).abs() < 1e-9);
    }

    #[test]
    fn hiding_on_full_coverage_is_prior_bound_over_covered() {
        let grid = Grid::line(10).unwrap();
        let profile = uniform_profile(&grid, 0.3);
        let cache = CacheState::from_line_points(&[0.25, 0.75]).unwrap();
        // Every cell center is within 0.3 of one of the two entries.
        let h = solve_hiding_lp(&profile, &cache, &grid).unwrap();
        assert_eq!(h.iterations, 0);
        let bound = prior_bound(profile.prior());
        assert!((h.value - bound).abs() < 1e-12);
        assert!(matches!(h.strategy.kind(0), RowKind::Hidden));
    }

    #[test]
    fn always_query_strictly_beats_hiding_mid_coverage() {
        let grid = Grid::line(20).unwrap();
        let profile = uniform_profile(&grid, 0.1);
        let cache = CacheState::from_line_points(&[0.5]).unwrap();
        let a = solve_lp(&build_maxmin_lp(&profile, &cache, &grid).unwrap()).unwrap();
        let h = solve_hiding_lp(&profile, &cache, &grid).unwrap();
        assert!(a.value > h.value + 1e-4, "lp={} hide={}", a.value, h.value);
    }

    #[test]
    fn value_monotone_in_flexibility_and_bounded() {
        let grid = Grid::line(10).unwrap();
        let cache = CacheState::from_line_points(&[0.3]).unwrap();
        let bound = prior_bound(&Prior::uniform(grid.clone()));
        let mut last = -1.0;
        for k in 0..=10 {
            let q = k as f64 * 0.05;
            let profile = uniform_profile(&grid, q);
            let sol = solve_lp(&build_maxmin_lp(&profile, &cache, &grid).unwrap()).unwrap();
            assert!(sol.value >= last - 1e-7, "q={q}: {} < {last}", sol.value);
            assert!(sol.value <= bound + 1e-9);
            last = sol.value;
        }
    }

    #[test]
    fn lp_text_dump_is_stable() {
        let grid = Grid::line(3).unwrap();
        let profile = uniform_profile(&grid, 0.2);
        let p = build_maxmin_lp(&profile, &CacheState::new(), &grid).unwrap();
        let mut a = String::new();
        p.write_lp_text(&mut a);
        let mut b = String::new();
        p.write_lp_text(&mut b);
        assert_eq!(a, b);
        assert!(a.contains("Maximize") && a.contains("Subject To") && a.contains("End"));
        assert!(a.contains("r_0:") && a.contains("c_0_0:"));
    }

    #[test]
    fn strategy_sampling_is_inverse_cdf() {
        let grid = Grid::line(4).unwrap();
        let mut probs = vec![0.0; 16];
        probs[0] = 0.25;
        probs[2] = 0.75;
        probs[4 + 1] = 1.0;
        probs[8 + 2] = 1.0;
        probs[12 + 3] = 1.0;
        let s = QueryStrategy::new(grid, probs, vec![RowKind::Covered; 4]).unwrap();
        assert_eq!(s.sample_report(0, 0.1), 0);
        assert_eq!(s.sample_report(0, 0.3), 2);
        assert_eq!(s.sample_report(0, 0.999), 2);
        let loc = Location::Line(0.3);
        assert!(loc.in_domain());
    }
}
