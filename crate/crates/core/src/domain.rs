//! Location spaces, priors, caches and covered-set geometry.
//!
//! The normalized domain is the unit interval (1D) or the unit square (2D),
//! discretized into `m` cells per axis with cell centers `(k + 1/2) / m`.
//! Cell centers keep discrete sums consistent with continuum integrals to
//! `O(1/m)` and avoid double-weighting the boundary. Everything here is
//! immutable after construction and safe to share across threads.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Absolute slack used when comparing distances against a coverage or service
/// radius; absorbs float noise in otherwise exact piecewise-linear algebra.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Largest admissible service flexibility. Queries never need to move farther
/// than half the domain, and the closed-form analysis caps the obfuscation
/// radius there.
pub const Q_MAX: f64 = 0.5;

// ---------------------------------------------------------------------------
// Space, grid, locations
// ---------------------------------------------------------------------------

/// Dimensionality of the location set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Unit interval `[0, 1]`.
    Line,
    /// Unit square `[0, 1]^2`.
    Plane,
}

impl Space {
    pub fn dimension(self) -> usize {
        match self {
            Space::Line => 1,
            Space::Plane => 2,
        }
    }
}

/// A point of the normalized domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location {
    Line(f64),
    Plane(f64, f64),
}

impl Location {
    pub fn space(&self) -> Space {
        match self {
            Location::Line(_) => Space::Line,
            Location::Plane(_, _) => Space::Plane,
        }
    }

    pub fn in_domain(&self) -> bool {
        match *self {
            Location::Line(x) => (0.0..=1.0).contains(&x),
            Location::Plane(x, y) => (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y),
        }
    }

    /// The 1D coordinate; panics when called on a plane point.
    pub fn line(&self) -> f64 {
        match *self {
            Location::Line(x) => x,
            Location::Plane(_, _) => panic!("expected a 1D location"),
        }
    }

    /// The 2D coordinates; panics when called on a line point.
    pub fn plane(&self) -> (f64, f64) {
        match *self {
            Location::Plane(x, y) => (x, y),
            Location::Line(_) => panic!("expected a 2D location"),
        }
    }
}

/// Euclidean distance. 1D distance is the plain absolute difference so the
/// piecewise-linear reflection algebra stays exact.
pub fn distance(a: &Location, b: &Location) -> f64 {
    match (a, b) {
        (Location::Line(x), Location::Line(y)) => (x - y).abs(),
        (Location::Plane(ax, ay), Location::Plane(bx, by)) => {
            let dx = ax - bx;
            let dy = ay - by;
            (dx * dx + dy * dy).sqrt()
        }
        _ => panic!("distance between locations of different dimension"),
    }
}

/// Uniform discretization of the location set: `m` cells per axis, points at
/// cell centers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    space: Space,
    m: usize,
}

impl Grid {
    pub fn line(m: usize) -> Result<Grid> {
        if m < 2 {
            return Err(Error::Param(format!("grid resolution must be >= 2, got {m}")));
        }
        Ok(Grid { space: Space::Line, m })
    }

    pub fn plane(m: usize) -> Result<Grid> {
        if m < 2 {
            return Err(Error::Param(format!("grid resolution must be >= 2, got {m}")));
        }
        Ok(Grid { space: Space::Plane, m })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Cells per axis.
    pub fn resolution(&self) -> usize {
        self.m
    }

    /// Cell width per axis.
    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Total number of grid points: `m` on the line, `m^2` on the plane.
    pub fn len(&self) -> usize {
        match self.space {
            Space::Line => self.m,
            Space::Plane => self.m * self.m,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Center of axis cell `k`.
    #[inline]
    pub fn axis_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.m as f64
    }

    /// Axis cell containing coordinate `x` (clamped to the domain).
    #[inline]
    pub fn axis_cell(&self, x: f64) -> usize {
        let k = (x * self.m as f64).floor() as isize;
        k.clamp(0, self.m as isize - 1) as usize
    }

    /// Grid point for a flat index. 2D indices are row-major with the x index
    /// varying fastest: `idx = j * m + k` places the point at
    /// `(center(k), center(j))`.
    pub fn point(&self, idx: usize) -> Location {
        match self.space {
            Space::Line => Location::Line(self.axis_center(idx)),
            Space::Plane => {
                let k = idx % self.m;
                let j = idx / self.m;
                Location::Plane(self.axis_center(k), self.axis_center(j))
            }
        }
    }

    /// Flat index of the cell containing `loc`.
    pub fn cell(&self, loc: &Location) -> usize {
        match (self.space, loc) {
            (Space::Line, Location::Line(x)) => self.axis_cell(*x),
            (Space::Plane, Location::Plane(x, y)) => self.axis_cell(*y) * self.m + self.axis_cell(*x),
            _ => panic!("location dimension does not match grid"),
        }
    }

    pub fn points(&self) -> Vec<Location> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

// ---------------------------------------------------------------------------
// Priors and profiles
// ---------------------------------------------------------------------------

/// Probability mass over grid points. Construction normalizes the weights and
/// precomputes the CDF used for sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    grid: Grid,
    mass: Vec<f64>,
    cdf: Vec<f64>,
    uniform: bool,
}

impl Prior {
    pub fn new(grid: Grid, weights: Vec<f64>) -> Result<Prior> {
        if weights.len() != grid.len() {
            return Err(Error::Param(format!(
                "prior has {} weights for a grid of {} points",
                weights.len(),
                grid.len()
            )));
        }
        let mut total = 0.0;
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Param(format!(
                    "prior weight {i} is {w}; weights must be finite and nonnegative"
                )));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::Param("prior weights sum to zero".into()));
        }
        let mass: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Param(format!("normalized prior sums to {sum}, off by more than 1e-12")));
        }
        let mut cdf = Vec::with_capacity(mass.len());
        let mut acc = 0.0;
        for w in &mass {
            acc += w;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        let first = mass[0];
        let uniform = mass.iter().all(|w| *w == first);
        Ok(Prior { grid, mass, cdf, uniform })
    }

    pub fn uniform(grid: Grid) -> Prior {
        let n = grid.len();
        Prior::new(grid, vec![1.0; n]).expect("uniform prior is always valid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// True when every cell carries identical mass (bit-for-bit).
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Probability density at an arbitrary domain point, read from its cell.
    pub fn density_at(&self, loc: &Location) -> f64 {
        self.mass[self.grid.cell(loc)] * self.grid.len() as f64
    }

    /// Inverse-CDF lookup: maps `u in [0,1)` to a grid cell index.
    pub fn sample_index(&self, u: f64) -> usize {
        self.cdf.partition_point(|c| *c <= u).min(self.grid.len() - 1)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Location {
        self.grid.point(self.sample_index(rng.gen::<f64>()))
    }

    /// Marginal mass on the x axis (identity in 1D).
    pub fn marginal_x(&self) -> Vec<f64> {
        match self.grid.space {
            Space::Line => self.mass.clone(),
            Space::Plane => {
                let m = self.grid.resolution();
                let mut out = vec![0.0; m];
                for j in 0..m {
                    for k in 0..m {
                        out[k] += self.mass[j * m + k];
                    }
                }
                out
            }
        }
    }

    /// Marginal mass on the y axis (2D only).
    pub fn marginal_y(&self) -> Vec<f64> {
        match self.grid.space {
            Space::Line => self.mass.clone(),
            Space::Plane => {
                let m = self.grid.resolution();
                let mut out = vec![0.0; m];
                for j in 0..m {
                    for k in 0..m {
                        out[j] += self.mass[j * m + k];
                    }
                }
                out
            }
        }
    }
}

/// A user: service flexibility plus location prior. The prior is shared, so
/// profiles clone cheaply.
#[derive(Clone, Debug)]
pub struct UserProfile {
    q: f64,
    prior: Arc<Prior>,
}

impl UserProfile {
    pub fn new(q: f64, prior: Prior) -> Result<UserProfile> {
        UserProfile::with_shared_prior(q, Arc::new(prior))
    }

    pub fn with_shared_prior(q: f64, prior: Arc<Prior>) -> Result<UserProfile> {
        if !q.is_finite() || !(0.0..=Q_MAX).contains(&q) {
            return Err(Error::Param(format!("flexibility must lie in [0, {Q_MAX}], got {q}")));
        }
        Ok(UserProfile { q, prior })
    }

    pub fn flexibility(&self) -> f64 {
        self.q
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

/// Opaque PoI payload stored with a query location. The engine never looks
/// inside; it exists so cache entries round-trip like the real protocol's
/// `(location, payload)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PayloadToken(pub String);

/// Ordered log of prior query locations with their payload tokens.
#[derive(Clone, Debug, Default)]
pub struct CacheState {
    entries: Vec<(Location, PayloadToken)>,
}

impl CacheState {
    pub fn new() -> CacheState {
        CacheState { entries: Vec::new() }
    }

    /// Cache of bare 1D locations with synthesized payload tokens.
    pub fn from_line_points(points: &[f64]) -> Result<CacheState> {
        let mut cache = CacheState::new();
        for &p in points {
            cache.push(Location::Line(p), PayloadToken(format!("poi@{p}")))?;
        }
        Ok(cache)
    }

    pub fn push(&mut self, loc: Location, payload: PayloadToken) -> Result<()> {
        if !loc.in_domain() {
            return Err(Error::Param(format!("cache location {loc:?} outside the normalized domain")));
        }
        if let Some((first, _)) = self.entries.first() {
            if first.space() != loc.space() {
                return Err(Error::Param("cache entries must share one dimension".into()));
            }
        }
        self.entries.push((loc, payload));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn locations(&self) -> impl Iterator<Item = &Location> {
        self.entries.iter().map(|(l, _)| l)
    }

    pub fn entries(&self) -> &[(Location, PayloadToken)] {
        &self.entries
    }

    /// X coordinates of all entries (the coordinate itself in 1D).
    pub fn xs(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|(l, _)| match l {
                Location::Line(x) => *x,
                Location::Plane(x, _) => *x,
            })
            .collect()
    }

    /// Y coordinates of all entries (2D caches only).
    pub fn ys(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|(l, _)| match l {
                Location::Line(_) => panic!("1D cache has no y coordinates"),
                Location::Plane(_, y) => *y,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Covered sets
// ---------------------------------------------------------------------------

/// Grid points within distance `q` of some cache entry. The complement is the
/// uncovered set. Boundary points (distance exactly `q`) count as covered.
pub fn covered_set(cache: &CacheState, q: f64, grid: &Grid) -> Vec<bool> {
    let mut covered = vec![false; grid.len()];
    if cache.is_empty() || q < 0.0 {
        return covered;
    }
    for (i, flag) in covered.iter_mut().enumerate() {
        let p = grid.point(i);
        *flag = cache.locations().any(|c| distance(c, &p) <= q + BOUNDARY_TOL);
    }
    covered
}

/// Sorted disjoint union of closed segments inside `[0, 1]`.
///
/// This is the 1D covered set `∪ [x'_j - q, x'_j + q] ∩ [0,1]` in exact
/// interval form, used by the reflection schemes where membership of
/// continuum points matters.
#[derive(Clone, Debug, PartialEq)]
pub struct Intervals {
    segs: Vec<(f64, f64)>,
}

impl Intervals {
    pub fn empty() -> Intervals {
        Intervals { segs: Vec::new() }
    }

    /// Union of radius-`q` neighborhoods of `centers`, clipped to the domain
    /// and merged. Segments closer than the boundary tolerance fuse.
    pub fn around(centers: &[f64], q: f64) -> Intervals {
        if q < 0.0 || centers.is_empty() {
            return Intervals::empty();
        }
        let mut segs: Vec<(f64, f64)> = centers
            .iter()
            .map(|c| ((c - q).max(0.0), (c + q).min(1.0)))
            .filter(|(lo, hi)| lo <= hi)
            .collect();
        segs.sort_by(|a, b| a.partial_cmp(b).expect("finite interval bounds"));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(segs.len());
        for (lo, hi) in segs {
            match merged.last_mut() {
                Some((_, phi)) if lo <= *phi + 2.0 * BOUNDARY_TOL => *phi = phi.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Intervals { segs: merged }
    }

    pub fn is_empty(&self) -> bool {
        self.segs.is_empty()
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segs
    }

    pub fn measure(&self) -> f64 {
        self.segs.iter().map(|(lo, hi)| hi - lo).sum()
    }

    /// Membership with boundary tolerance.
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        // Fast path: caches of a few entries dominate; scan is branch-cheap.
        if self.segs.len() <= 4 {
            return self
                .segs
                .iter()
                .any(|(lo, hi)| x >= lo - BOUNDARY_TOL && x <= hi + BOUNDARY_TOL);
        }
        let i = self.segs.partition_point(|(lo, _)| *lo <= x + BOUNDARY_TOL);
        i > 0 && x <= self.segs[i - 1].1 + BOUNDARY_TOL
    }

    /// Do the segments contain every axis cell center of the grid?
    pub fn covers_all_centers(&self, m: usize) -> bool {
        (0..m).all(|k| self.contains((k as f64 + 0.5) / m as f64))
    }
}

// ---------------------------------------------------------------------------
// Reflection primitive
// ---------------------------------------------------------------------------

/// The two-sided reflected reports at obfuscation radius `r`: moving left and
/// right from `x` by `r`, folding back at the domain walls. Both outputs stay
/// within `[0, 1]` and within distance `r` of `x`.
#[inline]
pub fn reflect_query(x: f64, r: f64) -> (f64, f64) {
    debug_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&r));
    let left = (x - r).abs();
    let right = 1.0 - (x - 1.0 + r).abs();
    (left, right)
}

// ---------------------------------------------------------------------------
// Flexibility sampling
// ---------------------------------------------------------------------------

/// Draw a service flexibility from a normal distribution truncated to
/// `[0, 1/2]` by rejection. Deterministic given the RNG state.
pub fn sample_flexibility(mu: f64, sigma: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(-1.0..=1.0).contains(&mu) {
        return Err(Error::FlexSampler(format!(
            "mean {mu} outside [-1, 1]; the truncated target would be vacuous"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::FlexSampler(format!("standard deviation must be positive, got {sigma}")));
    }
    let normal = Normal::new(mu, sigma)
        .map_err(|e| Error::FlexSampler(format!("bad normal parameters: {e}")))?;
    const MAX_REJECTS: usize = 1_000_000;
    for _ in 0..MAX_REJECTS {
        let v = normal.sample(rng);
        if (0.0..=Q_MAX).contains(&v) {
            return Ok(v);
        }
    }
    Err(Error::FlexSampler(format!(
        "no draw landed in [0, {Q_MAX}] after {MAX_REJECTS} attempts (mu={mu}, sigma={sigma})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let a = Location::Line(0.2);
        assert_eq!(distance(&a, &a), 0.0);
        assert!((distance(&Location::Line(0.2), &Location::Line(0.7)) - 0.5).abs() < 1e-15);
        let p = Location::Plane(0.0, 0.0);
        let q = Location::Plane(0.3, 0.4);
        assert!((distance(&p, &q) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_points_are_sorted_cell_centers() {
        let g = Grid::line(20).unwrap();
        assert_eq!(g.len(), 20);
        let pts: Vec<f64> = (0..20).map(|k| g.axis_center(k)).collect();
        assert!((pts[0] - 0.025).abs() < 1e-15);
        assert!((pts[19] - 0.975).abs() < 1e-15);
        for w in pts.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
            assert!(w[0] > 0.0 && w[1] < 1.0);
        }
        let g2 = Grid::plane(4).unwrap();
        assert_eq!(g2.len(), 16);
        assert_eq!(g2.point(5), Location::Plane(g2.axis_center(1), g2.axis_center(1)));
    }

    #[test]
    fn covered_set_examples() {
        let g = Grid::line(20).unwrap();
        let empty = CacheState::new();
        assert!(covered_set(&empty, 0.1, &g).iter().all(|c| !c));

        let cache = CacheState::from_line_points(&[0.3]).unwrap();
        let cov = covered_set(&cache, 0.1, &g);
        for k in 0..20 {
            let x = g.axis_center(k);
            assert_eq!(cov[k], (x - 0.3).abs() <= 0.1 + BOUNDARY_TOL, "x={x}");
        }

        // Clipped at the left wall: covered stretch is [0, 0.15].
        let cache = CacheState::from_line_points(&[0.05]).unwrap();
        let cov = covered_set(&cache, 0.1, &g);
        let covered_cells: Vec<usize> = (0..20).filter(|k| cov[*k]).collect();
        assert_eq!(covered_cells, vec![0, 1, 2]);
    }

    #[test]
    fn reflect_examples() {
        let (l, r) = reflect_query(0.1, 0.3);
        assert!((l - 0.2).abs() < 1e-15 && (r - 0.4).abs() < 1e-15);
        assert_eq!(reflect_query(0.5, 0.0), (0.5, 0.5));
        // Folding at the left wall sends both sides to the same point.
        let (l, r) = reflect_query(0.0, 0.3);
        assert!((l - 0.3).abs() < 1e-15 && (r - 0.3).abs() < 1e-15);
    }

    #[test]
    fn intervals_merge_and_contain() {
        let iv = Intervals::around(&[0.3, 0.42], 0.1);
        assert_eq!(iv.segments().len(), 1);
        assert!(iv.contains(0.2) && iv.contains(0.52) && iv.contains(0.36));
        assert!(!iv.contains(0.19) && !iv.contains(0.53));
        assert!((iv.measure() - 0.32).abs() < 1e-12);

        let iv = Intervals::around(&[0.05], 0.1);
        assert_eq!(iv.segments().len(), 1);
        assert_eq!(iv.segments()[0].0, 0.0);
        assert!((iv.segments()[0].1 - 0.15).abs() < 1e-12);
    }

    #[test]
    fn flexibility_sampler_contract() {
        let mut rng = trial_rng(11, 0);
        for _ in 0..5_000 {
            let q = sample_flexibility(0.1, 0.1, &mut rng).unwrap();
            assert!((0.0..=Q_MAX).contains(&q));
        }
        // Degenerate spread collapses onto the mean.
        let q = sample_flexibility(0.1, 1e-12, &mut rng).unwrap();
        assert!((q - 0.1).abs() < 1e-9);
        assert!(sample_flexibility(1.5, 0.1, &mut rng).is_err());
    }

    #[test]
    fn prior_sampling_matches_masses() {
        let g = Grid::line(4).unwrap();
        let p = Prior::new(g, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        assert!(p.density_at(&Location::Line(0.9)) > p.density_at(&Location::Line(0.1)));
        let mut rng = trial_rng(3, 9);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[p.grid().cell(&p.sample(&mut rng))] += 1;
        }
        assert_eq!(counts[1] + counts[2], 0);
        assert!(counts[3] > 2 * counts[0]);
    }

    proptest! {
        // Mirror symmetry: reflecting the mirrored point swaps and mirrors the reports.
        #[test]
        fn reflect_mirror_symmetry(x in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let (l, rgt) = reflect_query(x, r);
            let (ml, mr) = reflect_query(1.0 - x, r);
            prop_assert!((ml - (1.0 - rgt)).abs() < 1e-12);
            prop_assert!((mr - (1.0 - l)).abs() < 1e-12);
        }

        // Away from the walls the reports are x - r and x + r (up to float
        // rounding in the fold arithmetic).
        #[test]
        fn reflect_interior_exact(x in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            prop_assume!(r <= x.min(1.0 - x));
            let (l, rgt) = reflect_query(x, r);
            prop_assert!((l - (x - r)).abs() < 1e-15);
            prop_assert!((rgt - (x + r)).abs() < 1e-15);
        }

        // Reports stay in the domain and within r of the true point.
        #[test]
        fn reflect_stays_close(x in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let (l, rgt) = reflect_query(x, r);
            for v in [l, rgt] {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                prop_assert!((v - x).abs() <= r + 1e-12);
            }
        }

        // Covered sets only grow when the cache grows or q increases.
        #[test]
        fn covered_set_monotone(
            pts in proptest::collection::vec(0.0f64..=1.0, 0..5),
            extra in 0.0f64..=1.0,
            q in 0.0f64..=0.5,
            dq in 0.0f64..=0.2,
        ) {
            let g = Grid::line(16).unwrap();
            let cache = CacheState::from_line_points(&pts).unwrap();
            let base = covered_set(&cache, q, &g);

            let mut bigger = cache.clone();
            bigger.push(Location::Line(extra), PayloadToken("t".into())).unwrap();
            let with_entry = covered_set(&bigger, q, &g);
            let with_q = covered_set(&cache, q + dq, &g);

            for i in 0..g.len() {
                prop_assert!(!base[i] || with_entry[i]);
                prop_assert!(!base[i] || with_q[i]);
            }
        }
    }
}
