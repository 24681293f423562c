//! Query-order search over heterogeneous users.
//!
//! The total privacy of a profile set depends on who queries first: early
//! queries seed the cache the later users obfuscate behind. For small sets
//! every permutation is scored by Monte Carlo under common random numbers —
//! draws attach to the query position, not the profile, so all permutations
//! of one profile set see identical randomness and their comparison is
//! variance-reduced and deterministic per seed.

use std::sync::Arc;

use crate::adversary::InferenceMode;
use crate::domain::{CacheState, PayloadToken, Prior, UserProfile};
use crate::error::{Error, Result};
use crate::rng::user_rng;
use crate::sim::{user_step, Defense, OrderStat, StepCtx};

/// Exhaustive search refuses more than this many users (factorial growth).
pub const MAX_EXHAUSTIVE_USERS: usize = 8;

/// Monte Carlo settings for order evaluation.
#[derive(Clone, Debug)]
pub struct SequenceConfig {
    pub defense: Defense,
    pub mode: InferenceMode,
    pub trials: u64,
    pub seed: u64,
    pub epsilon: f64,
    pub lp_cap: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            defense: Defense::Approx,
            mode: InferenceMode::PaperMean,
            trials: 1000,
            seed: 0,
            epsilon: 1e-2,
            lp_cap: crate::lp::LP_POINT_CAP,
        }
    }
}

/// Winner of an order search plus the full score table.
#[derive(Clone, Debug)]
pub struct OrderingResult {
    /// Profile indices in query order (0-based).
    pub order: Vec<usize>,
    pub total: f64,
    pub ci_half: f64,
    /// Every permutation with its score, in lexicographic order.
    pub table: Vec<(Vec<usize>, OrderStat)>,
}

fn shared_priors(profiles: &[UserProfile]) -> Result<Vec<Arc<Prior>>> {
    if profiles.is_empty() {
        return Err(Error::Param("need at least one profile".into()));
    }
    let space = profiles[0].prior().grid().space();
    for p in profiles {
        if p.prior().grid().space() != space {
            return Err(Error::Param("profiles must share one dimension".into()));
        }
    }
    Ok(profiles.iter().map(|p| Arc::new(p.prior().clone())).collect())
}

/// Total expected privacy (sum over users) of querying in the given order,
/// with a 95% half-width.
pub fn total_privacy(
    order: &[usize],
    profiles: &[UserProfile],
    cfg: &SequenceConfig,
) -> Result<OrderStat> {
    if order.len() != profiles.len() {
        return Err(Error::Param(format!(
            "order has {} entries for {} profiles",
            order.len(),
            profiles.len()
        )));
    }
    let mut seen = vec![false; profiles.len()];
    for &i in order {
        if i >= profiles.len() || seen[i] {
            return Err(Error::Param("order must be a permutation of profile indices".into()));
        }
        seen[i] = true;
    }
    let priors = shared_priors(profiles)?;
    let ctx = StepCtx {
        defense: cfg.defense,
        mode: cfg.mode,
        epsilon: cfg.epsilon,
        lp_cap: cfg.lp_cap,
    };

    let mut totals = Vec::with_capacity(cfg.trials as usize);
    for trial in 0..cfg.trials {
        let mut cache = CacheState::new();
        let mut total = 0.0;
        for (pos, &who) in order.iter().enumerate() {
            let mut rng = user_rng(cfg.seed, trial, pos as u64);
            let prior = &priors[who];
            let x = prior.sample(&mut rng);
            let q = profiles[who].flexibility();
            let step = user_step(&ctx, prior, q, x, &cache, &mut rng)?;
            total += step.privacy;
            if let Some(loc) = step.query {
                cache.push(loc, PayloadToken(format!("poi:{trial}:{pos}")))?;
            }
        }
        totals.push(total);
    }
    let n = totals.len() as u64;
    let mean = totals.iter().sum::<f64>() / n as f64;
    let ci_half = if n < 2 {
        0.0
    } else {
        let var = totals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        1.96 * (var / n as f64).sqrt()
    };
    Ok(OrderStat { mean, ci_half })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    rec(n, &mut cur, &mut used, &mut out);
    out
}

/// Score every permutation under common random numbers and return the
/// argmax; ties break lexicographically.
pub fn best_order(profiles: &[UserProfile], cfg: &SequenceConfig) -> Result<OrderingResult> {
    let n = profiles.len();
    if n > MAX_EXHAUSTIVE_USERS {
        return Err(Error::TooManyUsers { n, max: MAX_EXHAUSTIVE_USERS });
    }
    if n == 0 {
        return Err(Error::Param("need at least one profile".into()));
    }
    let mut table = Vec::new();
    let mut best: Option<(Vec<usize>, OrderStat)> = None;
    for perm in permutations(n) {
        let stat = total_privacy(&perm, profiles, cfg)?;
        if best.as_ref().map_or(true, |(_, b)| stat.mean > b.mean) {
            best = Some((perm.clone(), stat));
        }
        table.push((perm, stat));
    }
    let (order, stat) = best.expect("at least one permutation");
    Ok(OrderingResult { order, total: stat.mean, ci_half: stat.ci_half, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Grid, Prior};

    fn profile(q: f64) -> UserProfile {
        let grid = Grid::line(20).unwrap();
        UserProfile::new(q, Prior::uniform(grid)).unwrap()
    }

    fn cfg(trials: u64, seed: u64) -> SequenceConfig {
        SequenceConfig { trials, seed, ..SequenceConfig::default() }
    }

    #[test]
    fn single_user_total_matches_closed_form() {
        let st = total_privacy(&[0], &[profile(0.2)], &cfg(4000, 9)).unwrap();
        assert!((st.mean - (0.2 - 0.04)).abs() < 0.01, "mean={}", st.mean);
    }

    #[test]
    fn relabeling_profiles_relabels_the_order() {
        let a = profile(0.05);
        let b = profile(0.3);
        let c = cfg(200, 4);
        let fwd = total_privacy(&[0, 1], &[a.clone(), b.clone()], &c).unwrap();
        let rev = total_privacy(&[1, 0], &[b, a], &c).unwrap();
        assert_eq!(fwd.mean.to_bits(), rev.mean.to_bits());
    }

    #[test]
    fn symmetric_profiles_tie_exactly() {
        let p = profile(0.15);
        let c = cfg(150, 8);
        let ab = total_privacy(&[0, 1], &[p.clone(), p.clone()], &c).unwrap();
        let ba = total_privacy(&[1, 0], &[p.clone(), p], &c).unwrap();
        assert_eq!(ab.mean.to_bits(), ba.mean.to_bits());
    }

    #[test]
    fn best_order_invariant_to_listing() {
        let a = profile(0.05);
        let b = profile(0.49);
        let c = cfg(400, 12);
        let r1 = best_order(&[a.clone(), b.clone()], &c).unwrap();
        let r2 = best_order(&[b, a], &c).unwrap();
        // Same winning profile sequence, expressed against each listing.
        let q1: Vec<f64> = r1.order.iter().map(|&i| [0.05, 0.49][i]).collect();
        let q2: Vec<f64> = r2.order.iter().map(|&i| [0.49, 0.05][i]).collect();
        assert_eq!(q1, q2);
        assert_eq!(r1.table.len(), 2);
    }

    #[test]
    fn refuses_factorial_blowup() {
        let ps: Vec<UserProfile> = (0..9).map(|_| profile(0.1)).collect();
        assert!(matches!(
            best_order(&ps, &cfg(10, 0)),
            Err(Error::TooManyUsers { n: 9, max: MAX_EXHAUSTIVE_USERS })
        ));
    }
}
