//! Randomized comparisons of the solvers and the matching against the
//! brute-force references in [`crate::oracle`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::SystemParams;
use crate::noma::{solve_noma_pair, theorem2_precondition};
use crate::oma::{oma_metric, solve_oma, UserState};
use crate::oracle::{exhaustive_matching, grid_min_noma, grid_min_oma, pair_metric_ref, GridSpec, OracleError};
use crate::pairing::{build_preferences, pair_users, total_metric, Matching, PairingError};
use crate::rate::noma_rates;

/// Ranges the random states are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateRanges {
    pub log10_gamma: (f64, f64),
    pub backlog_max_bits: u64,
    pub deficit_max: f64,
}

impl Default for StateRanges {
    fn default() -> Self {
        Self {
            log10_gamma: (0.0, 6.0),
            backlog_max_bits: 100_000,
            deficit_max: 1e8,
        }
    }
}

pub fn random_state<R: Rng + ?Sized>(rng: &mut R, params: &SystemParams, ranges: &StateRanges) -> UserState {
    UserState {
        gamma: 10f64.powf(rng.random_range(ranges.log10_gamma.0..=ranges.log10_gamma.1)),
        backlog_bits: rng.random_range(0..=ranges.backlog_max_bits),
        deficit: rng.random_range(0.0..=ranges.deficit_max),
        qos: true,
        rate_threshold_bps: params.rate_threshold_bps,
    }
}

/// Allowed excess of a solver metric over the reference: `1e-6 V P0`, but
/// never below the rounding noise of metrics of size `reference`.
pub fn tolerance(params: &SystemParams, reference: f64) -> f64 {
    (1e-6 * params.v_weight * params.power_budget_w).max(1e-13 * reference.abs())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let k = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[k]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmaCheck {
    pub states: usize,
    pub failures: usize,
    /// Largest `solver - reference` seen, in metric units.
    pub worst_excess: f64,
}

pub fn check_oma(count: usize, seed: u64, params: &SystemParams, grid_points: usize) -> OmaCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = StateRanges::default();
    let grid = GridSpec::budget(grid_points, params);
    let mut out = OmaCheck {
        states: count,
        failures: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for _ in 0..count {
        let s = random_state(&mut rng, params, &ranges);
        let d = solve_oma(&s, params);
        let mine = oma_metric(d.power_w, &s, params);
        let (_, reference) = grid_min_oma(&s, params, grid);
        let excess = mine - reference;
        out.worst_excess = out.worst_excess.max(excess);
        if excess > tolerance(params, reference) {
            out.failures += 1;
        }
    }
    out
}

/// Relative-gap distribution of a pair solver against the 2-D reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NomaCheck {
    pub states: usize,
    pub within_tolerance: usize,
    pub median_gap: f64,
    pub p90_gap: f64,
    pub p99_gap: f64,
    pub max_gap: f64,
    /// States where the solver put the non-SIC user in outage while the
    /// reference served both users.
    pub weak_user_dropped: usize,
}

impl NomaCheck {
    pub fn pass_fraction(&self) -> f64 {
        self.within_tolerance as f64 / self.states.max(1) as f64
    }
}

/// `count` random pairs meeting the closed-form precondition, weak user first.
pub fn check_noma(count: usize, seed: u64, params: &SystemParams, grid_points: usize, ranges: &StateRanges) -> NomaCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::budget(grid_points, params);
    let mut gaps = Vec::with_capacity(count);
    let mut within = 0;
    let mut dropped = 0;
    while gaps.len() < count {
        let a = random_state(&mut rng, params, ranges);
        let b = random_state(&mut rng, params, ranges);
        let (si, sj) = if a.gamma <= b.gamma { (a, b) } else { (b, a) };
        if !theorem2_precondition(&si, &sj, params) {
            continue;
        }
        let d = solve_noma_pair(&si, &sj, params);
        let [(pi, _, ri), (pj, _, _)] = d.by_argument();
        let mine = pair_metric_ref(pi, pj, &si, &sj, params);
        let (gi, gj, reference) = grid_min_noma(&si, &sj, params, grid);
        if mine - reference <= tolerance(params, reference) {
            within += 1;
        }
        let reference_rates = noma_rates(gi, gj, si.gamma, sj.gamma, params);
        if ri == 0.0 && gi > 0.0 && reference_rates.rate_non_sic_bps >= si.rate_threshold_bps {
            dropped += 1;
        }
        gaps.push(if reference < 0.0 {
            ((mine - reference) / reference.abs()).max(0.0)
        } else {
            0.0
        });
    }
    gaps.sort_by(f64::total_cmp);
    NomaCheck {
        states: count,
        within_tolerance: within,
        median_gap: quantile(&gaps, 0.5),
        p90_gap: quantile(&gaps, 0.9),
        p99_gap: quantile(&gaps, 0.99),
        max_gap: gaps.last().copied().unwrap_or(0.0),
        weak_user_dropped: dropped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingCheck {
    pub trials: usize,
    pub valid: usize,
    pub no_worse_than_identity: usize,
    /// `(algorithm - exhaustive) / |exhaustive|`, zero when the optimum is 0.
    pub mean_gap: f64,
    pub max_gap: f64,
    pub optimal: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

pub fn check_matching(
    trials: usize,
    n_users: usize,
    seed: u64,
    params: &SystemParams,
    ranges: &StateRanges,
) -> Result<MatchingCheck, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MatchingCheck {
        trials,
        valid: 0,
        no_worse_than_identity: 0,
        mean_gap: 0.0,
        max_gap: 0.0,
        optimal: 0,
    };
    for _ in 0..trials {
        let states: Vec<UserState> = (0..n_users).map(|_| random_state(&mut rng, params, ranges)).collect();
        let prefs = build_preferences(&states, params);
        let m = pair_users(&prefs)?;
        if m.validate().is_ok() {
            out.valid += 1;
        }
        let mine = total_metric(&m, &prefs)?;
        let identity = total_metric(&Matching::identity(n_users), &prefs)?;
        if mine <= identity {
            out.no_worse_than_identity += 1;
        }
        let (_, best) = exhaustive_matching(&states, params)?;
        let gap = if best < 0.0 { ((mine - best) / best.abs()).max(0.0) } else { 0.0 };
        if gap == 0.0 {
            out.optimal += 1;
        }
        out.mean_gap += gap / trials as f64;
        out.max_gap = out.max_gap.max(gap);
    }
    Ok(out)
}
