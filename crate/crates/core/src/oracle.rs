//! Brute-force references for the power solvers and the matching.
//!
//! The metric here is re-derived from the rate definitions with its own
//! arithmetic (`powf`/`log2` instead of `exp_m1`/`ln_1p`) so that a shared
//! mistake in the solvers cannot hide. Slow by design.

use thiserror::Error;

use crate::config::SystemParams;
use crate::noma::solve_noma_pair;
use crate::oma::{solve_oma, UserState};
use crate::pairing::Matching;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("exhaustive matching supports at most {max} users, got {got}")]
    TooManyUsers { max: usize, got: usize },
}

pub const MAX_EXHAUSTIVE_USERS: usize = 8;

/// Uniform grid of `points` powers on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridSpec {
    pub fn budget(points: usize, params: &SystemParams) -> Self {
        Self {
            points,
            lo: 0.0,
            hi: params.power_budget_w,
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let steps = self.points.max(2) - 1;
        (0..=steps).map(move |k| self.lo + (self.hi - self.lo) * k as f64 / steps as f64)
    }
}

/// Relative nudge applied to analytic threshold candidates, so the oracle's own
/// rounding cannot gate them into outage.
const NUDGE: f64 = 1e-12;

fn weight(s: &UserState, params: &SystemParams) -> f64 {
    let z = if s.qos { s.deficit } else { 0.0 };
    params.slot_duration_s * s.backlog_bits as f64 + z
}

fn gate(r: f64, rho: f64) -> f64 {
    if r >= rho {
        r
    } else {
        0.0
    }
}

fn oma_metric_ref(p: f64, s: &UserState, params: &SystemParams) -> f64 {
    let n = params.n_users as f64;
    let r = params.blocklength_factor * params.bandwidth_hz / n * (1.0 + n * s.gamma * p).log2();
    params.v_weight * p - weight(s, params) * gate(r, s.rate_threshold_bps)
}

/// Pair metric with `si` as the non-SIC user.
pub fn pair_metric_ref(p_i: f64, p_j: f64, si: &UserState, sj: &UserState, params: &SystemParams) -> f64 {
    let n = params.n_users as f64;
    let c = 2.0 * params.blocklength_factor * params.bandwidth_hz / n;
    let r_i = c * (1.0 + (n * si.gamma * p_i / 2.0) / (n * si.gamma * p_j / 2.0 + 1.0)).log2();
    let r_j = c * (1.0 + n * sj.gamma * p_j / 2.0).log2();
    params.v_weight * (p_i + p_j)
        - weight(si, params) * gate(r_i, si.rate_threshold_bps)
        - weight(sj, params) * gate(r_j, sj.rate_threshold_bps)
}

/// Minimum of the OMA metric over the grid plus the analytic candidates
/// `{0, P_th, P0, clamped P*}`.
pub fn grid_min_oma(s: &UserState, params: &SystemParams, grid: GridSpec) -> (f64, f64) {
    let n = params.n_users as f64;
    let p0 = params.power_budget_w;
    let mut best = (0.0, oma_metric_ref(0.0, s, params));
    let mut try_p = |p: f64| {
        if p.is_finite() && (0.0..=p0).contains(&p) {
            let m = oma_metric_ref(p, s, params);
            if m < best.1 {
                best = (p, m);
            }
        }
    };
    for p in grid.values() {
        try_p(p);
    }
    if s.gamma > 0.0 {
        let share = params.blocklength_factor * params.bandwidth_hz / n;
        let th = (2f64.powf(s.rate_threshold_bps / share) - 1.0) / (n * s.gamma);
        let p_star = share * weight(s, params) / (params.v_weight * std::f64::consts::LN_2) - 1.0 / (n * s.gamma);
        for p in [th, th * (1.0 + NUDGE), p0, p_star.clamp(0.0, p0)] {
            try_p(p);
        }
        if th <= p0 {
            try_p(p_star.clamp(th * (1.0 + NUDGE), p0));
        }
    }
    best
}

/// Minimum of the pair metric over `0 <= P_j <= P_i <= P0`, `si` non-SIC.
///
/// `P_j` runs over the grid plus analytic candidates. For each `P_j` the
/// metric is minimized exactly in `P_i`: it is `V P_i` below user `i`'s
/// threshold and convex above it, so the minimum is at `P_i = P_j`, at the
/// threshold, at the clamped stationary point, or at `P0`.
pub fn grid_min_noma(si: &UserState, sj: &UserState, params: &SystemParams, grid: GridSpec) -> (f64, f64, f64) {
    let n = params.n_users as f64;
    let p0 = params.power_budget_w;
    let v = params.v_weight;
    let c = 2.0 * params.blocklength_factor * params.bandwidth_hz / n;
    let (ai, aj) = (n * si.gamma / 2.0, n * sj.gamma / 2.0);
    let (wi, wj) = (weight(si, params), weight(sj, params));
    let ln2 = std::f64::consts::LN_2;
    let k_i = 2f64.powf(si.rate_threshold_bps / c);
    let k_j = 2f64.powf(sj.rate_threshold_bps / c);

    let column = |pj: f64| -> (f64, f64) {
        let mut cands = vec![pj, p0];
        if ai > 0.0 {
            // P_i / (P_j + 1/a_i) >= K_i - 1
            let th = (k_i - 1.0) * (pj + 1.0 / ai);
            let stat = wi * c / (v * ln2) - pj - 1.0 / ai;
            cands.extend([th, th * (1.0 + NUDGE), stat, stat.max(th * (1.0 + NUDGE))]);
        }
        cands
            .into_iter()
            .map(|pi| {
                let pi = pi.clamp(pj, p0);
                (pi, pair_metric_ref(pi, pj, si, sj, params))
            })
            .fold((pj, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    };

    let mut best = (0.0, 0.0, pair_metric_ref(0.0, 0.0, si, sj, params));
    let visit = |best: &mut (f64, f64, f64), pj: f64| {
        if pj.is_finite() && (0.0..=p0).contains(&pj) {
            let (pi, m) = column(pj);
            if m < best.2 {
                *best = (pi, pj, m);
            }
        }
    };
    for pj in grid.values() {
        visit(&mut best, pj);
    }
    let mut extra = vec![0.0, p0];
    if aj > 0.0 {
        let oj = (k_j - 1.0) / aj;
        extra.extend([oj, oj * (1.0 + NUDGE)]);
        // SIC user alone with P_i = P_j
        extra.push((wj * c / (2.0 * v * ln2) - 1.0 / aj).max(oj * (1.0 + NUDGE)));
        if ai > 0.0 {
            // i on its threshold line, and the joint stationary point
            extra.push((wj * c / (v * ln2 * k_i) - 1.0 / aj).max(oj * (1.0 + NUDGE)));
            if wi != wj {
                let (al, be) = (wi * c / ln2, wj * c / ln2);
                extra.push((be * aj - al * ai) / (ai * aj * (al - be)));
            }
            // largest P_j keeping i active at P_i = P0
            let top = (p0 / (k_i - 1.0) - 1.0 / ai) * (1.0 - NUDGE);
            extra.push(top);
        }
    }
    for pj in extra {
        visit(&mut best, pj);
    }

    // golden-section polish of P_j around the best column, staying on the
    // active side of the SIC threshold if the best point is there
    let step = (grid.hi - grid.lo) / (grid.points.max(2) - 1) as f64;
    let mut lo = (best.1 - step).max(0.0);
    let mut hi = (best.1 + step).min(p0);
    if aj > 0.0 {
        let oj = (k_j - 1.0) / aj * (1.0 + NUDGE);
        if best.1 >= oj {
            lo = lo.max(oj);
        } else {
            hi = hi.min(oj / (1.0 + NUDGE) * (1.0 - NUDGE));
        }
    }
    if lo < hi {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (column(x1).1, column(x2).1);
        for _ in 0..80 {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = column(x1).1;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = column(x2).1;
            }
        }
        for pj in [x1, x2] {
            visit(&mut best, pj);
        }
    }
    best
}

/// All involutions of `0..n` (telephone-number many).
pub fn involutions(n: usize) -> Vec<Vec<usize>> {
    fn rec(partner: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let n = partner.len();
        let Some(first) = partner.iter().position(|&p| p == usize::MAX) else {
            out.push(partner.clone());
            return;
        };
        partner[first] = first;
        rec(partner, out);
        for k in first + 1..n {
            if partner[k] == usize::MAX {
                partner[first] = k;
                partner[k] = first;
                rec(partner, out);
                partner[k] = usize::MAX;
            }
        }
        partner[first] = usize::MAX;
    }
    let mut out = Vec::new();
    rec(&mut vec![usize::MAX; n], &mut out);
    out
}

/// Metric-minimal matching by enumeration. Pair metrics come from the pair
/// solver, so this measures only the matching step.
pub fn exhaustive_matching(states: &[UserState], params: &SystemParams) -> Result<(Matching, f64), OracleError> {
    let n = states.len();
    if n > MAX_EXHAUSTIVE_USERS {
        return Err(OracleError::TooManyUsers {
            max: MAX_EXHAUSTIVE_USERS,
            got: n,
        });
    }
    let oma: Vec<f64> = states.iter().map(|s| solve_oma(s, params).metric).collect();
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            pair[i * n + j] = solve_noma_pair(&states[i], &states[j], params).metric;
        }
    }
    let mut best = (Matching::identity(n), oma.iter().sum::<f64>());
    for inv in involutions(n) {
        let total: f64 = (0..n)
            .map(|i| match inv[i] {
                k if k == i => oma[i],
                k if i < k => pair[i * n + k],
                _ => 0.0,
            })
            .sum();
        if total < best.1 {
            best = (Matching { partner: inv }, total);
        }
    }
    Ok(best)
}
