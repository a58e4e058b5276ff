//! Power allocation for a fixed two-user NOMA pair.
//!
//! The non-SIC user `i` has the weaker channel. Two solvers are provided:
//!
//! * [`NomaSolver::Sequential`] (default): pick the pair total `q` from the
//!   weak user's state, then split it by enumerating the closed-form candidates.
//! * [`NomaSolver::ActiveSet`]: minimize jointly over
//!   `0 <= P_j <= P_i <= P0` by enumerating which users clear their outage
//!   thresholds. In the region where both are active the objective separates
//!   in `(q, P_j)`, so its minimum is the joint stationary point or lies on
//!   one of four boundary edges; each edge is a one-dimensional problem
//!   solved exactly.
//!
//! Both return the exact outage-gated metric of the powers they choose.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::config::{NomaSolver, SystemParams};
use crate::oma::UserState;
use crate::rate::{
    effective_rate, noma_outage_power_non_sic, noma_outage_power_sic, noma_rates, snap_down,
    snap_up, RatePair,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NomaDecision {
    pub power_non_sic_w: f64,
    pub power_sic_w: f64,
    pub total_q_w: f64,
    /// Pair metric, the sum of the two per-user terms.
    pub metric: f64,
    pub metric_non_sic: f64,
    pub metric_sic: f64,
    /// Raw (ungated) rates at the chosen powers.
    pub rates: RatePair,
    /// Gated rates actually delivered.
    pub effective_rates: RatePair,
    pub useless: bool,
    /// True when the first argument of [`solve_noma_pair`] is the non-SIC user.
    pub non_sic_is_first: bool,
}

impl NomaDecision {
    fn useless(non_sic_is_first: bool) -> Self {
        Self {
            power_non_sic_w: 0.0,
            power_sic_w: 0.0,
            total_q_w: 0.0,
            metric: 0.0,
            metric_non_sic: 0.0,
            metric_sic: 0.0,
            rates: RatePair::default(),
            effective_rates: RatePair::default(),
            useless: true,
            non_sic_is_first,
        }
    }

    /// `(power, metric term, effective rate)` of the first and second argument.
    pub fn by_argument(&self) -> [(f64, f64, f64); 2] {
        let i = (self.power_non_sic_w, self.metric_non_sic, self.effective_rates.rate_non_sic_bps);
        let j = (self.power_sic_w, self.metric_sic, self.effective_rates.rate_sic_bps);
        if self.non_sic_is_first {
            [i, j]
        } else {
            [j, i]
        }
    }
}

/// Per-user terms `(M_i, M_j)` and raw rates of a split.
pub fn pair_terms(
    p_i: f64,
    p_j: f64,
    si: &UserState,
    sj: &UserState,
    params: &SystemParams,
) -> (f64, f64, RatePair) {
    let rates = noma_rates(p_i, p_j, si.gamma, sj.gamma, params);
    let v = params.v_weight;
    let m_i = v * p_i - si.pressure(params) * effective_rate(rates.rate_non_sic_bps, si.rate_threshold_bps);
    let m_j = v * p_j - sj.pressure(params) * effective_rate(rates.rate_sic_bps, sj.rate_threshold_bps);
    (m_i, m_j, rates)
}

/// `M_i(P_i) + M_j(P_j)` with per-user outage gating.
pub fn pair_metric(p_i: f64, p_j: f64, si: &UserState, sj: &UserState, params: &SystemParams) -> f64 {
    let (m_i, m_j, _) = pair_terms(p_i, p_j, si, sj, params);
    m_i + m_j
}

/// `x / v` with `0 / 0 = 0` and `x / 0 = inf` for `x > 0`.
fn ratio(x: f64, v: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x / v
    }
}

/// Optimal pair total power for the weaker user's state, clamped to `[0, 2 P0]`.
pub fn solve_q(si: &UserState, params: &SystemParams) -> f64 {
    if !(si.gamma > 0.0) {
        return 0.0;
    }
    let a = params.n_users as f64 * si.gamma / 2.0;
    let alpha = si.pressure(params) * params.noma_prefactor() / LN_2;
    let q = ratio(alpha, params.v_weight) - 1.0 / a;
    q.clamp(0.0, 2.0 * params.power_budget_w)
}

/// Stationary point of the split objective for fixed `q`. `None` when the two
/// pressures are equal and the point is undefined.
pub fn split_candidate(si: &UserState, sj: &UserState, params: &SystemParams) -> Option<f64> {
    let wi = si.pressure(params);
    let wj = sj.pressure(params);
    if wi == wj {
        return None;
    }
    let n = params.n_users as f64;
    let p = 2.0 / (n * si.gamma * sj.gamma) * (sj.gamma * wj - si.gamma * wi) / (wi - wj);
    p.is_finite().then_some(p)
}

/// `1 < w_i / w_j < Gamma_j / Gamma_i`, the regime where the split objective is
/// convex around its stationary point.
pub fn theorem2_precondition(si: &UserState, sj: &UserState, params: &SystemParams) -> bool {
    let wi = si.pressure(params);
    let wj = sj.pressure(params);
    wj > 0.0 && si.gamma > 0.0 && wi > wj && wi * si.gamma < sj.gamma * wj
}

/// Outage thresholds entering the split for a given `q`: `(P^o_j, P^o_i)`,
/// snapped so that the gated rates agree with them.
fn split_thresholds(q: f64, si: &UserState, sj: &UserState, params: &SystemParams) -> (f64, f64) {
    let rho_i = si.rate_threshold_bps;
    let rho_j = sj.rate_threshold_bps;
    let oj = noma_outage_power_sic(rho_j, sj.gamma, params);
    let oj = snap_up(oj, |p| noma_rates(0.0, p, si.gamma, sj.gamma, params).rate_sic_bps >= rho_j);
    let oi = noma_outage_power_non_sic(rho_i, si.gamma, q, params);
    let oi = snap_down(oi, |p| {
        noma_rates(q - p, p, si.gamma, sj.gamma, params).rate_non_sic_bps >= rho_i
    });
    (oj, oi)
}

/// Best `P_j` in `[max(0, q - P0), q/2]` over the closed-form candidates
/// `{clamped P_j*, P^o_j, P^o_i, q - P0, q/2}`, judged by the exact metric.
pub fn solve_split(q: f64, si: &UserState, sj: &UserState, params: &SystemParams) -> f64 {
    let lo = (q - params.power_budget_w).max(0.0);
    let hi = q / 2.0;
    let (oj, oi) = split_thresholds(q, si, sj, params);
    let mut best = (f64::INFINITY, lo);
    let mut consider = |pj: f64| {
        if pj.is_finite() && (lo..=hi).contains(&pj) {
            let m = pair_metric(q - pj, pj, si, sj, params);
            if m < best.0 {
                best = (m, pj);
            }
        }
    };
    if let Some(ps) = split_candidate(si, sj, params) {
        consider(ps.clamp(lo, hi));
        // the stationary point only matters where both users are active
        let (a, b) = (oj.max(lo), oi.min(hi));
        if a <= b {
            consider(ps.clamp(a, b));
        }
    }
    consider(oj);
    consider(oi);
    consider(lo);
    consider(hi);
    best.1
}

/// The split chosen by the printed case analysis, valid when
/// [`theorem2_precondition`] holds. Comparisons between branches use the exact
/// metric; boundary points the table names inconsistently are replaced by the
/// minimizers of the corresponding outage region (`q - P0` or `q/2`).
pub fn theorem2_split(q: f64, si: &UserState, sj: &UserState, params: &SystemParams) -> f64 {
    let p0 = params.power_budget_w;
    let qbar = (q - p0).max(0.0);
    let half = q / 2.0;
    let (oj, oi) = split_thresholds(q, si, sj, params);
    let ps = split_candidate(si, sj, params).unwrap_or(qbar);
    let m = |pj: f64| pair_metric(q - pj, pj, si, sj, params);
    let argmin = |cands: &[f64]| {
        cands
            .iter()
            .copied()
            .fold((f64::INFINITY, qbar), |acc, x| {
                let v = m(x);
                if v < acc.0 {
                    (v, x)
                } else {
                    acc
                }
            })
            .1
    };
    let clamp = |lo: f64, hi: f64| if lo <= hi { ps.clamp(lo, hi) } else { lo };
    if oj <= oi {
        if oi <= q - p0 {
            half
        } else if half <= oj {
            qbar
        } else if oi <= half && q - p0 <= oj {
            argmin(&[clamp(oj, oi), half, qbar])
        } else if oj <= half && half <= oi && q - p0 <= oj {
            argmin(&[clamp(oj, half), qbar])
        } else if oi <= half {
            argmin(&[clamp(q - p0, oi), half])
        } else {
            clamp(q - p0, half)
        }
    } else if qbar <= oi && half <= oj {
        qbar
    } else if oi < qbar && oj < half {
        half
    } else if qbar <= oi && oj < half {
        argmin(&[qbar, half])
    } else {
        qbar
    }
}

/// The q-then-split solver.
pub fn solve_noma_sequential(si: &UserState, sj: &UserState, params: &SystemParams) -> NomaDecision {
    let q = solve_q(si, params);
    if q == 0.0 {
        return NomaDecision::useless(true);
    }
    let pj = solve_split(q, si, sj, params);
    finish(q - pj, pj, si, sj, params)
}

fn finish(p_i: f64, p_j: f64, si: &UserState, sj: &UserState, params: &SystemParams) -> NomaDecision {
    let (m_i, m_j, rates) = pair_terms(p_i, p_j, si, sj, params);
    let metric = m_i + m_j;
    if !(metric < 0.0) {
        return NomaDecision::useless(true);
    }
    NomaDecision {
        power_non_sic_w: p_i,
        power_sic_w: p_j,
        total_q_w: p_i + p_j,
        metric,
        metric_non_sic: m_i,
        metric_sic: m_j,
        rates,
        effective_rates: RatePair {
            rate_non_sic_bps: effective_rate(rates.rate_non_sic_bps, si.rate_threshold_bps),
            rate_sic_bps: effective_rate(rates.rate_sic_bps, sj.rate_threshold_bps),
        },
        useless: false,
        non_sic_is_first: true,
    }
}

/// Per-user constants reused by every pair a user takes part in.
#[derive(Debug, Clone, Copy)]
pub struct NomaUser {
    pub state: UserState,
    /// `N Gamma / 2`.
    a: f64,
    /// `(tau Q + Z~) c / ln 2`, the weight of the log terms.
    alpha: f64,
    /// `2^(rho / c)`.
    k: f64,
    /// Snapped threshold as SIC user; also the non-SIC threshold with `P_j = 0`.
    thr: f64,
    /// Best power when this user is the only active one and the partner is silent.
    solo: f64,
    /// Best common power when this user is the active SIC user and the partner
    /// (non-SIC) is held at the same power.
    sic_only: f64,
}

impl NomaUser {
    pub fn new(state: UserState, params: &SystemParams) -> Self {
        let c = params.noma_prefactor();
        let a = params.n_users as f64 * state.gamma / 2.0;
        let alpha = state.pressure(params) * c / LN_2;
        let rho = state.rate_threshold_bps;
        let x = rho / c * LN_2;
        let k = x.exp();
        let (thr, solo, sic_only) = if a > 0.0 {
            let raw = x.exp_m1() / a;
            let thr = snap_up(raw, |p| noma_rates(0.0, p, 0.0, state.gamma, params).rate_sic_bps >= rho);
            let p0 = params.power_budget_w;
            let v = params.v_weight;
            let (solo, sic_only) = if thr <= p0 {
                (
                    (ratio(alpha, v) - 1.0 / a).clamp(thr, p0),
                    (ratio(alpha, 2.0 * v) - 1.0 / a).clamp(thr, p0),
                )
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            (thr, solo, sic_only)
        } else {
            (f64::INFINITY, f64::INFINITY, f64::INFINITY)
        };
        Self {
            state,
            a,
            alpha,
            k,
            thr,
            solo,
            sic_only,
        }
    }
}

/// Minimize `slope x + sum_k lam_k ln(u_k + v_k x)` over `[lo, hi]`.
///
/// Every `u_k + v_k x` must stay positive on the interval. The derivative times
/// the product of the denominators is a polynomial of degree at most
/// `terms.len()`, so it changes sign at most that many times; the interval is
/// split at the critical points of that polynomial and each monotone piece is
/// searched for a sign change.
fn logsum_argmin(slope: f64, terms: &[(f64, f64, f64)], lo: f64, hi: f64) -> f64 {
    let f = |x: f64| slope * x + terms.iter().map(|&(l, u, v)| l * (u + v * x).ln()).sum::<f64>();
    let df = |x: f64| slope + terms.iter().map(|&(l, u, v)| l * v / (u + v * x)).sum::<f64>();

    // numerator polynomial, coefficients in increasing degree
    let mut num = [0.0f64; 4];
    let mut prod = [1.0, 0.0, 0.0, 0.0];
    for &(_, u, v) in terms {
        prod = poly_mul_linear(prod, u, v);
    }
    for (d, c) in prod.iter().enumerate() {
        num[d] += slope * c;
    }
    for (k, &(l, _, v)) in terms.iter().enumerate() {
        let mut others = [1.0, 0.0, 0.0, 0.0];
        for (m, &(_, u2, v2)) in terms.iter().enumerate() {
            if m != k {
                others = poly_mul_linear(others, u2, v2);
            }
        }
        for (d, c) in others.iter().enumerate() {
            num[d] += l * v * c;
        }
    }

    let mut cuts = vec![lo];
    // roots of num' = num[1] + 2 num[2] x + 3 num[3] x^2
    for r in quadratic_roots(3.0 * num[3], 2.0 * num[2], num[1]) {
        if r > lo && r < hi {
            cuts.push(r);
        }
    }
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);

    let mut best = (f(lo), lo);
    let fh = f(hi);
    if fh < best.0 {
        best = (fh, hi);
    }
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (df(a), df(b));
        // a minimum needs the derivative to go from negative to positive
        if da < 0.0 && db > 0.0 {
            let x = bracket_root(&df, a, b, da, db);
            let fx = f(x);
            if fx < best.0 {
                best = (fx, x);
            }
        }
    }
    best.1
}

fn poly_mul_linear(p: [f64; 4], u: f64, v: f64) -> [f64; 4] {
    [u * p[0], u * p[1] + v * p[0], u * p[2] + v * p[1], u * p[3] + v * p[2]]
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let q = -0.5 * (b + b.signum() * s);
    let mut roots = vec![q / a];
    if q != 0.0 {
        roots.push(c / q);
    }
    roots
}

/// Illinois-style regula falsi on a bracketed sign change.
fn bracket_root(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64) -> f64 {
    let mut side = 0i8;
    for _ in 0..100 {
        let x = (a * gb - b * ga) / (gb - ga);
        let x = if x > a && x < b { x } else { 0.5 * (a + b) };
        if b - a <= 1e-15 * b.abs().max(1e-300) {
            return x;
        }
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if (gx < 0.0) == (ga < 0.0) {
            a = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

/// Exact joint minimizer for a pair with fixed roles (`ui` non-SIC).
pub fn solve_noma_joint(ui: &NomaUser, uj: &NomaUser, params: &SystemParams) -> NomaDecision {
    let si = &ui.state;
    let sj = &uj.state;
    let p0 = params.power_budget_w;
    let v = params.v_weight;

    let mut best = (0.0f64, 0.0f64, 0.0f64);
    let mut consider = |p_i: f64, p_j: f64| {
        let m = pair_metric(p_i, p_j, si, sj, params);
        if m < best.0 {
            best = (m, p_i, p_j);
        }
    };

    // only i active, j silent
    if ui.solo <= p0 && ui.alpha > 0.0 {
        consider(ui.solo, 0.0);
    }
    // only j active; i's power is wasted, so keep it at the floor P_i = P_j
    if uj.sic_only <= p0 && uj.alpha > 0.0 {
        consider(uj.sic_only, uj.sic_only);
    }

    // both active: polygon in (x = P_j, q = P_i + P_j)
    //   x >= xo, q >= 2x, q >= K x + d, q <= P0 + x
    if ui.a > 0.0 && uj.a > 0.0 && ui.alpha > 0.0 && uj.alpha > 0.0 {
        let xo = uj.thr;
        let kk = ui.k;
        let d = (kk - 1.0) / ui.a;
        let lower = |x: f64| (2.0 * x).max(kk * x + d);
        if xo <= p0 && lower(xo) <= p0 + xo {
            let (alpha, beta) = (ui.alpha, uj.alpha);
            let (ai, aj) = (ui.a, uj.a);
            let q_star = ratio(alpha, v) - 1.0 / ai;
            let mut both = |x: f64, q: f64| {
                let (p_i, p_j) = settle(q - x, x, ui, uj, params);
                consider(p_i, p_j);
            };

            // interior stationary point
            if alpha != beta {
                let x = (beta * aj - alpha * ai) / (ai * aj * (alpha - beta));
                if x.is_finite() && x >= xo && q_star >= lower(x) && q_star <= p0 + x {
                    both(x, q_star);
                }
            }
            // E1: x = xo
            both(xo, q_star.clamp(lower(xo), p0 + xo));

            // E4: i exactly at its threshold, q = K x + d
            let mut x4_hi = (p0 - d) / (kk - 1.0);
            if kk < 2.0 {
                x4_hi = x4_hi.min(d / (2.0 - kk));
            }
            if x4_hi >= xo {
                let x = (ratio(beta, v * kk) - 1.0 / aj).clamp(xo, x4_hi);
                both(x, kk * x + d);
            }

            // E3: P_i = P0
            let x3_hi = p0.min((p0 - d) / (kk - 1.0));
            if x3_hi >= xo {
                let x = logsum_argmin(
                    v,
                    &[(-alpha, 1.0 + ai * p0, ai), (alpha, 1.0, ai), (-beta, 1.0, aj)],
                    xo,
                    x3_hi,
                );
                both(x, p0 + x);
            }

            // E2: P_i = P_j, reachable only for K < 2
            if kk < 2.0 {
                let x2_lo = xo.max(d / (2.0 - kk));
                if x2_lo <= p0 {
                    let x = logsum_argmin(
                        2.0 * v,
                        &[(-alpha, 1.0, 2.0 * ai), (alpha, 1.0, ai), (-beta, 1.0, aj)],
                        x2_lo,
                        p0,
                    );
                    both(x, 2.0 * x);
                }
            }
        }
    }

    let (_, p_i, p_j) = best;
    if p_i == 0.0 && p_j == 0.0 {
        return NomaDecision::useless(true);
    }
    finish(p_i, p_j, si, sj, params)
}

/// Move a point meant to have both users active onto the active side of the
/// threshold lines when rounding left it just outside, staying in the box.
fn settle(p_i: f64, p_j: f64, ui: &NomaUser, uj: &NomaUser, params: &SystemParams) -> (f64, f64) {
    let p0 = params.power_budget_w;
    let (gi, gj) = (ui.state.gamma, uj.state.gamma);
    let rho_i = ui.state.rate_threshold_bps;
    let mut p_i = p_i.min(p0);
    let mut p_j = p_j.max(uj.thr);
    // keep a sliver of rate above the threshold so the point survives
    // re-evaluation with differently rounded arithmetic
    let target = rho_i * (1.0 + 1e-13);
    let ok_i = |pi: f64, pj: f64| noma_rates(pi, pj, gi, gj, params).rate_non_sic_bps >= target;
    if !ok_i(p_i, p_j) {
        let raised = snap_up(p_i, |pi| ok_i(pi, p_j));
        if raised <= p0 {
            p_i = raised;
        } else {
            p_i = p0;
            let lowered = snap_down(p_j, |pj| ok_i(p0, pj));
            if lowered >= uj.thr {
                p_j = lowered;
            }
        }
    }
    (p_i, p_j.min(p_i))
}

/// Solve the pair `{a, b}`; roles follow the channel gains.
pub fn solve_noma_pair(a: &UserState, b: &UserState, params: &SystemParams) -> NomaDecision {
    solve_prepared(&NomaUser::new(*a, params), &NomaUser::new(*b, params), params)
}

/// [`solve_noma_pair`] on precomputed per-user constants.
pub fn solve_prepared(a: &NomaUser, b: &NomaUser, params: &SystemParams) -> NomaDecision {
    let solve = |i: &NomaUser, j: &NomaUser| match params.noma_solver {
        NomaSolver::ActiveSet => solve_noma_joint(i, j, params),
        NomaSolver::Sequential => solve_noma_sequential(&i.state, &j.state, params),
    };
    let (ga, gb) = (a.state.gamma, b.state.gamma);
    if ga < gb {
        solve(a, b)
    } else if ga > gb {
        flip(solve(b, a))
    } else {
        let first = solve(a, b);
        let second = flip(solve(b, a));
        if second.metric < first.metric {
            second
        } else {
            first
        }
    }
}

fn flip(mut d: NomaDecision) -> NomaDecision {
    d.non_sic_is_first = !d.non_sic_is_first;
    d
}
