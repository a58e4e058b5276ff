//! OMA and two-user NOMA rates, outage thresholds and outage gating.
//!
//! All functions are pure. Rates are in bit/s, powers in watts and channel
//! gains are the noise-normalized `gain_per_watt` values from
//! [`crate::channel`].

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::config::SystemParams;

/// Rates of a NOMA pair: `i` is the weaker (non-SIC) user, `j` the SIC user.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RatePair {
    pub rate_non_sic_bps: f64,
    pub rate_sic_bps: f64,
}

/// Relative slack added when a threshold power is snapped onto the feasible
/// side, so that independent re-evaluations of the rate still clear `rho`.
const SNAP_MARGIN: f64 = 256.0 * f64::EPSILON;

/// `(Phi B / N) log2(1 + N Gamma p)`.
pub fn oma_rate(p: f64, gamma: f64, params: &SystemParams) -> f64 {
    let n = params.n_users as f64;
    params.oma_prefactor() * (n * gamma * p).ln_1p() / LN_2
}

/// Smallest power with `oma_rate >= rho`; `+inf` when the channel is dead.
pub fn oma_outage_power(rho: f64, gamma: f64, params: &SystemParams) -> f64 {
    if !(gamma > 0.0) {
        return f64::INFINITY;
    }
    let n = params.n_users as f64;
    ((rho / params.oma_prefactor()) * LN_2).exp_m1() / (n * gamma)
}

pub fn noma_rates(p_i: f64, p_j: f64, gamma_i: f64, gamma_j: f64, params: &SystemParams) -> RatePair {
    let half_n = params.n_users as f64 / 2.0;
    let c = params.noma_prefactor();
    let sinr_i = half_n * gamma_i * p_i / (half_n * gamma_i * p_j + 1.0);
    RatePair {
        rate_non_sic_bps: c * sinr_i.ln_1p() / LN_2,
        rate_sic_bps: c * (half_n * gamma_j * p_j).ln_1p() / LN_2,
    }
}

/// Smallest SIC-user power meeting `rho_j`; `+inf` for a dead channel.
pub fn noma_outage_power_sic(rho_j: f64, gamma_j: f64, params: &SystemParams) -> f64 {
    if !(gamma_j > 0.0) {
        return f64::INFINITY;
    }
    let half_n = params.n_users as f64 / 2.0;
    ((rho_j / params.noma_prefactor()) * LN_2).exp_m1() / (half_n * gamma_j)
}

/// Largest SIC-user power `P_j` that keeps the non-SIC user at `rho_i` when
/// the pair spends `q` watts in total. Negative when user `i` is in outage for
/// every split of `q`.
pub fn noma_outage_power_non_sic(rho_i: f64, gamma_i: f64, q: f64, params: &SystemParams) -> f64 {
    if !(gamma_i > 0.0) {
        return f64::NEG_INFINITY;
    }
    let half_n = params.n_users as f64 / 2.0;
    let x = (rho_i / params.noma_prefactor()) * LN_2;
    (q - x.exp_m1() / (half_n * gamma_i)) * (-x).exp()
}

/// Outage gating: the rate counts only when it reaches the threshold.
pub fn effective_rate(r: f64, rho: f64) -> f64 {
    if r >= rho {
        r
    } else {
        0.0
    }
}

/// Raise `p` until `ok(p)` holds, then add a small relative margin.
///
/// `ok` must be monotone (false below some power, true above). Returns `p`
/// unchanged when it is not finite.
pub(crate) fn snap_up(mut p: f64, ok: impl Fn(f64) -> bool) -> f64 {
    if !p.is_finite() {
        return p;
    }
    p = p.max(0.0);
    for _ in 0..512 {
        if ok(p) {
            return p * (1.0 + SNAP_MARGIN);
        }
        p = (p * (1.0 + 4.0 * f64::EPSILON)).max(p.next_up());
    }
    p
}

/// Lower `p` until `ok(p)` holds, then subtract a small relative margin.
/// May return a negative value, meaning no feasible point.
pub(crate) fn snap_down(mut p: f64, ok: impl Fn(f64) -> bool) -> f64 {
    if !p.is_finite() {
        return p;
    }
    for _ in 0..512 {
        if p < 0.0 {
            return p;
        }
        if ok(p) {
            return if p > 0.0 { p * (1.0 - SNAP_MARGIN) } else { p };
        }
        p = (p * (1.0 - 4.0 * f64::EPSILON)).min(p.next_down());
    }
    p
}

/// OMA threshold snapped so that `oma_rate(P) >= rho` holds exactly.
pub(crate) fn oma_threshold_snapped(rho: f64, gamma: f64, params: &SystemParams) -> f64 {
    let p = oma_outage_power(rho, gamma, params);
    snap_up(p, |p| oma_rate(p, gamma, params) >= rho)
}
