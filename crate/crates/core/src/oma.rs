//! Closed-form OMA power for a single user.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::config::SystemParams;
use crate::rate::{effective_rate, oma_outage_power, oma_rate, oma_threshold_snapped};

/// What the scheduler sees of one user in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserState {
    /// Normalized channel gain `Gamma` in 1/W.
    pub gamma: f64,
    pub backlog_bits: u64,
    /// Virtual-queue deficit `Z`.
    pub deficit: f64,
    /// Whether the user carries the long-term rate constraint.
    pub qos: bool,
    pub rate_threshold_bps: f64,
}

impl UserState {
    /// Deficit as seen by the metric: zero for users outside the QoS set.
    pub fn z_tilde(&self) -> f64 {
        if self.qos {
            self.deficit
        } else {
            0.0
        }
    }

    /// Queue pressure `tau Q + Z~` multiplying the effective rate in the metric.
    pub fn pressure(&self, params: &SystemParams) -> f64 {
        params.slot_duration_s * self.backlog_bits as f64 + self.z_tilde()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmaDecision {
    pub power_w: f64,
    pub metric: f64,
    /// Outage-gated rate at `power_w`.
    pub rate_bps: f64,
    pub in_outage: bool,
}

impl OmaDecision {
    pub(crate) const IDLE: OmaDecision = OmaDecision {
        power_w: 0.0,
        metric: 0.0,
        rate_bps: 0.0,
        in_outage: true,
    };
}

/// `V p - (tau Q + Z~) R~(p)`.
pub fn oma_metric(p: f64, state: &UserState, params: &SystemParams) -> f64 {
    let r = effective_rate(oma_rate(p, state.gamma, params), state.rate_threshold_bps);
    params.v_weight * p - state.pressure(params) * r
}

/// Unconstrained stationary point of the non-outage branch of the metric.
pub fn oma_stationary_power(state: &UserState, params: &SystemParams) -> f64 {
    let n = params.n_users as f64;
    let w = state.pressure(params);
    if w == 0.0 {
        return -1.0 / (n * state.gamma);
    }
    params.oma_prefactor() * w / (params.v_weight * LN_2) - 1.0 / (n * state.gamma)
}

pub fn solve_oma(state: &UserState, params: &SystemParams) -> OmaDecision {
    if !(state.gamma > 0.0) {
        return OmaDecision::IDLE;
    }
    let p0 = params.power_budget_w;
    let th = oma_threshold_snapped(state.rate_threshold_bps, state.gamma, params);
    if th > p0 {
        return OmaDecision::IDLE;
    }
    let p_star = oma_stationary_power(state, params);
    let power = if p0 <= p_star {
        p0
    } else if th <= p_star {
        p_star
    } else {
        th
    };
    let rate = effective_rate(oma_rate(power, state.gamma, params), state.rate_threshold_bps);
    let metric = params.v_weight * power - state.pressure(params) * rate;
    // zero power is always feasible, and ties go to saving power
    if metric < 0.0 {
        OmaDecision {
            power_w: power,
            metric,
            rate_bps: rate,
            in_outage: rate == 0.0,
        }
    } else {
        OmaDecision::IDLE
    }
}

/// Raw (unsnapped) OMA outage threshold of a state, for reporting.
pub fn oma_threshold(state: &UserState, params: &SystemParams) -> f64 {
    oma_outage_power(state.rate_threshold_bps, state.gamma, params)
}
