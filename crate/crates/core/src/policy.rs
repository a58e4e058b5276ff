//! Per-slot decision makers: the optimized hybrid scheme, optimized OMA, and
//! the two fixed-power baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SystemParams;
use crate::oma::{oma_metric, solve_oma, UserState};
use crate::pairing::{build_preferences, pair_users, Matching, PairingError};
use crate::rate::{effective_rate, oma_rate, oma_threshold_snapped};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    OptHybrid,
    OptOma,
    #[serde(rename = "pmax")]
    PMax,
    #[serde(rename = "pmin")]
    PMin,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::OptHybrid, Policy::OptOma, Policy::PMax, Policy::PMin];

    pub fn name(self) -> &'static str {
        match self {
            Policy::OptHybrid => "opt-hybrid",
            Policy::OptOma => "opt-oma",
            Policy::PMax => "pmax",
            Policy::PMin => "pmin",
        }
    }

    /// Whether the scheme's decisions depend on `V`.
    pub fn uses_v(self) -> bool {
        matches!(self, Policy::OptHybrid | Policy::OptOma)
    }

    pub fn decide(self, states: &[UserState], params: &SystemParams) -> Result<SlotDecision, PairingError> {
        match self {
            Policy::OptHybrid => policy_opt_hybrid(states, params),
            Policy::OptOma => Ok(policy_opt_oma(states, params)),
            Policy::PMax => Ok(policy_pmax(states, params)),
            Policy::PMin => Ok(policy_pmin(states, params)),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown policy `{0}` (expected opt-hybrid, opt-oma, pmax or pmin)")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "opt-hybrid" | "hybrid" => Ok(Policy::OptHybrid),
            "opt-oma" | "oma" => Ok(Policy::OptOma),
            "pmax" | "p-max" => Ok(Policy::PMax),
            "pmin" | "p-min" => Ok(Policy::PMin),
            _ => Err(UnknownPolicy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotDecision {
    pub matching: Matching,
    pub powers_w: Vec<f64>,
    /// Rates at the chosen powers before the outage gate.
    pub predicted_rates_bps: Vec<f64>,
    pub effective_rates_bps: Vec<f64>,
    /// Sum of the per-user metric terms under the chosen powers.
    pub metric: f64,
}

impl SlotDecision {
    pub fn power_sum_w(&self) -> f64 {
        self.powers_w.iter().sum()
    }
}

/// Every user on its own subband with the given per-user power.
fn oma_with_powers(states: &[UserState], params: &SystemParams, power: impl Fn(&UserState) -> f64) -> SlotDecision {
    let n = states.len();
    let mut d = SlotDecision {
        matching: Matching::identity(n),
        powers_w: Vec::with_capacity(n),
        predicted_rates_bps: Vec::with_capacity(n),
        effective_rates_bps: Vec::with_capacity(n),
        metric: 0.0,
    };
    for s in states {
        let p = power(s);
        let r = if p > 0.0 { oma_rate(p, s.gamma, params) } else { 0.0 };
        d.powers_w.push(p);
        d.predicted_rates_bps.push(r);
        d.effective_rates_bps.push(effective_rate(r, s.rate_threshold_bps));
        d.metric += oma_metric(p, s, params);
    }
    d
}

pub fn policy_opt_oma(states: &[UserState], params: &SystemParams) -> SlotDecision {
    let n = states.len();
    let mut d = SlotDecision {
        matching: Matching::identity(n),
        powers_w: Vec::with_capacity(n),
        predicted_rates_bps: Vec::with_capacity(n),
        effective_rates_bps: Vec::with_capacity(n),
        metric: 0.0,
    };
    for s in states {
        let o = solve_oma(s, params);
        d.powers_w.push(o.power_w);
        d.predicted_rates_bps.push(if o.power_w > 0.0 { oma_rate(o.power_w, s.gamma, params) } else { 0.0 });
        d.effective_rates_bps.push(o.rate_bps);
        d.metric += o.metric;
    }
    d
}

pub fn policy_opt_hybrid(states: &[UserState], params: &SystemParams) -> Result<SlotDecision, PairingError> {
    let prefs = build_preferences(states, params);
    let matching = pair_users(&prefs)?;
    let n = states.len();
    let mut powers = vec![0.0; n];
    let mut predicted = vec![0.0; n];
    let mut effective = vec![0.0; n];
    let mut metric = 0.0;
    for (i, &k) in matching.partner.iter().enumerate() {
        if k == i {
            let o = prefs.oma_decision(i);
            powers[i] = o.power_w;
            predicted[i] = if o.power_w > 0.0 { oma_rate(o.power_w, states[i].gamma, params) } else { 0.0 };
            effective[i] = o.rate_bps;
            metric += o.metric;
        } else {
            let d = prefs.noma_decision(i, k);
            // decisions are stored for (min, max); pick this user's side
            let first = i < k;
            let (p, m, r) = d.by_argument()[usize::from(!first)];
            let raw = if d.non_sic_is_first == first { d.rates.rate_non_sic_bps } else { d.rates.rate_sic_bps };
            powers[i] = p;
            predicted[i] = raw;
            effective[i] = r;
            metric += m;
        }
    }
    Ok(SlotDecision {
        matching,
        powers_w: powers,
        predicted_rates_bps: predicted,
        effective_rates_bps: effective,
        metric,
    })
}

/// Full budget on every link that can clear the rate threshold at full power.
pub fn policy_pmax(states: &[UserState], params: &SystemParams) -> SlotDecision {
    let p0 = params.power_budget_w;
    oma_with_powers(states, params, |s| {
        if s.gamma > 0.0 && oma_rate(p0, s.gamma, params) >= s.rate_threshold_bps {
            p0
        } else {
            0.0
        }
    })
}

/// Exactly the outage threshold on every link that can reach it.
pub fn policy_pmin(states: &[UserState], params: &SystemParams) -> SlotDecision {
    let p0 = params.power_budget_w;
    oma_with_powers(states, params, |s| {
        if !(s.gamma > 0.0) {
            return 0.0;
        }
        let th = oma_threshold_snapped(s.rate_threshold_bps, s.gamma, params);
        if th <= p0 {
            th
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noma::solve_noma_pair;
    use crate::rate::oma_outage_power;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(gamma: f64, q: u64, z: f64) -> UserState {
        UserState {
            gamma,
            backlog_bits: q,
            deficit: z,
            qos: true,
            rate_threshold_bps: 7e6,
        }
    }

    fn random_states(rng: &mut ChaCha8Rng, n: usize) -> Vec<UserState> {
        (0..n)
            .map(|_| {
                state(
                    10f64.powf(rng.random_range(1.0..6.0)),
                    rng.random_range(0..30_000),
                    rng.random_range(0.0..2.0),
                )
            })
            .collect()
    }

    #[test]
    fn names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{}\"", p.name()));
        }
        assert_eq!("PMax".parse::<Policy>().unwrap(), Policy::PMax);
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn empty_queues_spend_nothing() {
        let p = SystemParams::default();
        let states = vec![state(1e4, 0, 0.0); 6];
        for pol in [Policy::OptHybrid, Policy::OptOma] {
            let d = pol.decide(&states, &p).unwrap();
            assert_eq!(d.matching, Matching::identity(6));
            assert!(d.powers_w.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn two_users_take_the_better_option() {
        let p = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let states = random_states(&mut rng, 2);
            let d = policy_opt_hybrid(&states, &p).unwrap();
            let oma = solve_oma(&states[0], &p).metric + solve_oma(&states[1], &p).metric;
            let pair = solve_noma_pair(&states[0], &states[1], &p).metric;
            assert_eq!(d.metric, if pair < oma { pair } else { oma });
        }
    }

    #[test]
    fn hybrid_no_worse_than_oma() {
        let p = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let states = random_states(&mut rng, 12);
            let h = policy_opt_hybrid(&states, &p).unwrap();
            let o = policy_opt_oma(&states, &p);
            h.matching.validate().unwrap();
            assert!(h.metric <= o.metric + 1e-9 * o.metric.abs());
            assert!(o.metric <= 0.0);
            assert!(h.powers_w.iter().all(|&x| (0.0..=p.power_budget_w).contains(&x)));
            for (i, k) in h.matching.pairs() {
                let (pi, pk) = (h.powers_w[i], h.powers_w[k]);
                let (weak, strong) = if states[i].gamma <= states[k].gamma { (pi, pk) } else { (pk, pi) };
                assert!(strong <= weak, "SIC user must not get more power");
            }
        }
    }

    #[test]
    fn opt_oma_is_solve_oma_per_user() {
        let p = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states = random_states(&mut rng, 10);
        let d = policy_opt_oma(&states, &p);
        for (i, s) in states.iter().enumerate() {
            let o = solve_oma(s, &p);
            assert_eq!(d.powers_w[i], o.power_w);
            assert_eq!(d.effective_rates_bps[i], o.rate_bps);
        }
        let mut rev = states.clone();
        rev.reverse();
        let r = policy_opt_oma(&rev, &p);
        let mut back = r.powers_w.clone();
        back.reverse();
        assert_eq!(back, d.powers_w);
    }

    #[test]
    fn pmax_full_power_or_nothing() {
        let p = SystemParams::default();
        let d = policy_pmax(&[state(1e5, 0, 0.0), state(10.0, 5000, 0.0)], &p);
        assert_eq!(d.powers_w, vec![3.0, 0.0]);
        assert!(oma_outage_power(7e6, 10.0, &p) > 3.0);
        assert_eq!(d.effective_rates_bps[1], 0.0);
    }

    #[test]
    fn pmin_serves_exactly_rho() {
        let p = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let states = random_states(&mut rng, 200);
        let lo = policy_pmin(&states, &p);
        let hi = policy_pmax(&states, &p);
        for i in 0..states.len() {
            assert!(lo.powers_w[i] <= hi.powers_w[i]);
            let r = lo.effective_rates_bps[i];
            if lo.powers_w[i] > 0.0 {
                assert!((r - 7e6).abs() <= 1e-9 * 7e6, "rate {r}");
            } else {
                assert_eq!(r, 0.0);
                assert!(oma_outage_power(7e6, states[i].gamma, &p) > p.power_budget_w);
            }
        }
    }
}
