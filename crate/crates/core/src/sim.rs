//! Slot-loop simulator and the delay, power and rate statistics it collects.
//!
//! Each slot: draw fading for every user, draw arrivals (held aside), let the
//! policy decide from channel, backlog and deficit, serve `floor(R~ tau)` bits
//! from each FIFO, append the arrivals, then update the deficit queues.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{mean_gain_per_watt, sample_fading_power, ChannelError};
use crate::config::{generate_scenario, ConfigError, SystemParams, UserProfile, DYNAMICS_STREAM};
use crate::oma::UserState;
use crate::pairing::PairingError;
use crate::policy::Policy;
use crate::queue::{sample_arrival_packets, update_virtual, TransmitQueue, VirtualQueue};

/// Shortest horizon for which the stability comparison is meaningful.
pub const MIN_STABILITY_SLOTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("horizon must be at least one slot")]
    ZeroHorizon,
    #[error("scenario has {got} users but the parameters say {expected}")]
    ScenarioSize { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("stability check needs at least {MIN_STABILITY_SLOTS} slots, got {0}")]
    SeriesTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub middle_mean: f64,
    pub final_mean: f64,
    /// False when the final fifth averages more than 1.5x the middle fifth.
    pub stable: bool,
}

/// Mean of the middle 20% against the mean of the final 20% of a series.
pub fn stability_check(series: &[f64]) -> Result<StabilityReport, SimError> {
    let n = series.len();
    if n < MIN_STABILITY_SLOTS {
        return Err(SimError::SeriesTooShort(n));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let middle_mean = mean(&series[n * 2 / 5..n * 3 / 5]);
    let final_mean = mean(&series[n * 4 / 5..]);
    Ok(StabilityReport {
        middle_mean,
        final_mean,
        stable: final_mean <= 1.5 * middle_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowLatency {
    pub rate: f64,
    /// No packet was eligible; `rate` is reported as 1.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTrace {
    pub policy: Policy,
    pub seed: u64,
    pub horizon_slots: u64,
    /// Leading slots left out of the time averages and delay statistics.
    pub warmup_slots: u64,
    pub slot_duration_s: f64,
    /// Mean over post-warm-up slots of the summed transmit power.
    pub time_avg_power_sum_w: f64,
    /// Mean post-warm-up effective rate per user.
    pub per_user_time_avg_rate_bps: Vec<f64>,
    /// Largest per-user mean packet delay.
    pub max_expected_queueing_delay_s: f64,
    pub p999_delay_s: f64,
    pub low_latency_rate: f64,
    pub low_latency_undefined: bool,
    pub stability: Option<StabilityReport>,
    /// Total bits queued at the end of each slot.
    #[serde(skip)]
    pub backlog_series: Vec<u64>,
    /// Sum of the deficits at the end of each slot.
    #[serde(skip)]
    pub virtual_backlog_series: Vec<f64>,
    #[serde(skip)]
    pub power_series: Vec<f64>,
    /// `delay_histogram[d]` packets served after the warm-up with delay `d` slots.
    #[serde(skip)]
    pub delay_histogram: Vec<u64>,
    /// `unserved_age_histogram[a]` packets still queued at the end with age `a` slots.
    #[serde(skip)]
    pub unserved_age_histogram: Vec<u64>,
    /// Effective rate averaged over the whole horizon, warm-up included.
    pub full_avg_rate_bps: Vec<f64>,
    pub final_deficit: Vec<f64>,
    pub qos_target_bps: Vec<f64>,
    pub qos: Vec<bool>,
    pub arrived_bits: Vec<u64>,
    pub served_bits: Vec<u64>,
    pub final_backlog_bits: Vec<u64>,
}

impl MetricsTrace {
    pub fn avg_rate_bps(&self) -> f64 {
        let r = &self.per_user_time_avg_rate_bps;
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }

    pub fn served_packets(&self) -> u64 {
        self.delay_histogram.iter().sum()
    }
}

/// Smallest delay covering fraction `q` of the histogram, in slots.
pub fn histogram_quantile(hist: &[u64], q: f64) -> Option<u64> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let need = (q * total as f64).ceil().max(1.0) as u64;
    let mut acc = 0;
    for (d, &c) in hist.iter().enumerate() {
        acc += c;
        if acc >= need {
            return Some(d as u64);
        }
    }
    Some(hist.len() as u64 - 1)
}

/// Share of packets delivered within `margin_s`. Packets still queued at the
/// end count as late once their age exceeds the margin and are left out
/// otherwise.
pub fn low_latency_rate(trace: &MetricsTrace, margin_s: f64) -> LowLatency {
    let margin = (margin_s / trace.slot_duration_s + 1e-9).floor() as u64;
    low_latency_from_counts(&trace.delay_histogram, &trace.unserved_age_histogram, margin)
}

fn low_latency_from_counts(hist: &[u64], unserved: &[u64], margin_slots: u64) -> LowLatency {
    let on_time: u64 = hist.iter().take(margin_slots as usize + 1).sum();
    let served: u64 = hist.iter().sum();
    let stale: u64 = unserved.iter().skip(margin_slots as usize + 1).sum();
    let denom = served + stale;
    if denom == 0 {
        LowLatency {
            rate: 1.0,
            undefined: true,
        }
    } else {
        LowLatency {
            rate: on_time as f64 / denom as f64,
            undefined: false,
        }
    }
}

pub fn run(params: &SystemParams, policy: Policy, horizon_slots: u64, seed: u64) -> Result<MetricsTrace, SimError> {
    params.validate()?;
    let scenario = generate_scenario(params, seed);
    run_scenario(params, &scenario, policy, horizon_slots, seed)
}

/// Like [`run`] with an explicit user layout.
pub fn run_scenario(
    params: &SystemParams,
    scenario: &[UserProfile],
    policy: Policy,
    horizon_slots: u64,
    seed: u64,
) -> Result<MetricsTrace, SimError> {
    if horizon_slots == 0 {
        return Err(SimError::ZeroHorizon);
    }
    params.validate()?;
    let n = params.n_users;
    if scenario.len() != n {
        return Err(SimError::ScenarioSize {
            expected: n,
            got: scenario.len(),
        });
    }
    let margin = params.delay_margin_slots()?;
    let tau = params.slot_duration_s;
    let mean_gain: Vec<f64> = scenario
        .iter()
        .map(|u| mean_gain_per_watt(u.distance_m, params))
        .collect::<Result<_, _>>()?;
    let qos = params.qos_mask();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DYNAMICS_STREAM);

    let horizon = horizon_slots as usize;
    let warmup = horizon_slots / 10;
    let mut queues = vec![TransmitQueue::new(); n];
    let mut deficits = vec![VirtualQueue::default(); n];
    let mut states: Vec<UserState> = (0..n)
        .map(|u| UserState {
            gamma: 0.0,
            backlog_bits: 0,
            deficit: 0.0,
            qos: qos[u],
            rate_threshold_bps: scenario[u].rate_threshold_bps,
        })
        .collect();
    let mut arrivals = vec![0u64; n];

    let mut backlog_series = Vec::with_capacity(horizon);
    let mut virtual_series = Vec::with_capacity(horizon);
    let mut power_series = Vec::with_capacity(horizon);
    let mut hist: Vec<u64> = Vec::new();
    let mut delay_sum = vec![0u64; n];
    let mut delay_count = vec![0u64; n];
    let mut power_acc = 0.0;
    let mut rate_acc = vec![0.0; n];
    let mut rate_full = vec![0.0; n];
    let mut arrived = vec![0u64; n];
    let mut served = vec![0u64; n];

    for t in 0..horizon_slots {
        for (s, g) in states.iter_mut().zip(&mean_gain) {
            s.gamma = sample_fading_power(&mut rng) * g;
        }
        for a in arrivals.iter_mut() {
            *a = sample_arrival_packets(params, &mut rng);
        }
        for (s, (q, z)) in states.iter_mut().zip(queues.iter().zip(&deficits)) {
            s.backlog_bits = q.backlog_bits();
            s.deficit = z.deficit;
        }

        let d = policy.decide(&states, params)?;
        let counted = t >= warmup;
        let power = d.power_sum_w();
        power_series.push(power);
        if counted {
            power_acc += power;
        }

        let mut total_backlog = 0;
        let mut total_deficit = 0.0;
        for u in 0..n {
            let r = d.effective_rates_bps[u];
            rate_full[u] += r;
            if counted {
                rate_acc[u] += r;
            }
            let mu = (r * tau).floor() as u64;
            served[u] += queues[u].serve_with(mu, t, |delay| {
                if counted {
                    let k = delay as usize;
                    if hist.len() <= k {
                        hist.resize(k + 1, 0);
                    }
                    hist[k] += 1;
                    delay_sum[u] += delay;
                    delay_count[u] += 1;
                }
            });
            for _ in 0..arrivals[u] {
                queues[u].enqueue(params.packet_bits, t);
            }
            arrived[u] += arrivals[u] * params.packet_bits;
            if qos[u] {
                deficits[u] = update_virtual(deficits[u], scenario[u].qos_rate_bps, r);
            }
            total_backlog += queues[u].backlog_bits();
            total_deficit += deficits[u].deficit;
        }
        backlog_series.push(total_backlog);
        virtual_series.push(total_deficit);
    }

    let counted_slots = (horizon_slots - warmup) as f64;
    let mut unserved = Vec::new();
    for p in queues.iter().flat_map(|q| q.packets()) {
        let age = (horizon_slots - p.arrival_slot) as usize;
        if unserved.len() <= age {
            unserved.resize(age + 1, 0u64);
        }
        unserved[age] += 1;
    }
    let ll = low_latency_from_counts(&hist, &unserved, margin);
    let max_mean_delay = delay_sum
        .iter()
        .zip(&delay_count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s as f64 / c as f64)
        .fold(0.0, f64::max);
    let stability = if horizon >= MIN_STABILITY_SLOTS {
        let series: Vec<f64> = backlog_series.iter().map(|&b| b as f64).collect();
        Some(stability_check(&series)?)
    } else {
        None
    };

    Ok(MetricsTrace {
        policy,
        seed,
        horizon_slots,
        warmup_slots: warmup,
        slot_duration_s: tau,
        time_avg_power_sum_w: power_acc / counted_slots,
        per_user_time_avg_rate_bps: rate_acc.iter().map(|r| r / counted_slots).collect(),
        max_expected_queueing_delay_s: max_mean_delay * tau,
        p999_delay_s: histogram_quantile(&hist, 0.999).unwrap_or(0) as f64 * tau,
        low_latency_rate: ll.rate,
        low_latency_undefined: ll.undefined,
        stability,
        backlog_series,
        virtual_backlog_series: virtual_series,
        power_series,
        delay_histogram: hist,
        unserved_age_histogram: unserved,
        full_avg_rate_bps: rate_full.iter().map(|r| r / horizon_slots as f64).collect(),
        final_deficit: deficits.iter().map(|z| z.deficit).collect(),
        qos_target_bps: scenario.iter().map(|u| u.qos_rate_bps).collect(),
        qos,
        arrived_bits: arrived,
        served_bits: served,
        final_backlog_bits: queues.iter().map(|q| q.backlog_bits()).collect(),
    })
}
