//! Acceptance suite. Prints one PASS/FAIL line per criterion followed by the
//! numbers behind it, and exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hybridma::config::{NomaSolver, SystemParams};
use hybridma::oma::UserState;
use hybridma::pairing::{build_preferences, pair_users};
use hybridma::policy::Policy;
use hybridma::queue::{backlog_recurrence, TransmitQueue};
use hybridma::sim::{run, MetricsTrace};
use hybridma::verify::{check_matching, check_noma, check_oma, random_state, StateRanges};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const HORIZON: u64 = 100_000;
const V_VALUES: [f64; 3] = [1e5, 5e5, 1e6];
const RHO_VALUES: [f64; 3] = [7e6, 8e6, 9e6];

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    details: Vec<String>,
}

fn report(o: &Outcome) {
    println!("criterion {} {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.title);
    for d in &o.details {
        println!("    {d}");
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn closed_form_oma() -> Outcome {
    let p = SystemParams::default();
    let t = Instant::now();
    let c = check_oma(10_000, 101, &p, 1000);
    let el = t.elapsed();
    Outcome {
        id: 1,
        title: "OMA closed form matches the grid oracle on every state",
        pass: c.failures == 0 && el < Duration::from_secs(120),
        details: vec![format!(
            "{}/{} within tolerance, worst excess {:.3e}, {}",
            c.states - c.failures,
            c.states,
            c.worst_excess,
            secs(el)
        )],
    }
}

fn closed_form_pair() -> Outcome {
    let p = SystemParams::default();
    let ranges = StateRanges::default();
    let t = Instant::now();
    let c = check_noma(10_000, 202, &p, 1000, &ranges);
    let el = t.elapsed();
    let mut details = vec![
        format!(
            "sequential: {}/{} within tolerance ({:.2}%), {}",
            c.within_tolerance,
            c.states,
            100.0 * c.pass_fraction(),
            secs(el)
        ),
        format!(
            "sequential relative gap: median {:.3e} p90 {:.3e} p99 {:.3e} max {:.3e}",
            c.median_gap, c.p90_gap, c.p99_gap, c.max_gap
        ),
        format!(
            "sequential put the weak user in outage where the reference served it in {} states",
            c.weak_user_dropped
        ),
    ];
    let joint = SystemParams {
        noma_solver: NomaSolver::ActiveSet,
        ..p.clone()
    };
    let j = check_noma(10_000, 202, &joint, 1000, &ranges);
    details.push(format!(
        "joint active-set solver (not the default): {}/{} within tolerance, median gap {:.3e}, max {:.3e}",
        j.within_tolerance, j.states, j.median_gap, j.max_gap
    ));
    Outcome {
        id: 2,
        title: "sequential pair solution matches the 2-D oracle (>= 99.9%, median gap < 1%)",
        pass: c.pass_fraction() >= 0.999 && c.median_gap < 0.01 && el < Duration::from_secs(600),
        details,
    }
}

fn matching_quality() -> Outcome {
    let p = SystemParams::default();
    let c = check_matching(100, 8, 303, &p, &StateRanges::default()).expect("matching check");
    Outcome {
        id: 3,
        title: "pairing is a valid involution, never worse than all-OMA, mean gap to exhaustive < 5%",
        pass: c.valid == c.trials && c.no_worse_than_identity == c.trials && c.mean_gap < 0.05,
        details: vec![format!(
            "{}/{} valid, {}/{} no worse than identity, {} optimal, gap mean {:.3e} max {:.3e}",
            c.valid, c.trials, c.no_worse_than_identity, c.trials, c.optimal, c.mean_gap, c.max_gap
        )],
    }
}

fn queue_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let lambda_max: u64 = rng.random_range(0..=12);
        let mu_max: u64 = rng.random_range(0..=3000);
        let mut q = TransmitQueue::new();
        let mut direct = 0u64;
        for t in 0..1000 {
            let packets = rng.random_range(0..=lambda_max);
            let mu = rng.random_range(0..=mu_max);
            q.serve_with(mu, t, |_| {});
            for _ in 0..packets {
                q.enqueue(160, t);
            }
            direct = backlog_recurrence(direct, mu, packets * 160);
            if q.backlog_bits() != direct {
                mismatches += 1;
                break;
            }
        }
    }
    Outcome {
        id: 4,
        title: "packet FIFO backlog equals the bit recurrence exactly",
        pass: mismatches == 0,
        details: vec![format!("10000 traces of 1000 slots, {mismatches} mismatching traces")],
    }
}

fn pairing_scaling() -> Outcome {
    let p = SystemParams::default();
    let ranges = StateRanges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let ns = [10usize, 20, 40, 80];
    let mut points = Vec::new();
    let mut details = Vec::new();
    for &n in &ns {
        let params = SystemParams { n_users: n, ..p.clone() };
        let tables: Vec<_> = (0..40)
            .map(|_| {
                let states: Vec<UserState> = (0..n).map(|_| random_state(&mut rng, &params, &ranges)).collect();
                build_preferences(&states, &params)
            })
            .collect();
        let reps = (20_000 / (n * n)).max(3);
        let mut samples = Vec::new();
        for _ in 0..7 {
            let t = Instant::now();
            for _ in 0..reps {
                for tab in &tables {
                    std::hint::black_box(pair_users(tab).expect("pairing"));
                }
            }
            samples.push(t.elapsed().as_secs_f64() / (reps * tables.len()) as f64);
        }
        // Background load only ever adds time, so the fastest sample is the cleanest.
        let per_call = samples.iter().copied().fold(f64::INFINITY, f64::min);
        details.push(format!("N={n}: {:.2} us per call", per_call * 1e6));
        points.push(((n as f64).ln(), per_call.ln()));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    details.push(format!("log-log slope {slope:.3}"));
    Outcome {
        id: 8,
        title: "pairing wall-clock grows at most quadratically (slope <= 2.3)",
        pass: slope <= 2.3,
        details,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Cell {
    policy: Policy,
    v_bits: u64,
    rho_bits: u64,
    seed: u64,
}

fn cell(policy: Policy, v: f64, rho: f64, seed: u64) -> Cell {
    Cell {
        policy,
        v_bits: v.to_bits(),
        rho_bits: rho.to_bits(),
        seed,
    }
}

/// All simulation runs the trend, QoS and latency criteria need.
fn simulate_all() -> (HashMap<Cell, MetricsTrace>, Duration) {
    let base = SystemParams::default();
    let mut cells = Vec::new();
    for seed in SEEDS {
        for v in V_VALUES {
            for pol in [Policy::OptHybrid, Policy::OptOma] {
                cells.push(cell(pol, v, base.rate_threshold_bps, seed));
            }
        }
        for pol in [Policy::PMax, Policy::PMin] {
            cells.push(cell(pol, base.v_weight, base.rate_threshold_bps, seed));
        }
        for rho in RHO_VALUES {
            for pol in [Policy::OptHybrid, Policy::OptOma] {
                let c = cell(pol, base.v_weight, rho, seed);
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
        }
    }
    let t = Instant::now();
    let traces: Vec<(Cell, MetricsTrace)> = cells
        .par_iter()
        .map(|&c| {
            let p = SystemParams {
                v_weight: f64::from_bits(c.v_bits),
                rate_threshold_bps: f64::from_bits(c.rho_bits),
                ..base.clone()
            };
            (c, run(&p, c.policy, HORIZON, c.seed).expect("simulation"))
        })
        .collect();
    (traces.into_iter().collect(), t.elapsed())
}

fn seed_mean(runs: &HashMap<Cell, MetricsTrace>, policy: Policy, v: f64, rho: f64, f: impl Fn(&MetricsTrace) -> f64) -> f64 {
    SEEDS.iter().map(|&s| f(&runs[&cell(policy, v, rho, s)])).sum::<f64>() / SEEDS.len() as f64
}

fn qos_bound(runs: &HashMap<Cell, MetricsTrace>) -> Outcome {
    let base = SystemParams::default();
    let mut identity_violations = 0;
    let mut checked = 0;
    for t in runs.values() {
        for u in 0..t.qos.len() {
            if !t.qos[u] {
                continue;
            }
            checked += 1;
            let bound = t.qos_target_bps[u] - t.final_deficit[u] / t.horizon_slots as f64;
            // summation order differs between the two sides; allow rounding only
            if t.full_avg_rate_bps[u] < bound - 1e-9 * t.qos_target_bps[u] {
                identity_violations += 1;
            }
        }
    }
    let eta = base.qos_rate_bps;
    let mut worst_ratio: f64 = 0.0;
    let mut details = Vec::new();
    for seed in SEEDS {
        let t = &runs[&cell(Policy::OptHybrid, base.v_weight, base.rate_threshold_bps, seed)];
        let ratio = t.final_deficit.iter().fold(0.0f64, |m, &z| m.max(z)) / t.horizon_slots as f64 / eta;
        let mean_rate = t.full_avg_rate_bps.iter().sum::<f64>() / t.full_avg_rate_bps.len() as f64;
        details.push(format!(
            "seed {seed}: max_l Z_l(T)/T = {:.3} eta, mean delivered rate {:.3e} b/s",
            ratio, mean_rate
        ));
        worst_ratio = worst_ratio.max(ratio);
    }
    details.insert(
        0,
        format!("rate >= eta - Z(T)/T held for {}/{} (run, user) pairs", checked - identity_violations, checked),
    );
    Outcome {
        id: 5,
        title: "time-average rate bound holds per run, and Z(T)/T < 0.05 eta for opt hybrid at defaults",
        pass: identity_violations == 0 && worst_ratio < 0.05,
        details,
    }
}

fn trends(runs: &HashMap<Cell, MetricsTrace>, elapsed: Duration) -> Outcome {
    let base = SystemParams::default();
    let rho0 = base.rate_threshold_bps;
    let power = |pol, v, rho| seed_mean(runs, pol, v, rho, |t| t.time_avg_power_sum_w);
    let delay = |pol, v| seed_mean(runs, pol, v, rho0, |t| t.max_expected_queueing_delay_s);
    let ll = |pol, rho| seed_mean(runs, pol, base.v_weight, rho, |t| t.low_latency_rate);
    let mut details = Vec::new();
    let mut ok = true;

    let pmin = power(Policy::PMin, base.v_weight, rho0);
    let pmax = power(Policy::PMax, base.v_weight, rho0);
    let h_hi = power(Policy::OptHybrid, 1e6, rho0);
    let a1 = pmin <= h_hi;
    ok &= a1;
    details.push(format!(
        "(a) pMin {pmin:.3} W <= hybrid(V=1e6) {h_hi:.3} W: {}",
        verdict(a1)
    ));
    for v in V_VALUES {
        let h = power(Policy::OptHybrid, v, rho0);
        let o = power(Policy::OptOma, v, rho0);
        let a = h <= o && o <= pmax;
        ok &= a;
        details.push(format!(
            "(a) V={v:.0e}: hybrid {h:.3} W <= OMA {o:.3} W <= pMax {pmax:.3} W: {}",
            verdict(a)
        ));
    }
    for pol in [Policy::OptHybrid, Policy::OptOma] {
        let ps: Vec<f64> = V_VALUES.iter().map(|&v| power(pol, v, rho0)).collect();
        let ds: Vec<f64> = V_VALUES.iter().map(|&v| delay(pol, v)).collect();
        let b = ps.windows(2).all(|w| w[1] < w[0]) && ds.windows(2).all(|w| w[1] > w[0]);
        ok &= b;
        details.push(format!(
            "(b) {pol} over V {:?}: power {:.3?} W, max mean delay {} s: {}",
            V_VALUES,
            ps,
            ds.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", "),
            verdict(b)
        ));
    }
    for rho in RHO_VALUES {
        let h = ll(Policy::OptHybrid, rho);
        let o = ll(Policy::OptOma, rho);
        let c = h >= o;
        ok &= c;
        details.push(format!(
            "(c) rho={:.0} Mb/s: low-latency rate hybrid {h:.4} >= OMA {o:.4}: {}",
            rho / 1e6,
            verdict(c)
        ));
    }
    let stable: usize = runs.values().filter(|t| t.stability.is_some_and(|s| s.stable)).count();
    details.push(format!("backlog stability flag set on {stable}/{} runs", runs.len()));
    details.push(format!("simulation wall-clock {}", secs(elapsed)));
    ok &= elapsed < Duration::from_secs(1800);
    Outcome {
        id: 6,
        title: "power, delay and low-latency trends across schemes, V and rho (5 seeds)",
        pass: ok,
        details,
    }
}

fn verdict(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn headline_latency(runs: &HashMap<Cell, MetricsTrace>) -> Outcome {
    let base = SystemParams::default();
    let target = base.delay_margin().expect("margin");
    let p999 = seed_mean(runs, Policy::OptHybrid, 1e5, base.rate_threshold_bps, |t| t.p999_delay_s);
    let pass = p999 < target;
    let mut details = vec![format!(
        "hybrid V=1e5: seed-mean 99.9th percentile delay {:.3e} s against {:.1e} s",
        p999, target
    )];
    if !pass {
        details.push("slot duration sensitivity (hybrid, V=1e5, seed 1):".to_string());
        let rows: Vec<String> = [5e-5, 1e-4, 2e-4]
            .par_iter()
            .map(|&tau| {
                let p = SystemParams {
                    v_weight: 1e5,
                    slot_duration_s: tau,
                    ..base.clone()
                };
                let t = run(&p, Policy::OptHybrid, HORIZON, 1).expect("simulation");
                format!(
                    "  tau_c={:.2} ms: p99.9 {:.3e} s, low-latency rate {:.4}, mean power {:.2} W, stable {:?}",
                    tau * 1e3,
                    t.p999_delay_s,
                    t.low_latency_rate,
                    t.time_avg_power_sum_w,
                    t.stability.map(|s| s.stable)
                )
            })
            .collect();
        details.extend(rows);
    }
    Outcome {
        id: 7,
        title: "99.9th percentile queueing delay below 0.9 ms for opt hybrid at V=1e5",
        pass,
        details,
    }
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    for f in [queue_exactness, closed_form_oma, matching_quality, pairing_scaling, closed_form_pair] {
        let o = f();
        report(&o);
        outcomes.push(o);
    }
    let (runs, elapsed) = simulate_all();
    for o in [qos_bound(&runs), trends(&runs, elapsed), headline_latency(&runs)] {
        report(&o);
        outcomes.push(o);
    }
    outcomes.sort_by_key(|o| o.id);
    println!("summary:");
    for o in &outcomes {
        println!("  criterion {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    if outcomes.iter().all(|o| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
