use proptest::prelude::*;

use hybridma::config::{NomaSolver, SystemParams};
use hybridma::noma::{pair_metric, solve_noma_pair};
use hybridma::oma::{oma_metric, solve_oma, UserState};
use hybridma::oracle::{grid_min_noma, grid_min_oma, GridSpec};
use hybridma::pairing::{build_preferences, pair_users, total_metric, Matching};
use hybridma::policy::{policy_opt_hybrid, policy_opt_oma, policy_pmax, policy_pmin, Policy};
use hybridma::sim::run;
use hybridma::verify::tolerance;

fn user() -> impl Strategy<Value = UserState> {
    (0.0f64..6.0, 0u64..100_000, 0.0f64..1e8, any::<bool>()).prop_map(|(lg, q, z, small_z)| UserState {
        gamma: 10f64.powf(lg),
        backlog_bits: q,
        deficit: if small_z { z * 1e-8 } else { z },
        qos: true,
        rate_threshold_bps: 7e6,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn oma_never_beaten_by_grid(s in user()) {
        let p = SystemParams::default();
        let d = solve_oma(&s, &p);
        let (_, g) = grid_min_oma(&s, &p, GridSpec::budget(1000, &p));
        let mine = oma_metric(d.power_w, &s, &p);
        prop_assert!(mine <= g + tolerance(&p, g), "mine {mine} grid {g}");
        prop_assert!((0.0..=p.power_budget_w).contains(&d.power_w));
        prop_assert!(d.metric <= 0.0);
    }

    #[test]
    fn joint_pair_never_beaten_by_grid(a in user(), b in user()) {
        let p = SystemParams { noma_solver: NomaSolver::ActiveSet, ..SystemParams::default() };
        let (si, sj) = if a.gamma <= b.gamma { (a, b) } else { (b, a) };
        let d = solve_noma_pair(&si, &sj, &p);
        let (_, _, g) = grid_min_noma(&si, &sj, &p, GridSpec::budget(1000, &p));
        prop_assert!(d.metric <= g + tolerance(&p, g), "mine {} grid {g}", d.metric);
    }

    #[test]
    fn pair_decisions_respect_power_order(a in user(), b in user()) {
        for solver in [NomaSolver::Sequential, NomaSolver::ActiveSet] {
            let p = SystemParams { noma_solver: solver, ..SystemParams::default() };
            let d = solve_noma_pair(&a, &b, &p);
            prop_assert!(d.power_sic_w <= d.power_non_sic_w);
            prop_assert!(d.power_sic_w >= 0.0 && d.power_non_sic_w <= p.power_budget_w);
            if !d.useless {
                let (si, sj) = if d.non_sic_is_first { (a, b) } else { (b, a) };
                let m = pair_metric(d.power_non_sic_w, d.power_sic_w, &si, &sj, &p);
                prop_assert!((m - d.metric).abs() <= 1e-9 * m.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pairing_valid_and_no_worse_than_oma(states in prop::collection::vec(user(), 1..16)) {
        let p = SystemParams::default();
        let prefs = build_preferences(&states, &p);
        let m = pair_users(&prefs).unwrap();
        m.validate().unwrap();
        let ours = total_metric(&m, &prefs).unwrap();
        let oma = total_metric(&Matching::identity(states.len()), &prefs).unwrap();
        prop_assert!(ours <= oma);
    }

    #[test]
    fn hybrid_metric_below_oma_below_zero(states in prop::collection::vec(user(), 2..12)) {
        let p = SystemParams::default();
        let h = policy_opt_hybrid(&states, &p).unwrap();
        let o = policy_opt_oma(&states, &p);
        prop_assert!(h.metric <= o.metric + 1e-12 * o.metric.abs());
        prop_assert!(o.metric <= 0.0);
    }

    #[test]
    fn pmin_below_pmax(states in prop::collection::vec(user(), 1..20)) {
        let p = SystemParams::default();
        let lo = policy_pmin(&states, &p);
        let hi = policy_pmax(&states, &p);
        for (a, b) in lo.powers_w.iter().zip(&hi.powers_w) {
            prop_assert!(a <= b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_conserve_bits(seed in 0u64..1000, n in 2usize..8, pol in 0usize..4) {
        let p = SystemParams { n_users: n, ..SystemParams::default() };
        let t = run(&p, Policy::ALL[pol], 400, seed).unwrap();
        for u in 0..n {
            prop_assert_eq!(t.arrived_bits[u], t.served_bits[u] + t.final_backlog_bits[u]);
        }
        prop_assert!((0.0..=1.0).contains(&t.low_latency_rate));
    }
}

#[test]
fn pmax_power_is_budget_times_active_links() {
    let p = SystemParams {
        n_users: 8,
        ..SystemParams::default()
    };
    let t = run(&p, Policy::PMax, 3000, 17).unwrap();
    for &s in &t.power_series {
        let links = s / p.power_budget_w;
        assert_eq!(links, links.round());
    }
}
