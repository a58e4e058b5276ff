use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hybridma::config::{generate_scenario, SystemParams};
use hybridma::policy::Policy;
use hybridma::sim::{run, MetricsTrace};
use hybridma::sweep::{emit, run_sweep, Axis, Format, SweepSpec};
use hybridma::verify::{check_matching, check_noma, check_oma, StateRanges};

#[derive(Parser)]
#[command(name = "hybridma", version, about = "Hybrid OMA/NOMA downlink scheduling simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON parameter file; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a parameter, e.g. `--set v_weight=1e6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy for one seed.
    Run {
        #[arg(long, default_value = "opt-hybrid")]
        policy: Policy,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        horizon: u64,
        /// Directory for the summary, per-slot series and resolved config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: Format,
    },
    /// Simulate a grid of (axis value, policy, V, seed) cells in parallel.
    Sweep {
        #[arg(long, default_value = "rho")]
        sweep_axis: Axis,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        sweep_values: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        policy: Vec<Policy>,
        /// Single seed; ignored when `--seeds` is given.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
        /// V values for the optimized schemes.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        v_values: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        horizon: u64,
        /// Use the full reproduction sweep (rho 5..9 Mb/s, all policies,
        /// three V values, five seeds). Explicit lists still take precedence.
        #[arg(long)]
        reproduction: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Compare the solvers and the matching with brute force.
    Verify {
        #[arg(long, default_value_t = 10_000)]
        oma_states: usize,
        #[arg(long, default_value_t = 10_000)]
        noma_states: usize,
        #[arg(long, default_value_t = 100)]
        matching_trials: usize,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the user layout generated for a seed.
    Scenario {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "json")]
        format: Format,
    },
}

type BoxError = Box<dyn std::error::Error>;

fn load_params(common: &Common) -> Result<SystemParams, BoxError> {
    let base = match &common.config {
        Some(path) => SystemParams::from_path(path)?,
        None => SystemParams::default(),
    };
    let params = base.with_overrides(&common.overrides)?;
    params.validate()?;
    Ok(params)
}

#[derive(Serialize)]
struct RunReport<'a> {
    config: &'a SystemParams,
    horizon: u64,
    trace: &'a MetricsTrace,
}

fn write(path: &Path, body: &str) -> Result<(), BoxError> {
    fs::write(path, body).map_err(|e| format!("cannot write {}: {e}", path.display()).into())
}

fn emit_run(trace: &MetricsTrace, params: &SystemParams, horizon: u64, dir: &Path, format: Format) -> Result<(), BoxError> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let report = RunReport {
        config: params,
        horizon,
        trace,
    };
    match format {
        Format::Json => write(&dir.join("run.json"), &serde_json::to_string_pretty(&report)?)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "policy",
                "v",
                "seed",
                "horizon",
                "power_sum_w",
                "max_delay_s",
                "p999_delay_s",
                "avg_rate_bps",
                "low_latency_rate",
                "stable_flag",
            ])?;
            w.write_record([
                trace.policy.to_string(),
                params.v_weight.to_string(),
                trace.seed.to_string(),
                horizon.to_string(),
                trace.time_avg_power_sum_w.to_string(),
                trace.max_expected_queueing_delay_s.to_string(),
                trace.p999_delay_s.to_string(),
                trace.avg_rate_bps().to_string(),
                trace.low_latency_rate.to_string(),
                trace.stability.map(|s| s.stable.to_string()).unwrap_or_default(),
            ])?;
            write(&dir.join("run.csv"), &String::from_utf8(w.into_inner()?)?)?;
            write(&dir.join("config.toml"), &params.to_toml_string())?;
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slot", "backlog_bits", "virtual_backlog", "power_sum_w"])?;
    for (t, ((b, z), p)) in trace
        .backlog_series
        .iter()
        .zip(&trace.virtual_backlog_series)
        .zip(&trace.power_series)
        .enumerate()
    {
        w.write_record([t.to_string(), b.to_string(), z.to_string(), p.to_string()])?;
    }
    write(&dir.join("series.csv"), &String::from_utf8(w.into_inner()?)?)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<bool, BoxError> {
    let params = load_params(&cli.common)?;
    match cli.command {
        Command::Run {
            policy,
            seed,
            horizon,
            out,
            format,
        } => {
            let trace = run(&params, policy, horizon, seed)?;
            match out {
                Some(dir) => emit_run(&trace, &params, horizon, &dir, format)?,
                None => {
                    let report = RunReport {
                        config: &params,
                        horizon,
                        trace: &trace,
                    };
                    println!("{}", serde_json::to_string_pretty(&report)?);
                }
            }
        }
        Command::Sweep {
            sweep_axis,
            sweep_values,
            policy,
            seed,
            seeds,
            v_values,
            horizon,
            reproduction,
            out,
            format,
        } => {
            let mut spec = if reproduction {
                SweepSpec::reproduction(horizon)
            } else {
                SweepSpec {
                    axis: sweep_axis,
                    values: Vec::new(),
                    policies: Policy::ALL.to_vec(),
                    seeds: vec![seed],
                    horizon,
                    v_values: None,
                }
            };
            if !reproduction || !sweep_values.is_empty() {
                spec.axis = sweep_axis;
                spec.values = sweep_values;
            }
            if !policy.is_empty() {
                spec.policies = policy;
            }
            if !seeds.is_empty() {
                spec.seeds = seeds;
            }
            if !v_values.is_empty() {
                spec.v_values = Some(v_values);
            }
            let rows = run_sweep(&spec, &params)?;
            for path in emit(&rows, &spec, &params, &out, format)? {
                println!("{}", path.display());
            }
        }
        Command::Verify {
            oma_states,
            noma_states,
            matching_trials,
            grid,
            seed,
        } => {
            let ranges = StateRanges::default();
            let oma = check_oma(oma_states, seed, &params, grid);
            println!(
                "oma: {}/{} within tolerance, worst excess {:.3e}",
                oma.states - oma.failures,
                oma.states,
                oma.worst_excess
            );
            let noma = check_noma(noma_states, seed, &params, grid, &ranges);
            println!(
                "noma ({:?}): {}/{} within tolerance, relative gap median {:.3e} p90 {:.3e} p99 {:.3e} max {:.3e}, weak user dropped {}",
                params.noma_solver,
                noma.within_tolerance,
                noma.states,
                noma.median_gap,
                noma.p90_gap,
                noma.p99_gap,
                noma.max_gap,
                noma.weak_user_dropped
            );
            let m = check_matching(matching_trials, 8, seed, &params, &ranges)?;
            println!(
                "matching: {}/{} valid, {}/{} no worse than identity, {} optimal, gap mean {:.3e} max {:.3e}",
                m.valid, m.trials, m.no_worse_than_identity, m.trials, m.optimal, m.mean_gap, m.max_gap
            );
            return Ok(oma.failures == 0
                && noma.within_tolerance == noma.states
                && m.valid == m.trials
                && m.no_worse_than_identity == m.trials);
        }
        Command::Scenario { seed, format } => {
            let users = generate_scenario(&params, seed);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&users)?),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    w.write_record(["user", "distance_m", "rate_threshold_bps", "qos_rate_bps"])?;
                    for (i, u) in users.iter().enumerate() {
                        w.write_record([
                            i.to_string(),
                            u.distance_m.to_string(),
                            u.rate_threshold_bps.to_string(),
                            u.qos_rate_bps.to_string(),
                        ])?;
                    }
                    w.flush()?;
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
