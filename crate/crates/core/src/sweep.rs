//! Parameter sweeps over (axis value, policy, V, seed) cells, and their
//! CSV/JSON output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SystemParams};
use crate::policy::{Policy, UnknownPolicy};
use crate::sim::{run, MetricsTrace, SimError};

pub const CSV_HEADER: [&str; 11] = [
    "axis",
    "value",
    "policy",
    "v",
    "seed",
    "power_sum_w",
    "max_delay_s",
    "p999_delay_s",
    "avg_rate_bps",
    "low_latency_rate",
    "stable_flag",
];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown sweep axis `{0}` (expected rho, eta or v)")]
    UnknownAxis(String),
    #[error(transparent)]
    UnknownPolicy(#[from] UnknownPolicy),
    #[error("sweep needs at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cell {axis}={value} {policy} seed {seed}: {source}")]
    Run {
        axis: Axis,
        value: f64,
        policy: Policy,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode output: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Rho,
    Eta,
    V,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::Eta => "eta",
            Axis::V => "v",
        }
    }

    pub fn apply(self, params: &SystemParams, value: f64) -> SystemParams {
        let mut p = params.clone();
        match self {
            Axis::Rho => p.rate_threshold_bps = value,
            Axis::Eta => p.qos_rate_bps = value,
            Axis::V => p.v_weight = value,
        }
        p
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rho" => Ok(Axis::Rho),
            "eta" => Ok(Axis::Eta),
            "v" => Ok(Axis::V),
            _ => Err(SweepError::UnknownAxis(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub horizon: u64,
    /// Extra `V` values for the schemes that depend on `V`. Ignored when the
    /// axis itself is `v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_values: Option<Vec<f64>>,
}

impl SweepSpec {
    /// The reproduction sweep: rho over 5..9 Mb/s, all four policies, the
    /// optimized ones at three `V` values, five seeds.
    pub fn reproduction(horizon: u64) -> Self {
        Self {
            axis: Axis::Rho,
            values: vec![5e6, 6e6, 7e6, 8e6, 9e6],
            policies: Policy::ALL.to_vec(),
            seeds: (1..=5).collect(),
            horizon,
            v_values: Some(vec![1e5, 5e5, 1e6]),
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::Empty("axis value"));
        }
        if self.policies.is_empty() {
            return Err(SweepError::Empty("policy"));
        }
        if self.seeds.is_empty() {
            return Err(SweepError::Empty("seed"));
        }
        if matches!(&self.v_values, Some(v) if v.is_empty()) {
            return Err(SweepError::Empty("V value"));
        }
        Ok(())
    }

    /// Every `(value, policy, params, seed)` cell in output order.
    pub fn cells(&self, base: &SystemParams) -> Vec<(f64, Policy, SystemParams, u64)> {
        let mut out = Vec::new();
        for &value in &self.values {
            let at = self.axis.apply(base, value);
            for &policy in &self.policies {
                let vs = match &self.v_values {
                    Some(vs) if policy.uses_v() && self.axis != Axis::V => vs.clone(),
                    _ => vec![at.v_weight],
                };
                for v in vs {
                    let p = Axis::V.apply(&at, v);
                    for &seed in &self.seeds {
                        out.push((value, policy, p.clone(), seed));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub policy: Policy,
    pub v: f64,
    pub seed: u64,
    pub power_sum_w: f64,
    pub max_delay_s: f64,
    pub p999_delay_s: f64,
    pub avg_rate_bps: f64,
    pub low_latency_rate: f64,
    /// Empty when the horizon is too short for the stability comparison.
    pub stable_flag: Option<bool>,
}

impl SweepRow {
    pub fn from_trace(axis: Axis, value: f64, v: f64, t: &MetricsTrace) -> Self {
        Self {
            axis,
            value,
            policy: t.policy,
            v,
            seed: t.seed,
            power_sum_w: t.time_avg_power_sum_w,
            max_delay_s: t.max_expected_queueing_delay_s,
            p999_delay_s: t.p999_delay_s,
            avg_rate_bps: t.avg_rate_bps(),
            low_latency_rate: t.low_latency_rate,
            stable_flag: t.stability.map(|s| s.stable),
        }
    }
}

/// Mean and standard error over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanErr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanErr {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: Axis,
    pub value: f64,
    pub policy: Policy,
    pub v: f64,
    pub seeds: usize,
    pub power_sum_w: MeanErr,
    pub max_delay_s: MeanErr,
    pub p999_delay_s: MeanErr,
    pub avg_rate_bps: MeanErr,
    pub low_latency_rate: MeanErr,
    pub stable_fraction: Option<f64>,
}

pub fn run_sweep(spec: &SweepSpec, base: &SystemParams) -> Result<Vec<SweepRow>, SweepError> {
    spec.validate()?;
    base.validate()?;
    let cells = spec.cells(base);
    for (_, _, p, _) in &cells {
        p.validate()?;
    }
    cells
        .par_iter()
        .map(|(value, policy, p, seed)| {
            run(p, *policy, spec.horizon, *seed)
                .map(|t| SweepRow::from_trace(spec.axis, *value, p.v_weight, &t))
                .map_err(|source| SweepError::Run {
                    axis: spec.axis,
                    value: *value,
                    policy: *policy,
                    seed: *seed,
                    source,
                })
        })
        .collect()
}

/// Aggregate rows sharing `(value, policy, v)`, in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Axis, f64, Policy, f64)> = Vec::new();
    for r in rows {
        let k = (r.axis, r.value, r.policy, r.v);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(axis, value, policy, v)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.axis == axis && r.value == value && r.policy == policy && r.v == v)
                .collect();
            let col = |f: fn(&SweepRow) -> f64| MeanErr::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let flags: Vec<bool> = group.iter().filter_map(|r| r.stable_flag).collect();
            SummaryRow {
                axis,
                value,
                policy,
                v,
                seeds: group.len(),
                power_sum_w: col(|r| r.power_sum_w),
                max_delay_s: col(|r| r.max_delay_s),
                p999_delay_s: col(|r| r.p999_delay_s),
                avg_rate_bps: col(|r| r.avg_rate_bps),
                low_latency_rate: col(|r| r.low_latency_rate),
                stable_fraction: (!flags.is_empty())
                    .then(|| flags.iter().filter(|&&s| s).count() as f64 / flags.len() as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a SystemParams,
    spec: &'a SweepSpec,
    rows: &'a [SweepRow],
    summary: &'a [SummaryRow],
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SweepError> {
    fs::write(path, bytes).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String, SweepError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(|e| SweepError::Encode(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.axis.name().to_string(),
            r.value.to_string(),
            r.policy.name().to_string(),
            r.v.to_string(),
            r.seed.to_string(),
            r.power_sum_w.to_string(),
            r.max_delay_s.to_string(),
            r.p999_delay_s.to_string(),
            r.avg_rate_bps.to_string(),
            r.low_latency_rate.to_string(),
            r.stable_flag.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| SweepError::Encode(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SweepError::Encode(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SweepError::Encode(e.to_string()))
}

fn summary_to_csv(summary: &[SummaryRow]) -> Result<String, SweepError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| SweepError::Encode(e.to_string());
    w.write_record([
        "axis", "value", "policy", "v", "seeds", "power_sum_w", "power_sum_w_se", "max_delay_s", "max_delay_s_se",
        "p999_delay_s", "p999_delay_s_se", "avg_rate_bps", "avg_rate_bps_se", "low_latency_rate",
        "low_latency_rate_se", "stable_fraction",
    ])
    .map_err(enc)?;
    for s in summary {
        let mut rec = vec![
            s.axis.name().to_string(),
            s.value.to_string(),
            s.policy.name().to_string(),
            s.v.to_string(),
            s.seeds.to_string(),
        ];
        for m in [s.power_sum_w, s.max_delay_s, s.p999_delay_s, s.avg_rate_bps, s.low_latency_rate] {
            rec.push(m.mean.to_string());
            rec.push(m.stderr.to_string());
        }
        rec.push(s.stable_fraction.map(|f| f.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| SweepError::Encode(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SweepError::Encode(e.to_string()))
}

/// Write the sweep to `dir` and return the paths written.
///
/// CSV output is `sweep.csv`, `sweep_summary.csv` and the resolved
/// `config.toml`; JSON output is a single `sweep.json` with the config inline.
pub fn emit(
    rows: &[SweepRow],
    spec: &SweepSpec,
    base: &SystemParams,
    dir: &Path,
    format: Format,
) -> Result<Vec<PathBuf>, SweepError> {
    fs::create_dir_all(dir).map_err(|source| SweepError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let summary = summarize(rows);
    let mut written = Vec::new();
    match format {
        Format::Csv => {
            for (name, body) in [
                ("sweep.csv", rows_to_csv(rows)?),
                ("sweep_summary.csv", summary_to_csv(&summary)?),
                ("config.toml", base.to_toml_string()),
            ] {
                let path = dir.join(name);
                write_file(&path, body.as_bytes())?;
                written.push(path);
            }
        }
        Format::Json => {
            let report = JsonReport {
                config: base,
                spec,
                rows,
                summary: &summary,
            };
            let body = serde_json::to_string_pretty(&report).map_err(|e| SweepError::Encode(e.to_string()))?;
            let path = dir.join("sweep.json");
            write_file(&path, body.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SystemParams {
        SystemParams {
            n_users: 4,
            ..SystemParams::default()
        }
    }

    #[test]
    fn reproduction_cell_count() {
        let spec = SweepSpec::reproduction(10);
        assert_eq!(spec.cells(&tiny()).len(), 5 * (2 + 3 * 2) * 5);
    }

    #[test]
    fn single_cell() {
        let spec = SweepSpec {
            axis: Axis::Eta,
            values: vec![8e6],
            policies: vec![Policy::PMin],
            seeds: vec![3],
            horizon: 50,
            v_values: None,
        };
        let rows = run_sweep(&spec, &tiny()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].seed, 3);
        assert_eq!(rows[0].stable_flag, None);
    }

    #[test]
    fn v_axis_overrides_v_values() {
        let spec = SweepSpec {
            axis: Axis::V,
            values: vec![1e5, 1e6],
            policies: vec![Policy::OptOma],
            seeds: vec![1],
            horizon: 5,
            v_values: Some(vec![1.0, 2.0, 3.0]),
        };
        let cells = spec.cells(&tiny());
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].2.v_weight, 1e6);
    }

    #[test]
    fn names_and_errors() {
        assert_eq!("RHO".parse::<Axis>().unwrap(), Axis::Rho);
        assert!(matches!("power".parse::<Axis>(), Err(SweepError::UnknownAxis(_))));
        let mut spec = SweepSpec::reproduction(5);
        spec.seeds.clear();
        assert!(matches!(run_sweep(&spec, &tiny()), Err(SweepError::Empty("seed"))));
    }

    #[test]
    fn mean_and_stderr() {
        let m = MeanErr::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanErr::of(&[4.0]).stderr, 0.0);
    }

    #[test]
    fn csv_has_eleven_columns_and_round_trips() {
        let spec = SweepSpec {
            axis: Axis::Rho,
            values: vec![7e6],
            policies: vec![Policy::OptOma, Policy::PMax],
            seeds: vec![1, 2],
            horizon: 30,
            v_values: None,
        };
        let rows = run_sweep(&spec, &tiny()).unwrap();
        let text = rows_to_csv(&rows).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rd.headers().unwrap().len(), 11);
        let back: Vec<csv::StringRecord> = rd.records().collect::<Result<_, _>>().unwrap();
        assert_eq!(back.len(), rows.len());
        for (rec, row) in back.iter().zip(&rows) {
            assert_eq!(rec.len(), 11);
            assert_eq!(rec[5].parse::<f64>().unwrap(), row.power_sum_w);
            assert_eq!(rec[8].parse::<f64>().unwrap(), row.avg_rate_bps);
            assert_eq!(rec[2].parse::<Policy>().unwrap(), row.policy);
        }
    }
}
