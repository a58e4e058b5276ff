//! System parameters, user placement and config-file handling.
//!
//! Every other module reads its constants from [`SystemParams`]. The struct is
//! immutable once validated and can be shared freely between simulation runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stream used for user placement. Slot dynamics use [`DYNAMICS_STREAM`].
pub(crate) const SCENARIO_STREAM: u64 = 0;
pub(crate) const DYNAMICS_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("queueing delay margin e2e_bound_s - tti_s = {0} s is not positive")]
    NonPositiveMargin(f64),
    #[error("unknown config field `{0}`")]
    UnknownField(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Logarithm used by the path-loss model `35.3 + 37.6 log(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PathLossLogBase {
    #[default]
    #[serde(rename = "10")]
    Ten,
    #[serde(rename = "e")]
    Natural,
}

/// How a fixed NOMA pair is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NomaSolver {
    /// Pair total from the weak user's state, then the best split of it.
    #[default]
    Sequential,
    /// Exact joint minimum over both powers.
    ActiveSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub n_users: usize,
    pub power_budget_w: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub blocklength_factor: f64,
    pub v_weight: f64,
    pub slot_duration_s: f64,
    pub packet_bits: u64,
    pub arrival_min: u64,
    pub arrival_max: u64,
    pub cell_radius_m: f64,
    pub e2e_bound_s: f64,
    pub tti_s: f64,
    /// Users carrying a time-average rate constraint. `None` means every user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qos_user_set: Option<Vec<usize>>,
    /// Instantaneous rate below which a link is in outage (rho).
    pub rate_threshold_bps: f64,
    /// Long-term average rate target (eta).
    pub qos_rate_bps: f64,
    #[serde(default)]
    pub path_loss_log_base: PathLossLogBase,
    #[serde(default)]
    pub noma_solver: NomaSolver,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n_users: 40,
            power_budget_w: 3.0,
            bandwidth_hz: 20e6,
            noise_psd_dbm_hz: -173.0,
            blocklength_factor: 0.9,
            v_weight: 5e5,
            slot_duration_s: 1e-4,
            packet_bits: 160,
            arrival_min: 5,
            arrival_max: 10,
            cell_radius_m: 50.0,
            e2e_bound_s: 1e-3,
            tti_s: 1e-4,
            qos_user_set: None,
            rate_threshold_bps: 7e6,
            qos_rate_bps: 8.5e6,
            path_loss_log_base: PathLossLogBase::Ten,
            noma_solver: NomaSolver::Sequential,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be finite and > 0, got {v}")))
            }
        }
        if self.n_users == 0 {
            return Err(invalid("n_users", "must be at least 1"));
        }
        positive("power_budget_w", self.power_budget_w)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("slot_duration_s", self.slot_duration_s)?;
        positive("cell_radius_m", self.cell_radius_m)?;
        positive("rate_threshold_bps", self.rate_threshold_bps)?;
        if !self.noise_psd_dbm_hz.is_finite() {
            return Err(invalid("noise_psd_dbm_hz", "must be finite"));
        }
        if !(self.blocklength_factor > 0.0 && self.blocklength_factor <= 1.0) {
            return Err(invalid("blocklength_factor", "must lie in (0, 1]"));
        }
        if !(self.v_weight.is_finite() && self.v_weight >= 0.0) {
            return Err(invalid("v_weight", "must be finite and >= 0"));
        }
        if !(self.qos_rate_bps.is_finite() && self.qos_rate_bps >= 0.0) {
            return Err(invalid("qos_rate_bps", "must be finite and >= 0"));
        }
        if self.packet_bits == 0 {
            return Err(invalid("packet_bits", "must be at least 1"));
        }
        if self.arrival_min > self.arrival_max {
            return Err(invalid("arrival_min", "must not exceed arrival_max"));
        }
        if let Some(set) = &self.qos_user_set {
            if let Some(&bad) = set.iter().find(|&&u| u >= self.n_users) {
                return Err(invalid(
                    "qos_user_set",
                    format!("user index {bad} out of range for {} users", self.n_users),
                ));
            }
        }
        self.delay_margin()?;
        Ok(())
    }

    /// Queueing delay margin `D_max - T_t` in seconds.
    pub fn delay_margin(&self) -> Result<f64, ConfigError> {
        let margin = self.e2e_bound_s - self.tti_s;
        if margin > 0.0 && margin.is_finite() {
            Ok(margin)
        } else {
            Err(ConfigError::NonPositiveMargin(margin))
        }
    }

    /// Delay margin expressed in whole slots.
    pub fn delay_margin_slots(&self) -> Result<u64, ConfigError> {
        let slots = self.delay_margin()? / self.slot_duration_s;
        // 0.9 ms / 0.1 ms is 8.999... in binary floating point
        Ok((slots + 1e-9).floor() as u64)
    }

    /// Noise spectral density in W/Hz.
    pub fn noise_w_per_hz(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz - 30.0) / 10.0)
    }

    pub fn is_qos_user(&self, user: usize) -> bool {
        match &self.qos_user_set {
            None => true,
            Some(set) => set.contains(&user),
        }
    }

    /// Per-user QoS membership flags.
    pub fn qos_mask(&self) -> Vec<bool> {
        (0..self.n_users).map(|u| self.is_qos_user(u)).collect()
    }

    /// Bandwidth share of one OMA user, scaled by the blocklength factor.
    pub(crate) fn oma_prefactor(&self) -> f64 {
        self.blocklength_factor * self.bandwidth_hz / self.n_users as f64
    }

    /// Bandwidth share of a NOMA pair member (two OMA slices).
    pub(crate) fn noma_prefactor(&self) -> f64 {
        2.0 * self.oma_prefactor()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let params: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let params: Self =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    /// Load a `.json` or `.toml` config. Missing fields are an error; the file
    /// must name every parameter except the optional ones.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SystemParams always serializes")
    }

    /// Apply `key=value` overrides on top of these parameters. Values are
    /// parsed as JSON when possible (numbers, lists, quoted strings) and as a
    /// bare string otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let obj = doc.as_object_mut().expect("params serialize to an object");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let known = [
                "n_users",
                "power_budget_w",
                "bandwidth_hz",
                "noise_psd_dbm_hz",
                "blocklength_factor",
                "v_weight",
                "slot_duration_s",
                "packet_bits",
                "arrival_min",
                "arrival_max",
                "cell_radius_m",
                "e2e_bound_s",
                "tti_s",
                "qos_user_set",
                "rate_threshold_bps",
                "qos_rate_bps",
                "path_loss_log_base",
                "noma_solver",
            ];
            if !known.contains(&key) {
                return Err(ConfigError::UnknownField(key.to_string()));
            }
            let value = serde_json::from_str(raw.trim())
                .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
            obj.insert(key.to_string(), value);
        }
        let params: Self =
            serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub distance_m: f64,
    pub rate_threshold_bps: f64,
    pub qos_rate_bps: f64,
}

/// Place `n_users` uniformly (by area) over the cell disk.
///
/// The result depends only on `params` and `seed`.
pub fn generate_scenario(params: &SystemParams, seed: u64) -> Vec<UserProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCENARIO_STREAM);
    (0..params.n_users)
        .map(|_| {
            // (0, 1] so the distance never collapses to zero
            let u: f64 = 1.0 - rng.random::<f64>();
            UserProfile {
                distance_m: params.cell_radius_m * u.sqrt(),
                rate_threshold_bps: params.rate_threshold_bps,
                qos_rate_bps: params.qos_rate_bps,
            }
        })
        .collect()
}

/// Free-function form of [`SystemParams::delay_margin`].
pub fn delay_margin(params: &SystemParams) -> Result<f64, ConfigError> {
    params.delay_margin()
}
