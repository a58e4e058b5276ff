//! Path loss and Rayleigh fading.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;
use thiserror::Error;

use crate::config::{PathLossLogBase, SystemParams, UserProfile};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelState {
    /// Normalized gain `|h|^2 / (B N0)` in 1/W.
    pub gain_per_watt: f64,
    /// `|fast fading|^2`, exponential with unit mean.
    pub fading_power: f64,
    pub path_loss_db: f64,
}

pub fn path_loss_db(distance_m: f64, base: PathLossLogBase) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    let log = match base {
        PathLossLogBase::Ten => distance_m.log10(),
        PathLossLogBase::Natural => distance_m.ln(),
    };
    Ok(35.3 + 37.6 * log)
}

/// Large-scale gain per watt for a user: `10^(-PL/10) / (B N0)`.
///
/// Multiplying by a fading draw gives the per-slot `gain_per_watt`.
pub fn mean_gain_per_watt(distance_m: f64, params: &SystemParams) -> Result<f64, ChannelError> {
    let pl = path_loss_db(distance_m, params.path_loss_log_base)?;
    Ok(10f64.powf(-pl / 10.0) / (params.bandwidth_hz * params.noise_w_per_hz()))
}

/// Channel state for a given fading power (used by tests and by the sampler).
pub fn channel_with_fading(
    profile: &UserProfile,
    params: &SystemParams,
    fading_power: f64,
) -> Result<ChannelState, ChannelError> {
    let pl = path_loss_db(profile.distance_m, params.path_loss_log_base)?;
    let mean = 10f64.powf(-pl / 10.0) / (params.bandwidth_hz * params.noise_w_per_hz());
    Ok(ChannelState {
        gain_per_watt: fading_power * mean,
        fading_power,
        path_loss_db: pl,
    })
}

/// Squared magnitude of a CN(0,1) draw.
pub fn sample_fading_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

pub fn sample_channel<R: Rng + ?Sized>(
    profile: &UserProfile,
    params: &SystemParams,
    rng: &mut R,
) -> Result<ChannelState, ChannelError> {
    let fading = sample_fading_power(rng);
    channel_with_fading(profile, params, fading)
}
