//! System configuration shared by every stage of the pipeline.
//!
//! The JSON form uses the short physical symbols as keys (`f_c`, `b`, `f_s`,
//! `n`, `t`, `t_g`, ...). Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical channel parameters plus the learning hyperparameters that the
/// criterion needs (`k`, `alpha`, training SNR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Carrier frequency, Hz.
    #[serde(rename = "f_c")]
    pub carrier_hz: f64,
    /// Bandwidth, Hz.
    #[serde(rename = "b")]
    pub bandwidth_hz: f64,
    /// Sampling rate, Hz.
    #[serde(rename = "f_s")]
    pub sample_rate_hz: f64,
    /// Number of data subcarriers.
    #[serde(rename = "n")]
    pub subcarriers: usize,
    /// Symbol duration, s.
    #[serde(rename = "t")]
    pub symbol_duration: f64,
    /// Guard interval, s.
    #[serde(rename = "t_g")]
    pub guard_interval: f64,
    /// Maximum path delay, s.
    pub tau_max: f64,
    /// Maximum Doppler scaling factor.
    pub a_max: f64,
    /// Number of propagation paths.
    #[serde(rename = "p")]
    pub paths: usize,
    /// Worst-sub-channel amplification factor.
    pub k: f64,
    /// Balance between performance and convergence terms in Stage II.
    pub alpha: f64,
    pub snr_train_db: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SystemConfig {
    /// Full-scale parameter set (M = 128, M' = 228).
    pub fn paper() -> Self {
        Self {
            carrier_hz: 15_000.0,
            bandwidth_hz: 10_000.0,
            sample_rate_hz: 10_000.0,
            subcarriers: 70,
            symbol_duration: 0.0128,
            guard_interval: 0.010,
            tau_max: 0.010,
            a_max: 0.001,
            paths: 20,
            k: 10.0,
            alpha: 0.01,
            snr_train_db: 20.0,
            seed: 0,
        }
    }

    /// Reduced desk-scale set (M = 16, M' = 24, N = 10).
    ///
    /// Carrier and bandwidth keep their ratios to the sampling rate. The
    /// Doppler bound is scaled by the sampling-rate ratio (10x) so that the
    /// Doppler spread relative to the subcarrier spacing stays comparable to
    /// the full-scale set.
    pub fn desk() -> Self {
        Self {
            carrier_hz: 1_500.0,
            bandwidth_hz: 1_000.0,
            sample_rate_hz: 1_000.0,
            subcarriers: 10,
            symbol_duration: 0.016,
            guard_interval: 0.008,
            tau_max: 0.008,
            a_max: 0.01,
            paths: 4,
            ..Self::paper()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<Dims> {
        let finite = [
            self.carrier_hz,
            self.bandwidth_hz,
            self.sample_rate_hz,
            self.symbol_duration,
            self.guard_interval,
            self.tau_max,
            self.a_max,
            self.k,
            self.alpha,
            self.snr_train_db,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        if !(self.bandwidth_hz > 0.0 && self.sample_rate_hz >= self.bandwidth_hz) {
            return Err(Error::Config("require f_s >= b > 0".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if self.tau_max < 0.0 || self.tau_max > self.guard_interval {
            return Err(Error::Config("require 0 <= tau_max <= t_g".into()));
        }
        if !(0.0..1.0).contains(&self.a_max) {
            return Err(Error::Config("require 0 <= a_max < 1".into()));
        }
        if self.k < 1.0 {
            return Err(Error::Config("require k >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("require 0 <= alpha <= 1".into()));
        }
        derive_dims(self)
    }

    pub fn dims(&self) -> Result<Dims> {
        derive_dims(self)
    }
}

/// Derived sample counts: `m` transmitted samples, `m_prime` received
/// samples, `l = m_prime - m` guard samples, and `n` subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub m_prime: usize,
    pub l: usize,
    pub n: usize,
}

/// Floor that tolerates products such as `10000 * 0.0128` landing a few ulps
/// below the integer they represent.
fn sample_floor(x: f64) -> usize {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as usize
    } else {
        x.floor() as usize
    }
}

pub fn derive_dims(config: &SystemConfig) -> Result<Dims> {
    if !(config.symbol_duration > 0.0) {
        return Err(Error::Config("symbol duration must be positive".into()));
    }
    if config.guard_interval < 0.0 || !config.guard_interval.is_finite() {
        return Err(Error::Config("guard interval must be non-negative".into()));
    }
    if !(config.sample_rate_hz > 0.0) {
        return Err(Error::Config("sampling rate must be positive".into()));
    }
    let fs = config.sample_rate_hz;
    let m = sample_floor(fs * config.symbol_duration);
    let m_prime = sample_floor(fs * config.symbol_duration + fs * config.guard_interval);
    let n = config.subcarriers;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if n > m {
        return Err(Error::Config(format!("n = {n} exceeds m = {m}")));
    }
    Ok(Dims {
        m,
        m_prime,
        l: m_prime - m,
        n,
    })
}

/// Symbol and per-sample noise powers (linear).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_s_sq: f64,
    pub sigma_n_sq: f64,
}

impl NoiseModel {
    pub fn snr_linear(&self) -> f64 {
        self.sigma_s_sq / self.sigma_n_sq
    }

    /// `sigma_n^2 / sigma_s^2`, the weight of the demodulator noise term.
    pub fn noise_to_signal(&self) -> f64 {
        self.sigma_n_sq / self.sigma_s_sq
    }
}

/// Unit symbol power; the SNR sets the noise power only.
pub fn snr_from_db(snr_db: f64) -> NoiseModel {
    NoiseModel {
        sigma_s_sq: 1.0,
        sigma_n_sq: 10f64.powf(-snr_db / 10.0),
    }
}
