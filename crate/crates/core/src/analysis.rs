//! Closed-form SEP approximations for the differential receiver.
//!
//! ψ_k is modelled as Gaussian around φ_k with variance σ²_ψ. At high SNR
//! amplitude errors are neglected, so only same-class pairs contribute to
//! the union bound, each with probability Q(|φ_i - φ_j| / 2σ_ψ).

use crate::channel::ChannelRealization;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::phase::wrap;
use crate::phase_noise::{OscMode, PhaseNoiseConfig};
use crate::specfun::q_function;

/// What stands in for the previous symbol's amplitude r_{k-1} in σ²_ψ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PastAmplitude {
    /// r_{k-1} = E, the average symbol energy, so the term is 1/E².
    #[default]
    Energy,
    /// r_{k-1} = √E, so the term is 1/E.
    RootEnergy,
}

impl PastAmplitude {
    pub fn amplitude(self, avg_energy: f64) -> f64 {
        match self {
            PastAmplitude::Energy => avg_energy,
            PastAmplitude::RootEnergy => avg_energy.sqrt(),
        }
    }
}

/// σ²_ψ for current and previous amplitudes r_k, r_{k-1}:
/// CLO σ²_Δt + σ²_Δr + (1/M²) Σ 1/|h_m|² (1/r_k² + 1/r_{k-1}²),
/// SLO the same with σ²_Δr / M.
pub fn sigma_psi_sq(config: &PhaseNoiseConfig, channel: &ChannelRealization, r_k: f64, r_km1: f64) -> Result<f64> {
    if !(r_k > 0.0 && r_km1 > 0.0) {
        return Err(Error::Domain(format!("amplitudes must be positive, got {r_k} and {r_km1}")));
    }
    let m = channel.antennas() as f64;
    let awgn = channel.inverse_gain_sum() / (m * m) * (1.0 / (r_k * r_k) + 1.0 / (r_km1 * r_km1));
    let rx = match config.osc_mode {
        OscMode::Clo => config.var_rx,
        OscMode::Slo => config.var_rx / m,
    };
    Ok(config.var_tx + rx + awgn)
}

/// Q(|wrap(φ_i - φ_j)| / 2σ). A zero σ gives 0, the limit for distinct
/// phases.
pub fn pairwise_phase_error(phi_i: f64, phi_j: f64, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::Domain(format!("σ_ψ must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(q_function(wrap(phi_i - phi_j).abs() / (2.0 * sigma)))
}

/// Union bound on the SEP for one channel realization. Not clamped to 1.
pub fn union_bound_sep(
    constellation: &Constellation,
    config: &PhaseNoiseConfig,
    channel: &ChannelRealization,
    past: PastAmplitude,
) -> Result<f64> {
    let r_km1 = past.amplitude(constellation.avg_energy());
    let mut total = 0.0;
    for class in constellation.classes() {
        let sigma = sigma_psi_sq(config, channel, class.amplitude, r_km1)?.sqrt();
        total += class_pair_sum(&class.phases, sigma)?;
    }
    Ok(total / constellation.len() as f64)
}

/// The M → ∞, SNR → ∞ limit of the union bound: σ̌² = σ²_Δt + σ²_Δr for
/// CLO and σ²_Δt for SLO.
pub fn error_floor(constellation: &Constellation, config: &PhaseNoiseConfig) -> Result<f64> {
    let var = match config.osc_mode {
        OscMode::Clo => config.var_tx + config.var_rx,
        OscMode::Slo => config.var_tx,
    };
    let sigma = var.sqrt();
    let mut total = 0.0;
    for class in constellation.classes() {
        total += class_pair_sum(&class.phases, sigma)?;
    }
    Ok(total / constellation.len() as f64)
}

fn class_pair_sum(phases: &[f64], sigma: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (i, &a) in phases.iter().enumerate() {
        for (j, &b) in phases.iter().enumerate() {
            if i != j {
                sum += pairwise_phase_error(a, b, sigma)?;
            }
        }
    }
    Ok(sum)
}
