//! Discrete Wiener phase noise for the transmitter and receiver oscillators.
//!
//! θ_{m,k} = θ^t_k + θ^r_{m,k}. The transmitter walk is always shared by
//! every antenna. The receiver walk is one process for a common local
//! oscillator (CLO) and M independent processes for separate oscillators
//! (SLO). Phases are stored unwrapped.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OscMode {
    /// One local oscillator drives every receive chain.
    Clo,
    /// Each receive chain has its own oscillator.
    Slo,
}

impl OscMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OscMode::Clo => "clo",
            OscMode::Slo => "slo",
        }
    }
}

impl std::str::FromStr for OscMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clo" => Ok(OscMode::Clo),
            "slo" => Ok(OscMode::Slo),
            other => Err(Error::Usage(format!("unknown oscillator mode '{other}'"))),
        }
    }
}

/// Innovation variances (rad²) and oscillator layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseConfig {
    pub var_tx: f64,
    pub var_rx: f64,
    pub osc_mode: OscMode,
}

impl PhaseNoiseConfig {
    pub fn new(var_tx: f64, var_rx: f64, osc_mode: OscMode) -> Result<Self> {
        if !(var_tx >= 0.0 && var_rx >= 0.0 && var_tx.is_finite() && var_rx.is_finite()) {
            return Err(Error::Config(format!(
                "innovation variances must be finite and nonnegative (tx {var_tx}, rx {var_rx})"
            )));
        }
        Ok(Self {
            var_tx,
            var_rx,
            osc_mode,
        })
    }

    /// Noise-free oscillators.
    pub fn ideal(osc_mode: OscMode) -> Self {
        Self {
            var_tx: 0.0,
            var_rx: 0.0,
            osc_mode,
        }
    }
}

/// Realized phases θ_{m,k} (rad), M antennas by n symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    antennas: usize,
    len: usize,
    // time-major: theta[k * antennas + m]
    theta: Vec<f64>,
}

impl PhaseTrajectory {
    /// Builds a trajectory from explicit time-major samples.
    pub fn from_time_major(antennas: usize, len: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != antennas * len {
            return Err(Error::Usage(format!(
                "trajectory needs {} samples, got {}",
                antennas * len,
                theta.len()
            )));
        }
        Ok(Self {
            antennas,
            len,
            theta,
        })
    }

    /// Constant phase on every antenna.
    pub fn constant(antennas: usize, len: usize, phase: f64) -> Self {
        Self {
            antennas,
            len,
            theta: vec![phase; antennas * len],
        }
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.theta[k * self.antennas + m]
    }

    /// Phases of all antennas at time `k`.
    #[inline]
    pub fn at_time(&self, k: usize) -> &[f64] {
        &self.theta[k * self.antennas..(k + 1) * self.antennas]
    }

    /// Row `m` of the M×n matrix.
    pub fn row(&self, m: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |k| self.get(m, k))
    }
}

/// Uniform on (-π, π].
fn uniform_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    PI - 2.0 * PI * rng.random::<f64>()
}

pub fn sample_trajectory<R: Rng + ?Sized>(
    config: &PhaseNoiseConfig,
    antennas: usize,
    len: usize,
    rng: &mut R,
) -> PhaseTrajectory {
    let sd_tx = config.var_tx.sqrt();
    let sd_rx = config.var_rx.sqrt();
    let rx_walks = match config.osc_mode {
        OscMode::Clo => 1,
        OscMode::Slo => antennas,
    };

    let mut tx = uniform_phase(rng);
    let mut rx: Vec<f64> = (0..rx_walks).map(|_| uniform_phase(rng)).collect();
    let mut theta = Vec::with_capacity(antennas * len);
    for k in 0..len {
        if k > 0 {
            let d: f64 = StandardNormal.sample(rng);
            tx += sd_tx * d;
            for walk in rx.iter_mut() {
                let d: f64 = StandardNormal.sample(rng);
                *walk += sd_rx * d;
            }
        }
        match config.osc_mode {
            OscMode::Clo => theta.extend(std::iter::repeat_n(tx + rx[0], antennas)),
            OscMode::Slo => theta.extend(rx.iter().map(|r| tx + r)),
        }
    }
    PhaseTrajectory {
        antennas,
        len,
        theta,
    }
}

/// M×M covariance of the per-symbol increment vector θ_k - θ_{k-1}.
pub fn process_covariance(config: &PhaseNoiseConfig, antennas: usize) -> DMatrix<f64> {
    let diag = config.var_tx + config.var_rx;
    let off = match config.osc_mode {
        OscMode::Clo => diag,
        OscMode::Slo => config.var_tx,
    };
    DMatrix::from_fn(antennas, antennas, |i, j| if i == j { diag } else { off })
}
