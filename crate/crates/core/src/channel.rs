//! SIMO phase-noise channel y_{m,k} = e^{jθ_{m,k}} h_m x_k + w_{m,k},
//! w ~ CN(0, 2).

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::phase_noise::PhaseTrajectory;

/// Draws with ‖h‖² below this fraction of M are redrawn.
pub const DEGENERATE_GAIN_FRACTION: f64 = 1e-9;

/// Path gains, fixed over a trial and known to the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: Vec<Complex64>,
    norm_sq: f64,
}

impl ChannelRealization {
    pub fn from_gains(h: Vec<Complex64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Usage("channel needs at least one antenna".into()));
        }
        let norm_sq = h.iter().map(|g| g.norm_sqr()).sum();
        Ok(Self { h, norm_sq })
    }

    /// h = (1, …, 1).
    pub fn unit(antennas: usize) -> Self {
        Self {
            h: vec![Complex64::new(1.0, 0.0); antennas],
            norm_sq: antennas as f64,
        }
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.h
    }

    pub fn antennas(&self) -> usize {
        self.h.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    /// Σ_m 1/|h_m|².
    pub fn inverse_gain_sum(&self) -> f64 {
        self.h.iter().map(|g| 1.0 / g.norm_sqr()).sum()
    }
}

/// A quasi-static Rayleigh draw plus the number of degenerate draws discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub channel: ChannelRealization,
    pub redraws: u32,
}

/// h_m iid CN(0, 1), redrawn while ‖h‖² < 1e-9·M or any gain is exactly zero.
pub fn draw_fading<R: Rng + ?Sized>(antennas: usize, rng: &mut R) -> FadingDraw {
    let sd = std::f64::consts::FRAC_1_SQRT_2;
    let mut redraws = 0;
    loop {
        let h: Vec<Complex64> = (0..antennas)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(sd * re, sd * im)
            })
            .collect();
        let channel = ChannelRealization::from_gains(h).expect("antennas ≥ 1");
        let degenerate = channel.norm_sq < DEGENERATE_GAIN_FRACTION * antennas as f64
            || channel.h.iter().any(|g| g.norm_sqr() == 0.0);
        if !degenerate {
            return FadingDraw { channel, redraws };
        }
        redraws += 1;
    }
}

/// Whether AWGN is added. `Off` exists for deterministic tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    On,
    Off,
}

/// Received samples, M antennas by n symbols, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    antennas: usize,
    len: usize,
    y: Vec<Complex64>,
}

impl ReceivedBlock {
    pub fn from_time_major(antennas: usize, len: usize, y: Vec<Complex64>) -> Result<Self> {
        if y.len() != antennas * len || antennas == 0 {
            return Err(Error::Usage(format!(
                "received block {antennas}×{len} needs {} samples, got {}",
                antennas * len,
                y.len()
            )));
        }
        Ok(Self { antennas, len, y })
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

    /// y_k across antennas.
    #[inline]
    pub fn at_time(&self, k: usize) -> &[Complex64] {
        &self.y[k * self.antennas..(k + 1) * self.antennas]
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> Complex64 {
        self.y[k * self.antennas + m]
    }
}

pub fn transmit<R: Rng + ?Sized>(
    x: &[Complex64],
    trajectory: &PhaseTrajectory,
    channel: &ChannelRealization,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let antennas = channel.antennas();
    if trajectory.antennas() != antennas || trajectory.len() != x.len() {
        return Err(Error::Usage(format!(
            "dimension mismatch: {} symbols, trajectory {}×{}, channel {}",
            x.len(),
            trajectory.antennas(),
            trajectory.len(),
            antennas
        )));
    }
    let mut y = Vec::with_capacity(antennas * x.len());
    for (k, &xk) in x.iter().enumerate() {
        for (&theta, &h) in trajectory.at_time(k).iter().zip(channel.gains()) {
            let (s, c) = theta.sin_cos();
            let mut sample = Complex64::new(c, s) * h * xk;
            if noise == NoiseMode::On {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                sample += Complex64::new(re, im);
            }
            y.push(sample);
        }
    }
    Ok(ReceivedBlock {
        antennas,
        len: x.len(),
        y,
    })
}

/// Average symbol energy E for a per-symbol SNR of E/2 (noise variance 2).
/// With `hold_receive_snr` the transmit energy is divided by M.
pub fn symbol_energy_for_snr(snr_db: f64, antennas: usize, hold_receive_snr: bool) -> f64 {
    let energy = 2.0 * 10f64.powf(snr_db / 10.0);
    if hold_receive_snr {
        energy / antennas as f64
    } else {
        energy
    }
}
