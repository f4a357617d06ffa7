//! Two-stage differential receiver.
//!
//! Stage one picks the amplitude class from t_k = ‖y_k‖² alone (MAP over the
//! noncentral χ² likelihood). Stage two averages the per-antenna phase
//! differences ∠y_{m,k} − ∠y_{m,k−1} into ψ_k and picks the nearest phase
//! of the detected class. With a common oscillator the antennas are first
//! combined coherently and the block is detected as a single-antenna one.

use num_complex::Complex64;

use crate::channel::{ChannelRealization, ReceivedBlock};
use crate::constellation::{AmplitudeClass, Constellation};
use crate::error::{Error, Result};
use crate::phase::{circular_distance, wrap};
use crate::phase_noise::OscMode;
use crate::specfun::{log_ncx2_pdf_with, LikelihoodForm};

/// Phase decisions closer than this are treated as ties.
pub const PHASE_TIE_TOLERANCE: f64 = 1e-12;

/// How the per-antenna phase differences are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseAveraging {
    /// Differences are re-centred on their circular mean before the
    /// arithmetic mean is taken, so a cluster straddling ±π averages to ±π
    /// instead of collapsing towards 0.
    #[default]
    Circular,
    /// Wrap each difference to (-π, π], then take the plain mean.
    WrapThenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectorOptions {
    pub likelihood: LikelihoodForm,
    pub averaging: PhaseAveraging,
}

/// Receiver-side knowledge for one block.
#[derive(Debug, Clone)]
pub struct DetectorContext {
    constellation: Constellation,
    channel: ChannelRealization,
    osc_mode: OscMode,
    options: DetectorOptions,
    /// Per class: (noncentrality r²‖h‖², ln prior).
    class_terms: Vec<(f64, f64)>,
}

impl DetectorContext {
    pub fn new(constellation: Constellation, channel: ChannelRealization, osc_mode: OscMode) -> Result<Self> {
        Self::with_options(constellation, channel, osc_mode, DetectorOptions::default())
    }

    pub fn with_options(
        constellation: Constellation,
        channel: ChannelRealization,
        osc_mode: OscMode,
        options: DetectorOptions,
    ) -> Result<Self> {
        if !(channel.norm_sq() > 0.0) {
            return Err(Error::Domain("detector needs ‖h‖ > 0".into()));
        }
        let class_terms = constellation
            .classes()
            .iter()
            .map(|c| (c.amplitude * c.amplitude * channel.norm_sq(), c.prior.ln()))
            .collect();
        Ok(Self {
            constellation,
            channel,
            osc_mode,
            options,
            class_terms,
        })
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn channel(&self) -> &ChannelRealization {
        &self.channel
    }

    pub fn osc_mode(&self) -> OscMode {
        self.osc_mode
    }

    pub fn options(&self) -> DetectorOptions {
        self.options
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedSymbol {
    pub amplitude_hat: f64,
    pub phase_hat: f64,
    pub point_index: usize,
}

/// ψ_k together with the number of antennas dropped for a zero sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStatistic {
    pub psi: f64,
    pub excluded: usize,
}

/// Index of the MAP amplitude class for one received vector. The
/// likelihood has 2·len(y) degrees of freedom, so a combined scalar sample
/// is handled the same way as the full vector.
pub fn amplitude_class(y: &[Complex64], ctx: &DetectorContext) -> usize {
    let t: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let half_dof = y.len() as u32;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &(lambda, log_prior)) in ctx.class_terms.iter().enumerate() {
        let score = log_ncx2_pdf_with(ctx.options.likelihood, t, half_dof, lambda) + log_prior;
        // Strict comparison keeps the smaller amplitude on ties.
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

pub fn amplitude_map(y: &[Complex64], ctx: &DetectorContext) -> f64 {
    ctx.constellation.classes()[amplitude_class(y, ctx)].amplitude
}

pub fn phase_statistic(y_k: &[Complex64], y_km1: &[Complex64], averaging: PhaseAveraging) -> PhaseStatistic {
    debug_assert_eq!(y_k.len(), y_km1.len());
    let angles = |y: &[Complex64]| y.iter().map(angle_or_nan).collect::<Vec<_>>();
    let mut diffs = Vec::with_capacity(y_k.len());
    let psi = differential_phase(y_k, y_km1, &angles(y_k), &angles(y_km1), averaging, &mut diffs);
    PhaseStatistic {
        psi,
        excluded: y_k.len() - diffs.len(),
    }
}

/// ∠v, or NaN for an exactly zero sample.
fn angle_or_nan(v: &Complex64) -> f64 {
    if v.norm_sqr() == 0.0 {
        f64::NAN
    } else {
        v.arg()
    }
}

/// ψ from precomputed sample angles; `diffs` is scratch space and ends up
/// holding the wrapped differences that were used.
fn differential_phase(
    y_k: &[Complex64],
    y_km1: &[Complex64],
    ang_k: &[f64],
    ang_km1: &[f64],
    averaging: PhaseAveraging,
    diffs: &mut Vec<f64>,
) -> f64 {
    diffs.clear();
    let mut resultant = Complex64::new(0.0, 0.0);
    for m in 0..ang_k.len() {
        let (a, b) = (ang_k[m], ang_km1[m]);
        if a.is_nan() || b.is_nan() {
            continue;
        }
        diffs.push(wrap(a - b));
        resultant += y_k[m] * y_km1[m].conj();
    }
    if diffs.is_empty() {
        return 0.0;
    }
    let n = diffs.len() as f64;
    match averaging {
        PhaseAveraging::WrapThenMean => diffs.iter().sum::<f64>() / n,
        PhaseAveraging::Circular => {
            if diffs.len() == 1 {
                return diffs[0];
            }
            // Any centre inside the cluster gives the same result; the
            // amplitude-weighted resultant is one that costs a single atan2.
            let centre = if resultant.norm_sqr() > 0.0 { resultant.arg() } else { diffs[0] };
            let offset = diffs.iter().map(|d| wrap(d - centre)).sum::<f64>() / n;
            wrap(centre + offset)
        }
    }
}

/// Position (within the class) of the phase nearest to ψ on the circle.
/// Ties go to the smaller phase.
pub fn phase_ml_position(psi: f64, class: &AmplitudeClass) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    // phases are sorted ascending, so the first of a tied pair is the smaller
    for (i, &p) in class.phases.iter().enumerate() {
        let d = circular_distance(psi, p);
        if d < best_d - PHASE_TIE_TOLERANCE {
            best_d = d;
            best = i;
        }
    }
    best
}

pub fn phase_ml(psi: f64, class: &AmplitudeClass) -> f64 {
    class.phases[phase_ml_position(psi, class)]
}

/// Projects every y_k onto h/‖h‖. The result is a single-antenna block
/// whose effective gain is ‖h‖; the noise variance stays 2.
pub fn clo_combine(block: &ReceivedBlock, channel: &ChannelRealization) -> Result<ReceivedBlock> {
    if block.antennas() != channel.antennas() {
        return Err(Error::Usage(format!(
            "block has {} antennas, channel {}",
            block.antennas(),
            channel.antennas()
        )));
    }
    let inv_norm = 1.0 / channel.norm();
    let combined = (0..block.len())
        .map(|k| {
            block
                .at_time(k)
                .iter()
                .zip(channel.gains())
                .map(|(y, h)| h.conj() * y)
                .sum::<Complex64>()
                * inv_norm
        })
        .collect();
    ReceivedBlock::from_time_major(1, block.len(), combined)
}

/// Detected symbols for indices 1..n; index 0 is the reference.
pub fn detect_block(block: &ReceivedBlock, ctx: &DetectorContext) -> Result<Vec<DetectedSymbol>> {
    match ctx.osc_mode {
        OscMode::Clo => {
            let combined = clo_combine(block, &ctx.channel)?;
            Ok(detect_differential(&combined, ctx))
        }
        OscMode::Slo => {
            if block.antennas() != ctx.channel.antennas() {
                return Err(Error::Usage(format!(
                    "block has {} antennas, channel {}",
                    block.antennas(),
                    ctx.channel.antennas()
                )));
            }
            Ok(detect_differential(block, ctx))
        }
    }
}

fn detect_differential(block: &ReceivedBlock, ctx: &DetectorContext) -> Vec<DetectedSymbol> {
    let antennas = block.antennas();
    let n = block.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return out;
    }
    let mut prev: Vec<f64> = block.at_time(0).iter().map(angle_or_nan).collect();
    let mut cur = vec![0.0; antennas];
    let mut diffs = Vec::with_capacity(antennas);
    for k in 1..n {
        let y = block.at_time(k);
        for (c, v) in cur.iter_mut().zip(y) {
            *c = angle_or_nan(v);
        }
        let psi = differential_phase(y, block.at_time(k - 1), &cur, &prev, ctx.options.averaging, &mut diffs);
        let class_idx = amplitude_class(y, ctx);
        let class = &ctx.constellation.classes()[class_idx];
        let pos = phase_ml_position(psi, class);
        out.push(DetectedSymbol {
            amplitude_hat: class.amplitude,
            phase_hat: class.phases[pos],
            point_index: class.members[pos],
        });
        std::mem::swap(&mut prev, &mut cur);
    }
    out
}
