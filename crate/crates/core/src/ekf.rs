//! Pilot-aided extended Kalman filter phase tracker, the coherent baseline.
//!
//! The state is the vector of receive phases θ_k (one entry per antenna, or
//! a single entry after coherent combining with a common oscillator). The
//! measurement is (Re y_k, Im y_k) with unit noise per real component.
//!
//! With R = I the two Jacobian rows of antenna m are (-Im a_m, Re a_m) at
//! column m, so HᵀH = diag(|a_m|²) and Hᵀ(z - ẑ) = Im(conj(a_m) y_m). The
//! update below therefore works with M×M matrices only, while the covariance
//! is still propagated in Joseph form.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{ChannelRealization, ReceivedBlock};
use crate::constellation::Constellation;
use crate::detector::clo_combine;
use crate::error::{Error, Result};
use crate::phase_noise::{process_covariance, OscMode, PhaseNoiseConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub theta_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl EkfState {
    pub fn new(theta_hat: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != theta_hat.len() || p.ncols() != theta_hat.len() {
            return Err(Error::Usage(format!(
                "state of length {} needs a square covariance of that size, got {}×{}",
                theta_hat.len(),
                p.nrows(),
                p.ncols()
            )));
        }
        Ok(Self { theta_hat, p })
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// θ̂ unchanged, P ← P + Σ.
    pub fn predict(&mut self, sigma: &DMatrix<f64>) {
        self.p += sigma;
    }

    /// Measurement update with known (pilot or decided) symbol `x`.
    /// Returns `false` and leaves the state alone when the result would not
    /// be finite.
    pub fn update(&mut self, y: &[Complex64], x: Complex64, gains: &[Complex64]) -> bool {
        let n = self.dim();
        debug_assert!(y.len() == n && gains.len() == n);
        let mut d = DVector::zeros(n);
        let mut g = DVector::zeros(n);
        for m in 0..n {
            let (s, c) = self.theta_hat[m].sin_cos();
            let a = gains[m] * x * Complex64::new(c, s);
            d[m] = a.norm_sqr();
            g[m] = (a.conj() * y[m]).im;
        }
        if !g.iter().all(|v| v.is_finite()) || d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return false;
        }
        // P⁺ = P - P (D⁻¹ + P)⁻¹ P, which equals (I - KH)P for the optimal gain.
        let mut w = self.p.clone();
        for m in 0..n {
            w[(m, m)] += 1.0 / d[m];
        }
        let Some(chol) = w.cholesky() else {
            return false;
        };
        let post = &self.p - &self.p * chol.solve(&self.p);
        // K(z - ẑ) = P⁺ Hᵀ (z - ẑ), KH = P⁺ D, K Kᵀ = P⁺ D P⁺.
        let step = &post * &g;
        let post_d = &post * DMatrix::from_diagonal(&d);
        let i_kh = DMatrix::identity(n, n) - &post_d;
        let mut joseph = &i_kh * &self.p * i_kh.transpose() + &post_d * &post;
        symmetrize(&mut joseph);
        if !step.iter().all(|v| v.is_finite()) || !joseph.iter().all(|v| v.is_finite()) {
            return false;
        }
        self.theta_hat += step;
        self.p = joseph;
        true
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Pilot at every index k ≥ offset with (k - offset) divisible by period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotSchedule {
    period: usize,
    offset: usize,
}

impl PilotSchedule {
    pub fn new(period: usize, offset: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config("pilot period must be at least 1".into()));
        }
        Ok(Self { period, offset })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn is_pilot(&self, k: usize) -> bool {
        k >= self.offset && (k - self.offset) % self.period == 0
    }

    /// Pilots among the first `n` indices.
    pub fn count(&self, n: usize) -> usize {
        if n <= self.offset {
            0
        } else {
            (n - self.offset).div_ceil(self.period)
        }
    }
}

/// Pilot value: the point nearest to √E on the positive real axis.
pub fn pilot_symbol(constellation: &Constellation) -> usize {
    constellation.nearest(Complex64::new(constellation.avg_energy().sqrt(), 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfRun {
    /// (time index, detected point) for every non-pilot index.
    pub detected: Vec<(usize, usize)>,
    pub pilots: usize,
    pub skipped_updates: usize,
    pub state: EkfState,
}

/// Everything the tracker knows apart from the received samples.
#[derive(Debug, Clone)]
pub struct EkfSetup<'a> {
    pub constellation: &'a Constellation,
    pub channel: &'a ChannelRealization,
    pub phase_noise: &'a PhaseNoiseConfig,
    pub schedule: PilotSchedule,
    /// Constellation index sent at every pilot slot.
    pub pilot: usize,
    /// θ at k = 0 per antenna, standing in for a block-leading pilot.
    pub initial_phase: &'a [f64],
}

/// Tracks and detects a block. A common oscillator runs a scalar filter on
/// the coherently combined samples; separate oscillators run the full
/// M-dimensional filter.
pub fn run_ekf_block(block: &ReceivedBlock, setup: &EkfSetup<'_>) -> Result<EkfRun> {
    let antennas = setup.channel.antennas();
    if block.antennas() != antennas || setup.initial_phase.len() != antennas {
        return Err(Error::Usage(format!(
            "block has {} antennas, channel {}, initial phase {}",
            block.antennas(),
            antennas,
            setup.initial_phase.len()
        )));
    }
    match setup.phase_noise.osc_mode {
        OscMode::Clo => {
            let combined = clo_combine(block, setup.channel)?;
            let gains = [Complex64::new(setup.channel.norm(), 0.0)];
            let var = setup.phase_noise.var_tx + setup.phase_noise.var_rx;
            let sigma = DMatrix::from_element(1, 1, var);
            let state = EkfState::new(DVector::from_element(1, setup.initial_phase[0]), sigma.clone())?;
            Ok(track(&combined, &gains, &sigma, state, setup))
        }
        OscMode::Slo => {
            let sigma = process_covariance(setup.phase_noise, antennas);
            let state = EkfState::new(DVector::from_column_slice(setup.initial_phase), sigma.clone())?;
            Ok(track(block, setup.channel.gains(), &sigma, state, setup))
        }
    }
}

/// The filter loop for an arbitrary state dimension, exposed so that the
/// scalar and vector forms can be compared directly.
pub fn track(
    block: &ReceivedBlock,
    gains: &[Complex64],
    sigma: &DMatrix<f64>,
    mut state: EkfState,
    setup: &EkfSetup<'_>,
) -> EkfRun {
    let constellation = setup.constellation;
    let pilot = constellation.point(setup.pilot);
    let norm_sq: f64 = gains.iter().map(|h| h.norm_sqr()).sum();
    let mut detected = Vec::with_capacity(block.len());
    let mut pilots = 0;
    let mut skipped_updates = 0;
    for k in 0..block.len() {
        if k > 0 {
            state.predict(sigma);
        }
        let y = block.at_time(k);
        let x = if setup.schedule.is_pilot(k) {
            pilots += 1;
            pilot
        } else {
            let combined: Complex64 = y
                .iter()
                .zip(gains)
                .zip(state.theta_hat.iter())
                .map(|((v, h), &th)| h.conj() * v * Complex64::from_polar(1.0, -th))
                .sum::<Complex64>()
                / norm_sq;
            let idx = constellation.nearest(combined);
            detected.push((k, idx));
            constellation.point(idx)
        };
        if !state.update(y, x, gains) {
            skipped_updates += 1;
        }
    }
    EkfRun {
        detected,
        pilots,
        skipped_updates,
        state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_fading, transmit, NoiseMode};
    use crate::phase_noise::{sample_trajectory, PhaseTrajectory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(theta: f64, p: f64) -> EkfState {
        EkfState::new(DVector::from_element(1, theta), DMatrix::from_element(1, 1, p)).unwrap()
    }

    #[test]
    fn predict_examples() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.02, 0.01, 0.01, 0.02]);
        let p0 = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let mut s = EkfState::new(DVector::from_row_slice(&[0.3, -1.0]), p0.clone()).unwrap();
        s.predict(&DMatrix::zeros(2, 2));
        assert_eq!(s.p, p0);
        let mut z = EkfState::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        z.predict(&sigma);
        assert_eq!(z.p, sigma);
        for _ in 0..7 {
            s.predict(&sigma);
        }
        assert!((&s.p - (&p0 + &sigma * 7.0)).abs().max() < 1e-15);
        assert_eq!(s.theta_hat, DVector::from_row_slice(&[0.3, -1.0]));
    }

    #[test]
    fn zero_innovation_keeps_estimate() {
        let mut s = scalar(0.4, 0.1);
        let y = [Complex64::from_polar(1.0, 0.4)];
        assert!(s.update(&y, c(1.0, 0.0), &[c(1.0, 0.0)]));
        assert!((s.theta_hat[0] - 0.4).abs() < 1e-15);
        assert!(s.p[(0, 0)] < 0.1);
    }

    #[test]
    fn innovation_sign_and_gain() {
        // Scalar linearisation: gain P/(P + 1/|a|²) applied to Im(conj(a)y)/|a|².
        let (p, delta) = (10.0, 0.05);
        let mut s = scalar(0.0, p);
        let y = [Complex64::from_polar(1.0, delta)];
        s.update(&y, c(1.0, 0.0), &[c(1.0, 0.0)]);
        let want = p / (p + 1.0) * delta.sin();
        assert!(s.theta_hat[0] > 0.0);
        assert!((s.theta_hat[0] - want).abs() < 1e-14);
        assert!((s.p[(0, 0)] - p / (p + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_prior_means_zero_gain() {
        let mut s = scalar(0.2, 0.0);
        s.update(&[c(-3.0, 5.0)], c(1.0, 1.0), &[c(0.5, 0.5)]);
        assert_eq!(s.theta_hat[0], 0.2);
        assert_eq!(s.p[(0, 0)], 0.0);
    }

    #[test]
    fn non_finite_update_is_skipped() {
        let mut s = scalar(0.2, 1.0);
        assert!(!s.update(&[c(f64::NAN, 0.0)], c(1.0, 0.0), &[c(1.0, 0.0)]));
        assert_eq!(s, scalar(0.2, 1.0));
    }

    #[test]
    fn joseph_matches_textbook_update() {
        // Compare against the plain 2M-dimensional Kalman equations.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        let gains: Vec<Complex64> = (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let theta = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let p = &a * a.transpose() + DMatrix::identity(n, n) * 0.01;
        let x = c(0.7, -0.4);
        let y: Vec<Complex64> = (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();

        let mut h = DMatrix::zeros(2 * n, n);
        let mut innov = DVector::zeros(2 * n);
        for m in 0..n {
            let am = gains[m] * x * Complex64::from_polar(1.0, theta[m]);
            h[(2 * m, m)] = -am.im;
            h[(2 * m + 1, m)] = am.re;
            innov[2 * m] = y[m].re - am.re;
            innov[2 * m + 1] = y[m].im - am.im;
        }
        let s = &h * &p * h.transpose() + DMatrix::identity(2 * n, 2 * n);
        let k = &p * h.transpose() * s.try_inverse().unwrap();
        let i_kh = DMatrix::identity(n, n) - &k * &h;
        let p_want = &i_kh * &p * i_kh.transpose() + &k * k.transpose();
        let theta_want = &theta + &k * innov;

        let mut st = EkfState::new(theta, p).unwrap();
        assert!(st.update(&y, x, &gains));
        assert!((&st.theta_hat - theta_want).abs().max() < 1e-12);
        assert!((&st.p - p_want).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_stays_psd_over_long_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = PhaseNoiseConfig::new(0.01, 0.01, OscMode::Slo).unwrap();
        let sigma = process_covariance(&config, 3);
        let chan = draw_fading(3, &mut rng).channel;
        let mut s = EkfState::new(DVector::zeros(3), sigma.clone()).unwrap();
        let qam = Constellation::qam(16, 20.0).unwrap();
        for step in 0..1_000_000 {
            s.predict(&sigma);
            let x = qam.point(rng.random_range(0..16));
            let y: Vec<Complex64> = chan
                .gains()
                .iter()
                .map(|h| h * x + c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            s.update(&y, x, chan.gains());
            if step % 10_000 == 0 {
                let eig = s.p.clone().symmetric_eigen();
                assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-15), "{}", eig.eigenvalues);
            }
            assert_eq!(s.p, s.p.transpose());
        }
        assert!(s.p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pilot_schedule_counts() {
        let s = PilotSchedule::new(50, 0).unwrap();
        assert_eq!(s.count(10_000), 200);
        assert_eq!(s.count(10_001), 201);
        assert_eq!(s.count(1), 1);
        assert!(s.is_pilot(0) && s.is_pilot(50) && !s.is_pilot(49));
        let shifted = PilotSchedule::new(50, 10).unwrap();
        assert_eq!(shifted.count(10), 0);
        assert_eq!(shifted.count(11), 1);
        assert!(PilotSchedule::new(0, 0).is_err());
    }

    #[test]
    fn pilot_is_largest_real_point() {
        let qam = Constellation::qam(16, 10.0).unwrap();
        let p = qam.point(pilot_symbol(&qam));
        assert!((p.re - 3.0).abs() < 1e-12 && (p.im.abs() - 1.0).abs() < 1e-12);
        let qpsk = Constellation::qam(4, 2.0).unwrap();
        assert_eq!(qpsk.point(pilot_symbol(&qpsk)).re, 1.0);
    }

    fn run(
        mode: OscMode,
        antennas: usize,
        var: f64,
        noise: NoiseMode,
        n: usize,
        energy: f64,
        seed: u64,
    ) -> (Vec<usize>, EkfRun) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qam = Constellation::qam(16, energy).unwrap();
        let config = PhaseNoiseConfig::new(var, var, mode).unwrap();
        let schedule = PilotSchedule::new(50, 0).unwrap();
        let pilot = pilot_symbol(&qam);
        let sent: Vec<usize> = (0..n)
            .map(|k| if schedule.is_pilot(k) { pilot } else { rng.random_range(0..16) })
            .collect();
        let x: Vec<Complex64> = sent.iter().map(|&i| qam.point(i)).collect();
        let traj = sample_trajectory(&config, antennas, n, &mut rng);
        let chan = draw_fading(antennas, &mut rng).channel;
        let block = transmit(&x, &traj, &chan, noise, &mut rng).unwrap();
        let setup = EkfSetup {
            constellation: &qam,
            channel: &chan,
            phase_noise: &config,
            schedule,
            pilot,
            initial_phase: traj.at_time(0),
        };
        (sent, run_ekf_block(&block, &setup).unwrap())
    }

    #[test]
    fn noiseless_static_phase_is_exact() {
        for mode in [OscMode::Clo, OscMode::Slo] {
            let (sent, out) = run(mode, 4, 0.0, NoiseMode::Off, 2000, 1.0, 5);
            assert_eq!(out.pilots, 40);
            assert_eq!(out.detected.len(), 2000 - 40);
            for &(k, idx) in &out.detected {
                assert_eq!(idx, sent[k]);
            }
        }
    }

    #[test]
    fn static_phase_estimate_does_not_move_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let qam = Constellation::qam(16, 1.0).unwrap();
        let config = PhaseNoiseConfig::ideal(OscMode::Slo);
        let traj = PhaseTrajectory::constant(2, 300, 1.1);
        let chan = draw_fading(2, &mut rng).channel;
        let x: Vec<Complex64> = (0..300).map(|_| qam.point(rng.random_range(0..16))).collect();
        let block = transmit(&x, &traj, &chan, NoiseMode::Off, &mut rng).unwrap();
        let setup = EkfSetup {
            constellation: &qam,
            channel: &chan,
            phase_noise: &config,
            schedule: PilotSchedule::new(50, 0).unwrap(),
            pilot: 0,
            initial_phase: traj.at_time(0),
        };
        let out = run_ekf_block(&block, &setup).unwrap();
        for th in out.state.theta_hat.iter() {
            assert!((th - 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn clo_scalar_matches_correlated_vector_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let antennas = 4;
        let qam = Constellation::qam(16, 200.0).unwrap();
        let config = PhaseNoiseConfig::new(0.001, 0.001, OscMode::Clo).unwrap();
        let n = 2000;
        let schedule = PilotSchedule::new(50, 0).unwrap();
        let pilot = pilot_symbol(&qam);
        let x: Vec<Complex64> = (0..n)
            .map(|k| qam.point(if schedule.is_pilot(k) { pilot } else { rng.random_range(0..16) }))
            .collect();
        let traj = sample_trajectory(&config, antennas, n, &mut rng);
        let chan = draw_fading(antennas, &mut rng).channel;
        let block = transmit(&x, &traj, &chan, NoiseMode::On, &mut rng).unwrap();
        let setup = EkfSetup {
            constellation: &qam,
            channel: &chan,
            phase_noise: &config,
            schedule,
            pilot,
            initial_phase: traj.at_time(0),
        };
        let scalar = run_ekf_block(&block, &setup).unwrap();

        let sigma = process_covariance(&config, antennas);
        let state = EkfState::new(DVector::from_column_slice(traj.at_time(0)), sigma.clone()).unwrap();
        let vector = track(&block, chan.gains(), &sigma, state, &setup);
        assert_eq!(scalar.detected, vector.detected);
        for th in vector.state.theta_hat.iter() {
            assert!((th - scalar.state.theta_hat[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn all_pilot_tracking_error_falls_with_snr() {
        let mut mse = Vec::new();
        for energy in [2.0, 20.0, 200.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let qam = Constellation::qam(4, energy).unwrap();
            let config = PhaseNoiseConfig::new(0.001, 0.001, OscMode::Slo).unwrap();
            let n = 20_000;
            let traj = sample_trajectory(&config, 2, n, &mut rng);
            let chan = ChannelRealization::unit(2);
            let x = vec![qam.point(0); n];
            let block = transmit(&x, &traj, &chan, NoiseMode::On, &mut rng).unwrap();
            let sigma = process_covariance(&config, 2);
            let mut state = EkfState::new(DVector::from_column_slice(traj.at_time(0)), sigma.clone()).unwrap();
            let mut acc = 0.0;
            for k in 0..n {
                if k > 0 {
                    state.predict(&sigma);
                }
                state.update(block.at_time(k), x[k], chan.gains());
                if k >= n / 2 {
                    for m in 0..2 {
                        acc += (state.theta_hat[m] - traj.get(m, k)).powi(2);
                    }
                }
            }
            mse.push(acc / n as f64);
        }
        assert!(mse.iter().all(|v| v.is_finite()));
        assert!(mse[0] > mse[1] && mse[1] > mse[2], "{mse:?}");
    }

    #[test]
    fn dimension_mismatch() {
        assert!(EkfState::new(DVector::zeros(2), DMatrix::zeros(3, 3)).is_err());
    }
}
