//! Numerical self-checks run by `simo selftest`.
//!
//! (a) ‖y‖² samples against the calibrated noncentral χ² density, and the
//!     typeset normalisation must be rejected by the same test;
//! (b) Wiener increment covariance against `process_covariance`;
//! (c) `q_function` against the independent Q reference;
//! (d) `log_bessel_i` against the exact big-integer series.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::oracle;
use crate::phase_noise::{process_covariance, sample_trajectory, OscMode, PhaseNoiseConfig};
use crate::specfun::{log_bessel_i, log_ncx2_pdf_with, q_function, LikelihoodForm};

pub const GOF_SAMPLES: usize = 1_000_000;
pub const GOF_BINS: usize = 100;
pub const GOF_MIN_P: f64 = 0.01;
pub const COVARIANCE_SAMPLES: usize = 1_000_000;
pub const COVARIANCE_MAX_SE: f64 = 5.0;
pub const Q_TOLERANCE: f64 = 1e-12;
pub const BESSEL_TOLERANCE: f64 = 1e-8;
pub const BESSEL_MAX_ORDER: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² test of ‖y‖² samples (signal energy λ spread over `half_dof`
/// complex dimensions, unit-variance real noise) against `form`, using
/// `bins` bins that are equiprobable under the calibrated density.
pub fn ncx2_goodness_of_fit(
    half_dof: u32,
    lambda: f64,
    samples: usize,
    bins: usize,
    form: LikelihoodForm,
    rng: &mut ChaCha8Rng,
) -> GofResult {
    let calibrated = CdfTable::new(LikelihoodForm::Calibrated, half_dof, lambda);
    let edges: Vec<f64> = (1..bins).map(|i| calibrated.quantile(i as f64 / bins as f64)).collect();
    let model = CdfTable::new(form, half_dof, lambda);
    let mut expected = Vec::with_capacity(bins);
    let mut lower = 0.0;
    for i in 0..bins {
        let upper = if i + 1 < bins { model.cdf(edges[i]) } else { 1.0 };
        expected.push((upper - lower) * samples as f64);
        lower = upper;
    }

    let mut counts = vec![0usize; bins];
    let amplitude = lambda.sqrt();
    for _ in 0..samples {
        let mut t = 0.0;
        for m in 0..half_dof {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let re = if m == 0 { re + amplitude } else { re };
            t += re * re + im * im;
        }
        counts[edges.partition_point(|&e| e <= t)] += 1;
    }
    let statistic: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            if e > 0.0 {
                d * d / e
            } else if o > 0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    let dof = bins - 1;
    let p_value = if statistic.is_finite() {
        ChiSquared::new(dof as f64).expect("positive dof").sf(statistic)
    } else {
        0.0
    };
    GofResult {
        statistic,
        dof,
        p_value,
    }
}

/// A density integrated on a fine grid (Simpson per cell) and normalised by
/// its own total mass.
struct CdfTable {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl CdfTable {
    const CELLS: usize = 200_000;

    fn new(form: LikelihoodForm, half_dof: u32, lambda: f64) -> Self {
        let m = f64::from(half_dof);
        let mean = 2.0 * m + lambda;
        let sd = (4.0 * m + 4.0 * lambda).sqrt();
        let t_max = mean + 20.0 * sd;
        let h = t_max / Self::CELLS as f64;
        let f = |t: f64| log_ncx2_pdf_with(form, t, half_dof, lambda).exp();
        let mut grid = Vec::with_capacity(Self::CELLS + 1);
        let mut cdf = Vec::with_capacity(Self::CELLS + 1);
        grid.push(0.0);
        cdf.push(0.0);
        let mut acc = 0.0;
        let mut f_left = f(0.0);
        for i in 0..Self::CELLS {
            let a = i as f64 * h;
            let f_right = f(a + h);
            acc += h / 6.0 * (f_left + 4.0 * f(a + 0.5 * h) + f_right);
            grid.push(a + h);
            cdf.push(acc);
            f_left = f_right;
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Self { grid, cdf }
    }

    fn cdf(&self, t: f64) -> f64 {
        let i = self.grid.partition_point(|&g| g <= t);
        if i == 0 {
            return 0.0;
        }
        if i >= self.grid.len() {
            return 1.0;
        }
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        c0 + (c1 - c0) * (t - g0) / (g1 - g0)
    }

    fn quantile(&self, p: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < p);
        if i == 0 {
            return 0.0;
        }
        if i >= self.cdf.len() {
            return *self.grid.last().expect("nonempty grid");
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        g0 + (g1 - g0) * (p - c0) / (c1 - c0)
    }
}

/// Largest deviation of the empirical increment covariance from
/// `process_covariance`, in standard errors.
pub fn wiener_covariance_deviation(config: &PhaseNoiseConfig, antennas: usize, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let traj = sample_trajectory(config, antennas, samples + 1, rng);
    let mut sums = vec![0.0; antennas];
    let mut prods = vec![0.0; antennas * antennas];
    let mut inc = vec![0.0; antennas];
    for k in 1..=samples {
        let (now, before) = (traj.at_time(k), traj.at_time(k - 1));
        for m in 0..antennas {
            inc[m] = now[m] - before[m];
            sums[m] += inc[m];
        }
        for i in 0..antennas {
            for j in 0..antennas {
                prods[i * antennas + j] += inc[i] * inc[j];
            }
        }
    }
    let n = samples as f64;
    let truth = process_covariance(config, antennas);
    let mut worst: f64 = 0.0;
    for i in 0..antennas {
        for j in 0..antennas {
            let emp = prods[i * antennas + j] / n - sums[i] * sums[j] / (n * n);
            let se = oracle::covariance_standard_error(truth[(i, i)], truth[(j, j)], truth[(i, j)], samples);
            worst = worst.max((emp - truth[(i, j)]).abs() / se);
        }
    }
    worst
}

/// Largest relative gap between `q_function` and the reference on
/// [-8, 8] in steps of 0.001.
pub fn q_function_max_relative_error() -> f64 {
    (-8000..=8000)
        .map(|i| {
            let x = f64::from(i) * 1e-3;
            let want = oracle::q_function_reference(x);
            (q_function(x) - want).abs() / want
        })
        .fold(0.0, f64::max)
}

/// Largest |ln I_ν(x) - reference| (the relative error of I_ν) over
/// ν ≤ `max_order` and x on a logarithmic grid from 1e-3 to 1e3.
pub fn log_bessel_max_error(max_order: u32) -> f64 {
    let xs: Vec<f64> = (0..=24).map(|i| 10f64.powf(-3.0 + 0.25 * f64::from(i))).collect();
    let mut worst: f64 = 0.0;
    for nu in 0..=max_order {
        for &x in &xs {
            let got = log_bessel_i(nu, x).expect("in domain");
            let want = oracle::log_bessel_i_series(nu, x);
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

fn timed(name: &str, f: impl FnOnce() -> (bool, String)) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f();
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_selftest(seed: u64) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (half_dof, lambda) in [(1u32, 10.0), (4, 40.0), (16, 160.0)] {
        checks.push(timed(&format!("(a) ncx2 goodness of fit, M={half_dof}"), || {
            let r = ncx2_goodness_of_fit(half_dof, lambda, GOF_SAMPLES, GOF_BINS, LikelihoodForm::Calibrated, &mut rng);
            (
                r.p_value > GOF_MIN_P,
                format!("chi2={:.1} dof={} p={:.4}", r.statistic, r.dof, r.p_value),
            )
        }));
    }
    checks.push(timed("(a) typeset normalisation rejected, M=4", || {
        let r = ncx2_goodness_of_fit(4, 40.0, GOF_SAMPLES, GOF_BINS, LikelihoodForm::AsTypeset, &mut rng);
        (
            r.p_value <= GOF_MIN_P,
            format!("chi2={:.3e} dof={} p={:.3e}", r.statistic, r.dof, r.p_value),
        )
    }));
    for config in [
        PhaseNoiseConfig::new(0.01, 0.02, OscMode::Slo).expect("valid"),
        PhaseNoiseConfig::new(0.01, 0.02, OscMode::Clo).expect("valid"),
    ] {
        checks.push(timed(
            &format!("(b) Wiener increment covariance, {}", config.osc_mode.as_str()),
            || {
                let worst = wiener_covariance_deviation(&config, 4, COVARIANCE_SAMPLES, &mut rng);
                (worst <= COVARIANCE_MAX_SE, format!("max deviation {worst:.2} SE"))
            },
        ));
    }
    checks.push(timed("(c) Q function vs reference", || {
        let worst = q_function_max_relative_error();
        (worst <= Q_TOLERANCE, format!("max relative error {worst:.2e}"))
    }));
    checks.push(timed("(d) log Bessel I vs exact series", || {
        let worst = log_bessel_max_error(BESSEL_MAX_ORDER);
        (worst <= BESSEL_TOLERANCE, format!("max relative error {worst:.2e}"))
    }));
    SelftestReport { checks }
}
