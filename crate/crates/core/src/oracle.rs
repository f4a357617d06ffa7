//! Reference computations used by `selftest` and the test suites.
//!
//! Nothing here shares code with the production special functions: the
//! Bessel reference sums the defining power series exactly in big-integer
//! fixed point, and the Q-function reference uses its own erf series and
//! continued fraction instead of any library erfc.

use num_bigint::BigUint;
use num_traits::{Float, One, Zero};
use std::f64::consts::LN_2;

/// Extra fractional bits kept below the leading series term.
const GUARD_BITS: i64 = 256;

/// ln I_ν(x) from the power series Σ (x/2)^(2k+ν) / (k! (k+ν)!), summed
/// exactly in fixed point with `GUARD_BITS` of headroom below the first
/// term. `x` must be positive and finite; it is taken as its exact dyadic
/// value.
pub fn log_bessel_i_series(nu: u32, x: f64) -> f64 {
    assert!(x > 0.0 && x.is_finite(), "oracle needs 0 < x < ∞");
    let (mantissa, exponent, _) = x.integer_decode();
    let mantissa = BigUint::from(mantissa);
    // x/2 = mantissa · 2^(exponent - 1)
    let e = i64::from(exponent) - 1;
    let nu_i = i64::from(nu);

    // log2 of the k = 0 term, roughly, to choose the fixed-point scale.
    let log2_first = nu as f64 * (x / 2.0).log2() - log2_factorial(nu as u64);
    let frac_bits = (GUARD_BITS - log2_first.floor() as i64).max(GUARD_BITS);

    let m_sq = &mantissa * &mantissa;
    let mut num = mantissa.pow(nu); // mantissa^(2k+ν)
    let mut den = factorial(nu as u64); // k! (k+ν)!
    let mut sum = BigUint::zero();
    let mut k: u64 = 0;
    loop {
        let shift = e * (2 * k as i64 + nu_i) + frac_bits;
        let term = if shift >= 0 {
            (&num << shift as u64) / &den
        } else {
            &num / (&den << (-shift) as u64)
        };
        let past_peak = (k as f64) > x / 2.0;
        if term.is_zero() && past_peak {
            break;
        }
        sum += term;
        k += 1;
        num *= &m_sq;
        den *= BigUint::from(k) * BigUint::from(k + nu as u64);
    }
    ln_scaled(&sum, frac_bits)
}

fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

fn log2_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).log2()).sum()
}

/// ln(v · 2^-frac_bits), folding the binary exponent as an integer so no
/// large logarithms cancel.
fn ln_scaled(v: &BigUint, frac_bits: i64) -> f64 {
    let bits = v.bits() as i64;
    assert!(bits > 0, "series sum vanished");
    // mantissa in [1, 2) from the top 63 bits
    let (top, shift) = if bits > 63 {
        ((v >> (bits - 63) as u64).to_u64_digits()[0], bits - 63)
    } else {
        (v.to_u64_digits()[0], 0)
    };
    let top_bits = bits - shift;
    let mantissa = top as f64 / 2f64.powi((top_bits - 1) as i32);
    let exponent = shift + top_bits - 1 - frac_bits;
    mantissa.ln() + exponent as f64 * LN_2
}

/// Q(x) = ½ erfc(x/√2) without any library erfc: the positive series
/// erf(z) = (2/√π) e^{-z²} Σ 2^n z^{2n+1} / (2n+1)!! for z < 3, and the
/// Laplace continued fraction for erfc(z) beyond.
pub fn q_function_reference(x: f64) -> f64 {
    let z = x.abs() / std::f64::consts::SQRT_2;
    let erfc_z = if z < 1.0 { 1.0 - erf_series(z) } else { erfc_continued_fraction(z) };
    if x >= 0.0 {
        0.5 * erfc_z
    } else {
        1.0 - 0.5 * erfc_z
    }
}

fn erf_series(z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * z * z / (2.0 * n + 1.0);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum
}

/// erfc(z) = e^{-z²}/√π · 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...)))),
/// evaluated bottom-up from a fixed depth.
fn erfc_continued_fraction(z: f64) -> f64 {
    let mut tail = 0.0;
    for k in (1..=4000).rev() {
        tail = (k as f64 / 2.0) / (z + tail);
    }
    (-z * z).exp() / std::f64::consts::PI.sqrt() / (z + tail)
}

/// I_ν(x) by direct f64 series; only meant for small arguments in tests.
pub fn bessel_i_small(nu: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = (0..nu).fold(1.0, |t, k| t * half / f64::from(k + 1));
    let mut sum = term;
    for k in 1..400u32 {
        term *= half * half / (f64::from(k) * f64::from(k + nu));
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Sample variance-based standard error helper for covariance checks:
/// SE of the sample covariance of two jointly Gaussian variables.
pub fn covariance_standard_error(var_a: f64, var_b: f64, cov: f64, n: usize) -> f64 {
    ((var_a * var_b + cov * cov) / n as f64).sqrt()
}
