//! Differential phase accumulation at the transmitter.
//!
//! x_k = r_k exp(j Σ_{l≤k} φ_l): amplitudes pass through untouched and the
//! phase difference of consecutive transmitted symbols is the information
//! phase φ_k. Each block opens with one reference symbol (amplitude √E,
//! phase 0) that carries no data and is never scored.

use num_complex::Complex64;

use crate::constellation::Constellation;
use crate::phase::wrap;

/// One symbol in polar form, phase in (-π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarSymbol {
    pub amplitude: f64,
    pub phase: f64,
}

/// The non-information symbol that anchors the differential chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSymbol {
    pub amplitude: f64,
    pub phase: f64,
}

impl ReferenceSymbol {
    /// Transmitted symbols per block: one reference plus `data` symbols.
    pub fn block_len(data: usize) -> usize {
        data + 1
    }
}

/// Reference symbol for a constellation of average energy E: √E at phase 0.
pub fn first_symbol_policy(constellation: &Constellation) -> ReferenceSymbol {
    ReferenceSymbol {
        amplitude: constellation.avg_energy().sqrt(),
        phase: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    /// Transmitted samples.
    pub x: Vec<Complex64>,
    /// |x_k| exactly as supplied.
    pub amplitude: Vec<f64>,
    /// Running phase sum, wrapped to (-π, π].
    pub cumulative_phase: Vec<f64>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Accumulates phases with the running sum starting at zero.
pub fn encode(symbols: &[PolarSymbol]) -> EncodedSequence {
    encode_from(0.0, symbols, Vec::with_capacity(symbols.len()))
}

fn encode_from(start_phase: f64, symbols: &[PolarSymbol], mut out: Vec<(f64, f64)>) -> EncodedSequence {
    let mut acc = start_phase;
    for s in symbols {
        acc = wrap(acc + s.phase);
        out.push((s.amplitude, acc));
    }
    let x = out.iter().map(|&(r, p)| Complex64::from_polar(r, p)).collect();
    let (amplitude, cumulative_phase) = out.into_iter().unzip();
    EncodedSequence {
        x,
        amplitude,
        cumulative_phase,
    }
}

/// Reference symbol followed by the accumulated data symbols `indices`.
pub fn encode_block(constellation: &Constellation, indices: &[usize]) -> EncodedSequence {
    let reference = first_symbol_policy(constellation);
    let symbols: Vec<PolarSymbol> = indices
        .iter()
        .map(|&i| {
            let (amplitude, phase) = constellation.polar(i);
            PolarSymbol { amplitude, phase }
        })
        .collect();
    let mut head = Vec::with_capacity(symbols.len() + 1);
    head.push((reference.amplitude, reference.phase));
    encode_from(reference.phase, &symbols, head)
}

/// Wrapped consecutive phase differences of a transmitted sequence; the
/// first entry is taken relative to phase 0.
pub fn decode_phases(x: &[Complex64]) -> Vec<f64> {
    let mut prev = 0.0;
    x.iter()
        .map(|v| {
            let a = v.arg();
            let d = wrap(a - prev);
            prev = a;
            d
        })
        .collect()
}
