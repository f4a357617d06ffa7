//! Phase wrapping. Every phase that leaves this crate lives in (-π, π].

use std::f64::consts::{PI, TAU};

/// Wraps an angle into (-π, π].
#[inline]
pub fn wrap(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle - TAU * ((angle - PI) / TAU).ceil();
    // Rounding in the subtraction can land exactly on -π.
    if wrapped <= -PI {
        wrapped + TAU
    } else {
        wrapped
    }
}

/// Absolute circular distance between two angles, in [0, π].
#[inline]
pub fn circular_distance(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}
