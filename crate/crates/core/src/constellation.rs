//! Square QAM constellations in polar form.
//!
//! The two-stage detector needs the constellation split into amplitude
//! classes: all points sharing one magnitude, together with the prior
//! probability of that magnitude and the sorted phases of its members.
//! 16-QAM, for example, has three classes with multiplicities 4/8/4.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phase::{circular_distance, wrap};

/// Relative tolerance for grouping magnitudes and for polar lookups.
pub const CLASS_TOLERANCE: f64 = 1e-9;
/// Absolute phase tolerance (rad) for polar lookups.
pub const PHASE_TOLERANCE: f64 = 1e-9;

/// All constellation points sharing one magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeClass {
    pub amplitude: f64,
    pub prior: f64,
    /// Strictly increasing, each in (-π, π].
    pub phases: Vec<f64>,
    /// `members[i]` is the constellation index of the point at `phases[i]`.
    pub members: Vec<usize>,
}

impl AmplitudeClass {
    /// Position (within this class) of the phase closest to `phase`.
    pub fn position_of_phase(&self, phase: f64) -> Option<usize> {
        self.phases
            .iter()
            .position(|&p| circular_distance(p, phase) <= PHASE_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    avg_energy: f64,
    points: Vec<Complex64>,
    classes: Vec<AmplitudeClass>,
    /// For each point: (class index, position within class).
    polar_index: Vec<(usize, usize)>,
}

impl Constellation {
    /// Standard square QAM grid scaled to average energy `avg_energy`
    /// under uniform priors. Supported orders: 4, 16, 64.
    pub fn qam(order: usize, avg_energy: f64) -> Result<Self> {
        if !matches!(order, 4 | 16 | 64) {
            return Err(Error::Config(format!(
                "unsupported QAM order {order} (expected 4, 16 or 64)"
            )));
        }
        if !(avg_energy > 0.0 && avg_energy.is_finite()) {
            return Err(Error::Config(format!(
                "average energy must be positive and finite, got {avg_energy}"
            )));
        }
        let side = (order as f64).sqrt().round() as i32;
        let levels: Vec<f64> = (0..side).map(|i| f64::from(2 * i - side + 1)).collect();
        // Mean energy of the odd-integer grid is 2(L²-1)/3.
        let grid_energy = 2.0 * f64::from(side * side - 1) / 3.0;
        let scale = (avg_energy / grid_energy).sqrt();

        let mut points = Vec::with_capacity(order);
        for &im in &levels {
            for &re in &levels {
                points.push(Complex64::new(re * scale, im * scale));
            }
        }
        Ok(Self::from_points(order, avg_energy, points))
    }

    fn from_points(order: usize, avg_energy: f64, points: Vec<Complex64>) -> Self {
        let n = points.len() as f64;
        let mut by_magnitude: Vec<usize> = (0..points.len()).collect();
        by_magnitude.sort_by(|&a, &b| points[a].norm().total_cmp(&points[b].norm()));

        let mut groups: Vec<Vec<usize>> = Vec::new();
        for idx in by_magnitude {
            let mag = points[idx].norm();
            match groups.last_mut() {
                Some(g) if relative_eq(points[g[0]].norm(), mag, CLASS_TOLERANCE) => g.push(idx),
                _ => groups.push(vec![idx]),
            }
        }

        let mut polar_index = vec![(0, 0); points.len()];
        let classes = groups
            .into_iter()
            .enumerate()
            .map(|(ci, mut members)| {
                members.sort_by(|&a, &b| points[a].arg().total_cmp(&points[b].arg()));
                let phases: Vec<f64> = members.iter().map(|&i| wrap(points[i].arg())).collect();
                for (pos, &i) in members.iter().enumerate() {
                    polar_index[i] = (ci, pos);
                }
                let amplitude =
                    members.iter().map(|&i| points[i].norm()).sum::<f64>() / members.len() as f64;
                AmplitudeClass {
                    amplitude,
                    prior: members.len() as f64 / n,
                    phases,
                    members,
                }
            })
            .collect();

        Self {
            order,
            avg_energy,
            points,
            classes,
            polar_index,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn avg_energy(&self) -> f64 {
        self.avg_energy
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Amplitude classes in increasing amplitude order.
    pub fn classes(&self) -> &[AmplitudeClass] {
        &self.classes
    }

    /// Polar form `(r, φ)` of a point, φ in (-π, π].
    pub fn polar(&self, index: usize) -> (f64, f64) {
        let (ci, pos) = self.polar_index[index];
        let class = &self.classes[ci];
        (class.amplitude, class.phases[pos])
    }

    /// Class index of a point.
    pub fn class_index_of_point(&self, index: usize) -> usize {
        self.polar_index[index].0
    }

    pub fn class_of(&self, amplitude: f64) -> Result<&AmplitudeClass> {
        self.classes
            .iter()
            .find(|c| relative_eq(c.amplitude, amplitude, CLASS_TOLERANCE))
            .ok_or_else(|| Error::Lookup(format!("no amplitude class at r = {amplitude}")))
    }

    pub fn symbol_from_polar(&self, amplitude: f64, phase: f64) -> Result<usize> {
        let class = self.class_of(amplitude)?;
        class
            .position_of_phase(phase)
            .map(|pos| class.members[pos])
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "no point at phase {phase} in amplitude class r = {amplitude}"
                ))
            })
    }

    /// Nearest point in Euclidean distance; ties go to the lower index.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

fn relative_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    #[test]
    fn sixteen_qam_classes() {
        let c = Constellation::qam(16, 1.0).unwrap();
        let classes = c.classes();
        assert_eq!(classes.len(), 3);
        let expected = [(0.2f64).sqrt(), 1.0, 3.0 * (0.2f64).sqrt()];
        for (class, want) in classes.iter().zip(expected) {
            assert!((class.amplitude - want).abs() < 1e-12 * want);
        }
        let priors: Vec<f64> = classes.iter().map(|c| c.prior).collect();
        assert_eq!(priors, vec![0.25, 0.5, 0.25]);
        let sizes: Vec<usize> = classes.iter().map(|c| c.members.len()).collect();
        assert_eq!(sizes, vec![4, 8, 4]);
    }

    #[test]
    fn qpsk_single_class() {
        let c = Constellation::qam(4, 1.0).unwrap();
        assert_eq!(c.classes().len(), 1);
        let class = &c.classes()[0];
        assert!((class.amplitude - 1.0).abs() < 1e-15);
        assert_eq!(class.prior, 1.0);
        let want = [-3.0 * FRAC_PI_4, -FRAC_PI_4, FRAC_PI_4, 3.0 * FRAC_PI_4];
        for (p, w) in class.phases.iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_and_class_invariants() {
        for order in [4, 16, 64] {
            for energy in [1.0, 5.0, 2.0e4, 3.7e-3] {
                let c = Constellation::qam(order, energy).unwrap();
                let mean = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / c.len() as f64;
                assert!((mean - energy).abs() <= 1e-12 * energy);
                let total: f64 = c.classes().iter().map(|k| k.prior).sum();
                assert!((total - 1.0).abs() < 1e-15);
                let by_class: f64 = c
                    .classes()
                    .iter()
                    .map(|k| k.prior * k.amplitude * k.amplitude)
                    .sum();
                assert!((by_class - energy).abs() <= 1e-12 * energy);
                let mut seen = vec![0; c.len()];
                for class in c.classes() {
                    assert!(class.phases.windows(2).all(|w| w[0] < w[1]));
                    assert!(class.phases.iter().all(|&p| p > -PI && p <= PI));
                    for &m in &class.members {
                        seen[m] += 1;
                        let r = c.point(m).norm();
                        assert!((r - class.amplitude).abs() <= 1e-12 * class.amplitude);
                    }
                    assert_eq!(class.prior, class.members.len() as f64 / c.len() as f64);
                }
                assert!(seen.iter().all(|&s| s == 1));
            }
        }
    }

    #[test]
    fn sixty_four_qam_merges_equal_magnitudes() {
        // |1+7j| = |5+5j|, so that magnitude holds 12 points.
        let c = Constellation::qam(64, 42.0).unwrap();
        assert_eq!(c.classes().len(), 9);
        assert!(c.classes().iter().any(|k| k.members.len() == 12));
    }

    #[test]
    fn unsupported_order() {
        assert!(matches!(Constellation::qam(8, 1.0), Err(Error::Config(_))));
        assert!(matches!(Constellation::qam(256, 1.0), Err(Error::Config(_))));
        assert!(matches!(Constellation::qam(16, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn class_lookup() {
        let c = Constellation::qam(16, 1.0).unwrap();
        assert_eq!(c.class_of(1.0).unwrap().phases.len(), 8);
        let q = Constellation::qam(4, 1.0).unwrap();
        assert_eq!(q.class_of(1.0).unwrap(), &q.classes()[0]);
        let c5 = Constellation::qam(16, 5.0).unwrap();
        assert_eq!(c5.class_of(3.0).unwrap(), &c5.classes()[2]);
        assert!(matches!(c.class_of(0.9), Err(Error::Lookup(_))));
    }

    #[test]
    fn polar_lookup() {
        let q = Constellation::qam(4, 1.0).unwrap();
        let idx = q.symbol_from_polar(1.0, FRAC_PI_4).unwrap();
        let want = Complex64::new(1.0, 1.0) / 2f64.sqrt();
        assert!((q.point(idx) - want).norm() < 1e-15);

        let c = Constellation::qam(16, 1.0).unwrap();
        let idx = c.symbol_from_polar((0.2f64).sqrt(), -3.0 * FRAC_PI_4).unwrap();
        let s = (0.1f64).sqrt();
        assert!((c.point(idx) - Complex64::new(-s, -s)).norm() < 1e-15);

        assert!(matches!(c.symbol_from_polar(0.9, 0.0), Err(Error::Lookup(_))));
        assert!(matches!(c.symbol_from_polar(1.0, 0.0), Err(Error::Lookup(_))));
    }

    #[test]
    fn polar_round_trip() {
        for order in [4, 16, 64] {
            let c = Constellation::qam(order, 2.5).unwrap();
            for (i, p) in c.points().iter().enumerate() {
                assert_eq!(c.symbol_from_polar(p.norm(), p.arg()).unwrap(), i);
                let (r, phi) = c.polar(i);
                assert_eq!(c.symbol_from_polar(r, phi).unwrap(), i);
            }
        }
    }

    #[test]
    fn nearest_is_identity_on_points() {
        let c = Constellation::qam(64, 1.0).unwrap();
        for (i, p) in c.points().iter().enumerate() {
            assert_eq!(c.nearest(*p * 1.01), i);
        }
    }
}
