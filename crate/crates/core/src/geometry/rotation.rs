use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub lambda: f64,
    pub gamma: f64,
}

/// Smooth per-frame rotation angles
/// `theta(n) = theta_max * sum_i lambda_i sin(gamma_i rho(n))` with
/// phase `rho(n) = 2 pi (C n / N + r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSchedule {
    pub c: f64,
    pub theta_max: f64,
    pub terms: Vec<SineTerm>,
    pub r: f64,
    pub num_frames: usize,
}

impl RotationSchedule {
    pub fn new(c: f64, theta_max: f64, terms: Vec<SineTerm>, r: f64, num_frames: usize) -> Result<Self> {
        let s = RotationSchedule {
            c,
            theta_max,
            terms,
            r,
            num_frames,
        };
        s.validate()?;
        Ok(s)
    }

    /// Like [`RotationSchedule::new`] with the phase offset `r` drawn
    /// uniformly from `[0, 1/2]`.
    pub fn with_random_phase<R: Rng + ?Sized>(
        c: f64,
        theta_max: f64,
        terms: Vec<SineTerm>,
        num_frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let r = rng.random_range(0.0..=0.5);
        Self::new(c, theta_max, terms, r, num_frames)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config("C must be positive".into()));
        }
        // theta_max = 0 is allowed: it disables rotation.
        if !(self.theta_max >= 0.0 && self.theta_max <= FRAC_PI_4) {
            return Err(Error::Config(format!(
                "theta_max must lie in [0, pi/4], got {}",
                self.theta_max
            )));
        }
        if self.terms.is_empty() {
            return Err(Error::Config("at least one sine term required".into()));
        }
        if self
            .terms
            .iter()
            .any(|t| !(t.lambda >= 0.0 && t.gamma > 0.0 && t.gamma.is_finite()))
        {
            return Err(Error::Config("terms need lambda >= 0 and gamma > 0".into()));
        }
        let total: f64 = self.terms.iter().map(|t| t.lambda).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("lambdas sum to {total}, expected 1")));
        }
        if !(0.0..=0.5).contains(&self.r) {
            return Err(Error::Config(format!("r must lie in [0, 1/2], got {}", self.r)));
        }
        if self.num_frames == 0 {
            return Err(Error::Config("num_frames must be positive".into()));
        }
        Ok(())
    }

    pub fn phase(&self, n: usize) -> f64 {
        2.0 * PI * (self.c / self.num_frames as f64 * n as f64 + self.r)
    }

    /// Rotation angle of frame `n` (radians).
    pub fn angle(&self, n: usize) -> f64 {
        debug_assert!(n < self.num_frames);
        let rho = self.phase(n);
        self.theta_max
            * self
                .terms
                .iter()
                .map(|t| t.lambda * (t.gamma * rho).sin())
                .sum::<f64>()
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.num_frames).map(|n| self.angle(n)).collect()
    }

    /// Upper bound on `|theta(n + 1) - theta(n)|`.
    pub fn max_step(&self) -> f64 {
        let weighted: f64 = self.terms.iter().map(|t| t.lambda * t.gamma).sum();
        self.theta_max * 2.0 * PI * self.c / self.num_frames as f64 * weighted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(theta_max: f64, n: usize) -> RotationSchedule {
        RotationSchedule::new(1.0, theta_max, vec![SineTerm { lambda: 1.0, gamma: 1.0 }], 0.0, n).unwrap()
    }

    #[test]
    fn zero_phase_gives_zero_angle() {
        assert_eq!(single(0.3, 100).angle(0), 0.0);
    }

    #[test]
    fn quarter_period_reaches_theta_max() {
        let s = single(0.3, 100);
        assert!((s.phase(25) - PI / 2.0).abs() < 1e-12);
        assert!((s.angle(25) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn two_terms_match_direct_formula() {
        let s = RotationSchedule::new(
            2.0,
            0.2,
            vec![SineTerm { lambda: 0.5, gamma: 1.0 }, SineTerm { lambda: 0.5, gamma: 3.0 }],
            0.1,
            50,
        )
        .unwrap();
        // independent transcription of the angle formula
        for n in [0usize, 7, 13, 49] {
            let rho = 2.0 * PI * (2.0 * n as f64 / 50.0 + 0.1);
            let expect = 0.2 * (0.5 * rho.sin() + 0.5 * (3.0 * rho).sin());
            assert!((s.angle(n) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_schedules() {
        let t = vec![SineTerm { lambda: 0.6, gamma: 1.0 }];
        assert!(RotationSchedule::new(1.0, 0.2, t, 0.0, 10).is_err());
        assert!(RotationSchedule::new(1.0, 1.0, vec![SineTerm { lambda: 1.0, gamma: 1.0 }], 0.0, 10).is_err());
        assert!(RotationSchedule::new(1.0, 0.2, vec![SineTerm { lambda: 1.0, gamma: 1.0 }], 0.7, 10).is_err());
    }

    proptest! {
        #[test]
        fn angle_bounded_and_smooth(
            raw in proptest::collection::vec((0.01f64..1.0, 0.1f64..6.0), 1..5),
            theta_max in 0.0f64..FRAC_PI_4,
            c in 0.1f64..5.0,
            r in 0.0f64..=0.5,
            n in 1usize..300,
        ) {
            let total: f64 = raw.iter().map(|t| t.0).sum();
            let terms = raw.iter().map(|&(l, g)| SineTerm { lambda: l / total, gamma: g }).collect();
            let s = RotationSchedule::new(c, theta_max, terms, r, n).unwrap();
            let angles = s.angles();
            for w in angles.windows(2) {
                prop_assert!((w[1] - w[0]).abs() <= s.max_step() * (1.0 + 1e-12) + 1e-15);
            }
            for a in angles {
                prop_assert!(a.abs() <= theta_max * (1.0 + 1e-12));
            }
        }
    }
}
