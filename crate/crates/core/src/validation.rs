//! Agreement checks of the closed-form likelihoods against independent
//! references.

use rand::Rng;

use crate::error::Result;
use crate::models::bessel::{j0_series, j0_truncated, DEFAULT_ORDER};
use crate::models::nuclear::likelihood_nuclear;
use crate::models::oracle::{phase_averaged_population, xy84_prob_zero};
use crate::models::{hz_to_rad_per_us, NuclearModelConfig, NuclearSpinParams};
use crate::rng::{rng_for, Stream};

/// Largest deviation found by [`nuclear_oracle_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCheck {
    pub cases: usize,
    pub points: usize,
    pub max_abs_err: f64,
}

/// Compares the closed-form nuclear likelihood with the matrix propagation of
/// the full pulse sequence for `cases` random parameter sets (one and two
/// spins, ideal read-out, no decay), each at `taus_per_case` random controls
/// in `[1, 10]` us.
pub fn nuclear_oracle_check(cases: usize, taus_per_case: usize, seed: u64) -> Result<OracleCheck> {
    let mut max_abs_err: f64 = 0.0;
    for i in 0..cases {
        let mut rng = rng_for(seed, Stream::Control, i as u64);
        let n_spins = 1 + i % 2;
        let cfg = NuclearModelConfig { t2: f64::INFINITY, ..NuclearModelConfig::with_spins(n_spins) };
        let omega_h = (0..n_spins).map(|_| hz_to_rad_per_us(rng.random_range(6e3..265e3))).collect();
        let theta = (0..n_spins).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        let params = NuclearSpinParams::new(omega_h, theta)?;
        for _ in 0..taus_per_case {
            let tau = rng.random_range(1.0..10.0);
            let err = (likelihood_nuclear(&params, &cfg, tau) - xy84_prob_zero(&params, &cfg, tau)?).abs();
            max_abs_err = max_abs_err.max(err);
        }
    }
    Ok(OracleCheck { cases, points: cases * taus_per_case, max_abs_err })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselCheck {
    pub points: usize,
    /// Truncated series against the converged series.
    pub max_series_err: f64,
    /// `(1 + J0) / 2` against quadrature of the fixed-phase probability.
    pub max_phase_average_err: f64,
}

/// Checks the truncated `J0` and the phase average on `points` amplitudes in `[0, 0.5]`.
pub fn bessel_check(points: usize) -> BesselCheck {
    let mut max_series_err: f64 = 0.0;
    let mut max_phase_average_err: f64 = 0.0;
    for i in 0..points {
        let a = 0.5 * i as f64 / (points.max(2) - 1) as f64;
        let exact = j0_series(a);
        max_series_err = max_series_err.max((j0_truncated(a, DEFAULT_ORDER) - exact).abs());
        max_phase_average_err =
            max_phase_average_err.max((0.5 * (1.0 + exact) - phase_averaged_population(a, 64)).abs());
    }
    BesselCheck { points, max_series_err, max_phase_average_err }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_sample_agrees() {
        let r = nuclear_oracle_check(4, 3, 11).unwrap();
        assert_eq!(r.points, 12);
        assert!(r.max_abs_err < 1e-6, "{r:?}");
    }

    #[test]
    fn bessel_sample_agrees() {
        let r = bessel_check(51);
        assert!(r.max_series_err < 1e-6 && r.max_phase_average_err < 1e-8, "{r:?}");
    }
}
