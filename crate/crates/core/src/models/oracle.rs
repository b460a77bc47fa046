//! Independent numerical references for the closed-form likelihoods.
//!
//! [`xy84_population`] propagates the probe and the nuclear spins through the
//! XY8-4 pulse sequence as explicit matrices. It never touches the closed-form
//! `M` factor, so agreement between the two is a genuine check. The phase
//! average of the field model is checked by quadrature.

use nalgebra::{Complex, DMatrix};

use super::ac::{filter_amplitude, AcFieldParams, AcModelConfig, XY8_DURATION};
use super::bessel::j0_series;
use super::nuclear::{NuclearModelConfig, NuclearSpinParams, XY8_4_DURATION};
use super::{apply_readout_noise, TAU_2PI};
use crate::error::{Error, Result};

type C = Complex<f64>;
type Mat = DMatrix<C>;

/// Largest spin count the matrix oracle accepts.
pub const MAX_ORACLE_SPINS: usize = 3;

#[derive(Debug, Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Pulse order within one XY8 unit.
const XY8_UNIT: [Axis; 8] = [Axis::X, Axis::Y, Axis::X, Axis::Y, Axis::Y, Axis::X, Axis::Y, Axis::X];

fn identity(n: usize) -> Mat {
    DMatrix::identity(n, n)
}

/// `exp(-i t (hx sx + hz sz) / 2)` for one spin-1/2.
fn spin_propagator(hx: f64, hz: f64, t: f64) -> Mat {
    let norm = (hx * hx + hz * hz).sqrt();
    let (s, c) = (0.5 * norm * t).sin_cos();
    let (nx, nz) = if norm > 0.0 { (hx / norm, hz / norm) } else { (0.0, 0.0) };
    let i = C::new(0.0, 1.0);
    let mut u = Mat::zeros(2, 2);
    u[(0, 0)] = C::new(c, 0.0) - i * (s * nz);
    u[(1, 1)] = C::new(c, 0.0) + i * (s * nz);
    u[(0, 1)] = -i * (s * nx);
    u[(1, 0)] = -i * (s * nx);
    u
}

/// Probe rotation `exp(-i angle sigma_axis / 2)`.
fn probe_rotation(axis: Axis, angle: f64) -> Mat {
    let (s, c) = (0.5 * angle).sin_cos();
    let mut r = Mat::zeros(2, 2);
    r[(0, 0)] = C::new(c, 0.0);
    r[(1, 1)] = C::new(c, 0.0);
    match axis {
        Axis::X => {
            r[(0, 1)] = C::new(0.0, -s);
            r[(1, 0)] = C::new(0.0, -s);
        }
        Axis::Y => {
            r[(0, 1)] = C::new(-s, 0.0);
            r[(1, 0)] = C::new(s, 0.0);
        }
    }
    r
}

struct Propagators {
    n_nuc: usize,
    omega_l: f64,
    spins: Vec<(f64, f64)>,
}

impl Propagators {
    /// Conditional free evolution `|0><0| (x) U0(t) + |1><1| (x) U1(t)`.
    fn free(&self, t: f64) -> Mat {
        let mut u0 = identity(1);
        let mut u1 = identity(1);
        for &(w, theta) in &self.spins {
            u0 = u0.kronecker(&spin_propagator(0.0, self.omega_l, t));
            u1 = u1.kronecker(&spin_propagator(w * theta.sin(), w * theta.cos() + self.omega_l, t));
        }
        let n = self.n_nuc;
        let mut u = Mat::zeros(2 * n, 2 * n);
        u.view_mut((0, 0), (n, n)).copy_from(&u0);
        u.view_mut((n, n), (n, n)).copy_from(&u1);
        u
    }

    fn pulse(&self, axis: Axis, angle: f64) -> Mat {
        probe_rotation(axis, angle).kronecker(&identity(self.n_nuc))
    }
}

/// Ideal (pre read-out) population of `|0>` after the XY8-4 sequence
/// `Ry(pi/2) - [tau - X - 2tau - Y - ... - X - tau] x 4 - Ry(3pi/2)` with
/// instantaneous pulses and the nuclear spins initially unpolarized.
///
/// Dephasing commutes with the conditional evolution and with the pi pulses,
/// so it is applied once to the probe coherences before the final pulse.
pub fn xy84_population(params: &NuclearSpinParams, cfg: &NuclearModelConfig, tau: f64) -> Result<f64> {
    let n_spins = params.n_spins();
    if n_spins > MAX_ORACLE_SPINS {
        return Err(Error::config(format!("matrix oracle supports at most {MAX_ORACLE_SPINS} spins, got {n_spins}")));
    }
    let prop = Propagators {
        n_nuc: 1 << n_spins,
        omega_l: cfg.omega_l,
        spins: params.omega_h.iter().copied().zip(params.theta.iter().copied()).collect(),
    };
    let n = prop.n_nuc;
    let half = prop.free(tau);
    let full = prop.free(2.0 * tau);

    let mut seq = prop.pulse(Axis::Y, std::f64::consts::FRAC_PI_2);
    for _ in 0..4 {
        seq = &half * seq;
        for (p, &axis) in XY8_UNIT.iter().enumerate() {
            seq = prop.pulse(axis, std::f64::consts::PI) * seq;
            seq = if p + 1 < XY8_UNIT.len() { &full * seq } else { &half * seq };
        }
    }

    let mut rho = Mat::zeros(2 * n, 2 * n);
    for k in 0..n {
        rho[(k, k)] = C::new(1.0 / n as f64, 0.0);
    }
    rho = &seq * rho * seq.adjoint();
    let decay = (-XY8_4_DURATION * tau / cfg.t2).exp();
    for r in 0..n {
        for c in 0..n {
            rho[(r, n + c)] *= decay;
            rho[(n + r, c)] *= decay;
        }
    }
    let last = prop.pulse(Axis::Y, 1.5 * std::f64::consts::PI);
    rho = &last * rho * last.adjoint();
    Ok((0..n).map(|k| rho[(k, k)].re).sum())
}

/// Oracle population mapped through the read-out fidelities.
pub fn xy84_prob_zero(params: &NuclearSpinParams, cfg: &NuclearModelConfig, tau: f64) -> Result<f64> {
    Ok(apply_readout_noise(xy84_population(params, cfg, tau)?, cfg.fidelity))
}

/// Periodic trapezoid rule for `(1 / 2 pi) int_0^{2 pi} f`.
pub fn periodic_mean(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = TAU_2PI / n as f64;
    (0..n).map(|k| f(k as f64 * h)).sum::<f64>() / n as f64
}

/// `J0(a) = (1 / 2 pi) int cos(a cos phi) dphi`.
pub fn j0_quadrature(a: f64, n: usize) -> f64 {
    periodic_mean(n, |phi| (a * phi.cos()).cos())
}

/// Phase average of the fixed-phase probability `1/2 [1 + cos(a cos phi)]`.
pub fn phase_averaged_population(a: f64, n: usize) -> f64 {
    periodic_mean(n, |phi| 0.5 * (1.0 + (a * phi.cos()).cos()))
}

/// Untruncated phase-averaged `Pr(0)` of the field model.
pub fn ac_prob_zero_exact(params: AcFieldParams, cfg: &AcModelConfig, tau: f64) -> f64 {
    let a = filter_amplitude(params, cfg.gamma, tau);
    let ideal = 0.5 * (1.0 + j0_series(a) * (-XY8_DURATION * tau / cfg.t2).exp());
    apply_readout_noise(ideal, cfg.fidelity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::bessel::j0_truncated;
    use crate::models::hz_to_rad_per_us;
    use crate::models::nuclear::m_factor;

    fn ideal_cfg(n: usize) -> NuclearModelConfig {
        NuclearModelConfig { t2: f64::INFINITY, ..NuclearModelConfig::with_spins(n) }
    }

    #[test]
    fn no_coupling_is_perfect_echo() {
        let p = NuclearSpinParams::new(vec![0.0, 0.0], vec![0.3, 1.0]).unwrap();
        for tau in [1.0, 3.3, 9.9] {
            let pop = xy84_population(&p, &ideal_cfg(2), tau).unwrap();
            assert!((pop - 1.0).abs() < 1e-12, "{pop}");
        }
    }

    #[test]
    fn single_spin_sweep_matches_closed_form() {
        let p = NuclearSpinParams::new(vec![hz_to_rad_per_us(47.0e3)], vec![30f64.to_radians()]).unwrap();
        let cfg = ideal_cfg(1);
        for i in 0..=90 {
            let tau = 1.0 + 0.1 * i as f64;
            let oracle = xy84_population(&p, &cfg, tau).unwrap();
            let closed = 0.5 * (1.0 + m_factor(&p, cfg.omega_l, tau));
            assert!((oracle - closed).abs() < 1e-6, "tau={tau}: {oracle} vs {closed}");
        }
    }

    #[test]
    fn dephasing_pulls_toward_half() {
        let p = NuclearSpinParams::new(vec![0.0], vec![0.0]).unwrap();
        let cfg = NuclearModelConfig { t2: 100.0, ..NuclearModelConfig::with_spins(1) };
        let pop = xy84_population(&p, &cfg, 2.0).unwrap();
        assert!((pop - 0.5 * (1.0 + (-128.0f64 / 100.0).exp())).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_systems() {
        let p = NuclearSpinParams::new(vec![0.1; 4], vec![0.1; 4]).unwrap();
        assert!(xy84_population(&p, &ideal_cfg(4), 1.0).is_err());
    }

    #[test]
    fn quadrature_matches_series() {
        for i in 0..=50 {
            let a = 0.01 * i as f64;
            assert!((j0_quadrature(a, 64) - j0_series(a)).abs() < 1e-14);
            assert!((j0_truncated(a, 6) - j0_series(a)).abs() < 1e-6);
        }
    }
}
