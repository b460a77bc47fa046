//! Probe coupled to `n_C` weakly interacting nuclear spins under an XY8-4
//! decoupling sequence (32 pi pulses, total free evolution `64 tau`).
//!
//! Locations are laid out as `[w_h1, .., w_hn, theta_1, .., theta_n]` with
//! hyperfine magnitudes in rad/us and angles in rad.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_readout_noise, clamp_probability, hz_to_rad_per_us, LikelihoodModel, ParamGroup, ReadoutFidelity, TAU_2PI,
};
use crate::eig::ControlGrid;
use crate::error::{Error, Result};
use crate::smc::ParticleCloud;

/// Number of decoupling pi pulses in XY8-4.
pub const XY8_4_PULSES: usize = 32;

/// Total probe evolution of one XY8-4 shot, in units of `tau`.
pub const XY8_4_DURATION: f64 = 64.0;

/// Recurrence steps between exact re-evaluations of `sin`/`cos` in grid rows.
const ROW_ANCHOR: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuclearModelConfig {
    /// Nuclear Larmor angular frequency, rad/us.
    pub omega_l: f64,
    /// Probe coherence time, us. `f64::INFINITY` disables decay.
    pub t2: f64,
    pub n_spins: usize,
    pub fidelity: ReadoutFidelity,
    /// Lower prior bound on every hyperfine magnitude, rad/us.
    pub omega_h_min: f64,
    /// Upper prior bound on every hyperfine magnitude, rad/us.
    pub omega_h_max: f64,
}

impl NuclearModelConfig {
    /// Larmor frequency 429.4 kHz, T2 = 3 ms, ideal read-out, hyperfine
    /// bounds 6 to 265 kHz.
    pub fn with_spins(n_spins: usize) -> Self {
        NuclearModelConfig {
            omega_l: hz_to_rad_per_us(429.4e3),
            t2: 3000.0,
            n_spins,
            fidelity: ReadoutFidelity::IDEAL,
            omega_h_min: hz_to_rad_per_us(6e3),
            omega_h_max: hz_to_rad_per_us(265e3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_l > 0.0 && self.omega_l.is_finite()) {
            return Err(Error::config("Larmor frequency must be positive"));
        }
        if !(self.t2 > 0.0) {
            return Err(Error::config("T2 must be positive"));
        }
        if self.n_spins == 0 {
            return Err(Error::config("at least one nuclear spin is required"));
        }
        if !(self.omega_h_min >= 0.0 && self.omega_h_min < self.omega_h_max) {
            return Err(Error::config("hyperfine bounds must satisfy 0 <= min < max"));
        }
        self.fidelity.validate()
    }
}

/// Hyperfine magnitudes and angles of each nuclear spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearSpinParams {
    pub omega_h: Vec<f64>,
    pub theta: Vec<f64>,
}

impl NuclearSpinParams {
    pub fn new(omega_h: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if omega_h.len() != theta.len() || omega_h.is_empty() {
            return Err(Error::config("omega_h and theta must be non-empty and equally long"));
        }
        if omega_h.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::config("hyperfine magnitudes must be non-negative"));
        }
        Ok(NuclearSpinParams { omega_h, theta })
    }

    pub fn n_spins(&self) -> usize {
        self.omega_h.len()
    }

    pub fn to_location(&self) -> Vec<f64> {
        self.omega_h.iter().chain(&self.theta).copied().collect()
    }

    pub fn from_location(x: &[f64]) -> Self {
        let n = x.len() / 2;
        NuclearSpinParams { omega_h: x[..n].to_vec(), theta: x[n..].to_vec() }
    }
}

/// Chebyshev polynomial of the second kind `U_15(x)`, so that
/// `sin(16 phi) = sin(phi) U_15(cos phi)`.
#[inline(always)]
fn chebyshev_u15(x: f64) -> f64 {
    let two_x = 2.0 * x;
    let mut prev = 1.0;
    let mut cur = two_x;
    for _ in 1..15 {
        let next = two_x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[sin(16 phi) / cos(phi / 2)]^2` as a polynomial in `cos phi`.
///
/// With `phi` on the principal branch `[0, pi]`, `sin^2 phi = 1 - c^2` and
/// `cos^2(phi/2) = (1 + c) / 2`, so the quotient is `2 (1 - c) U_15(c)^2`; the
/// removable singularity at `phi = pi` never has to be evaluated.
#[inline(always)]
pub fn pulse_filter_sq(cos_phi: f64) -> f64 {
    let u = chebyshev_u15(cos_phi);
    2.0 * (1.0 - cos_phi) * u * u
}

/// Particle-independent constants of a single spin.
#[derive(Debug, Clone, Copy)]
struct SpinConsts {
    /// Effective precession frequency in the `|1>` manifold.
    omega_eff: f64,
    /// `(w_h cos theta + w_L) / omega_eff`.
    axial: f64,
    /// `(w_h sin theta / omega_eff)^2`.
    transverse_sq: f64,
}

#[inline(always)]
fn spin_consts(omega_h: f64, theta: f64, omega_l: f64) -> SpinConsts {
    let (sin_t, cos_t) = theta.sin_cos();
    let omega_eff = (omega_h * omega_h + omega_l * omega_l + 2.0 * omega_h * omega_l * cos_t).sqrt();
    if omega_eff == 0.0 {
        return SpinConsts { omega_eff, axial: 1.0, transverse_sq: 0.0 };
    }
    let t = omega_h * sin_t / omega_eff;
    SpinConsts { omega_eff, axial: (omega_h * cos_t + omega_l) / omega_eff, transverse_sq: t * t }
}

/// Larmor-dependent factors of one control value.
#[derive(Debug, Clone, Copy)]
struct LarmorTerms {
    cos_l: f64,
    sin_l: f64,
    /// `sin^2(w_L tau / 2)`.
    half_sq: f64,
}

#[inline(always)]
fn larmor_terms(omega_l: f64, tau: f64) -> LarmorTerms {
    let (sin_l, cos_l) = (omega_l * tau).sin_cos();
    LarmorTerms { cos_l, sin_l, half_sq: 0.5 * (1.0 - cos_l) }
}

/// One spin's factor of `M`, given `cos`/`sin` of `omega_eff * tau`.
#[inline(always)]
fn spin_factor(k: SpinConsts, cos_e: f64, sin_e: f64, l: LarmorTerms) -> f64 {
    let cos_phi = (cos_e * l.cos_l - k.axial * sin_e * l.sin_l).clamp(-1.0, 1.0);
    let filter = pulse_filter_sq(cos_phi);
    let coupling = k.transverse_sq * 0.5 * (1.0 - cos_e) * l.half_sq;
    1.0 - 2.0 * filter * coupling
}

/// Factor of `M` contributed by a single spin.
pub fn spin_m_factor(omega_h: f64, theta: f64, omega_l: f64, tau: f64) -> f64 {
    let k = spin_consts(omega_h, theta, omega_l);
    let (sin_e, cos_e) = (k.omega_eff * tau).sin_cos();
    spin_factor(k, cos_e, sin_e, larmor_terms(omega_l, tau))
}

/// The coherence factor `M`: product of the single-spin factors.
pub fn m_factor(params: &NuclearSpinParams, omega_l: f64, tau: f64) -> f64 {
    params.omega_h.iter().zip(&params.theta).map(|(&w, &t)| spin_m_factor(w, t, omega_l, tau)).product()
}

#[inline(always)]
fn readout_from_m(m: f64, decay: f64, fidelity: ReadoutFidelity) -> f64 {
    let ideal = 1.0 / 3.0 + 0.5 * (m + 1.0 / 3.0) * decay;
    clamp_probability(apply_readout_noise(ideal, fidelity))
}

#[inline]
fn decay_factor(t2: f64, tau: f64) -> f64 {
    (-XY8_4_DURATION * tau / t2).exp()
}

/// `Pr(0 | (w_h, theta), tau)` of the nuclear-spin model.
pub fn likelihood_nuclear(params: &NuclearSpinParams, cfg: &NuclearModelConfig, tau: f64) -> f64 {
    readout_from_m(m_factor(params, cfg.omega_l, tau), decay_factor(cfg.t2, tau), cfg.fidelity)
}

/// Folds an angle into `[0, pi]` using `theta -> 2 pi - theta`.
pub fn fold_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU_2PI);
    if t > PI {
        TAU_2PI - t
    } else {
        t
    }
}

#[derive(Debug, Clone)]
pub struct NuclearModel {
    cfg: NuclearModelConfig,
}

pub struct NuclearGridCache {
    taus: Vec<f64>,
    step: Option<f64>,
    larmor: Vec<LarmorTerms>,
    decay: Vec<f64>,
}

impl NuclearModel {
    pub fn new(cfg: NuclearModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NuclearModel { cfg })
    }

    pub fn config(&self) -> &NuclearModelConfig {
        &self.cfg
    }

    pub fn likelihood(&self, params: &NuclearSpinParams, tau: f64) -> f64 {
        likelihood_nuclear(params, &self.cfg, tau)
    }

    /// Per-dimension prior box: hyperfine bounds, then `[0, pi]` for each angle.
    pub fn bounds(&self) -> Vec<[f64; 2]> {
        let n = self.cfg.n_spins;
        let mut b = vec![[self.cfg.omega_h_min, self.cfg.omega_h_max]; n];
        b.extend(std::iter::repeat([0.0, PI]).take(n));
        b
    }

    #[inline(always)]
    fn prob_with(&self, params: &[f64], tau: f64, l: LarmorTerms, decay: f64) -> f64 {
        let n = self.cfg.n_spins;
        let mut m = 1.0;
        for q in 0..n {
            let k = spin_consts(params[q], params[n + q], self.cfg.omega_l);
            let (sin_e, cos_e) = (k.omega_eff * tau).sin_cos();
            m *= spin_factor(k, cos_e, sin_e, l);
        }
        readout_from_m(m, decay, self.cfg.fidelity)
    }
}

impl LikelihoodModel for NuclearModel {
    type GridCache = NuclearGridCache;

    fn dim(&self) -> usize {
        2 * self.cfg.n_spins
    }

    fn param_names(&self) -> Vec<String> {
        let n = self.cfg.n_spins;
        (1..=n).map(|q| format!("omega_h{q}")).chain((1..=n).map(|q| format!("theta{q}"))).collect()
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        let n = self.cfg.n_spins;
        vec![
            ParamGroup { name: "omega_h".into(), indices: (0..n).collect() },
            ParamGroup { name: "theta".into(), indices: (n..2 * n).collect() },
        ]
    }

    fn prob_zero(&self, params: &[f64], tau: f64) -> f64 {
        self.prob_with(params, tau, larmor_terms(self.cfg.omega_l, tau), decay_factor(self.cfg.t2, tau))
    }

    fn prob_zero_batch(&self, locations: &[f64], tau: f64, out: &mut [f64]) {
        let l = larmor_terms(self.cfg.omega_l, tau);
        let decay = decay_factor(self.cfg.t2, tau);
        for (row, o) in locations.chunks_exact(self.dim()).zip(out.iter_mut()) {
            *o = self.prob_with(row, tau, l, decay);
        }
    }

    fn grid_cache(&self, grid: &ControlGrid) -> NuclearGridCache {
        let taus = grid.taus().to_vec();
        NuclearGridCache {
            larmor: taus.iter().map(|&t| larmor_terms(self.cfg.omega_l, t)).collect(),
            decay: taus.iter().map(|&t| decay_factor(self.cfg.t2, t)).collect(),
            step: grid.step(),
            taus,
        }
    }

    fn prob_zero_row(&self, cache: &NuclearGridCache, params: &[f64], out: &mut [f64]) {
        let n_tau = cache.taus.len();
        let out = &mut out[..n_tau];
        out.fill(1.0);
        let n = self.cfg.n_spins;
        for q in 0..n {
            let k = spin_consts(params[q], params[n + q], self.cfg.omega_l);
            match cache.step {
                Some(h) => {
                    // Rotate (cos, sin) of omega_eff * tau along the uniform
                    // grid, re-anchoring periodically to bound drift.
                    let (sin_d, cos_d) = (k.omega_eff * h).sin_cos();
                    for start in (0..n_tau).step_by(ROW_ANCHOR) {
                        let end = (start + ROW_ANCHOR).min(n_tau);
                        let (mut s, mut c) = (k.omega_eff * cache.taus[start]).sin_cos();
                        for j in start..end {
                            out[j] *= spin_factor(k, c, s, cache.larmor[j]);
                            let c_next = c * cos_d - s * sin_d;
                            s = s * cos_d + c * sin_d;
                            c = c_next;
                        }
                    }
                }
                None => {
                    for j in 0..n_tau {
                        let (s, c) = (k.omega_eff * cache.taus[j]).sin_cos();
                        out[j] *= spin_factor(k, c, s, cache.larmor[j]);
                    }
                }
            }
        }
        for (o, &decay) in out.iter_mut().zip(&cache.decay) {
            *o = readout_from_m(*o, decay, self.cfg.fidelity);
        }
    }

    fn clamp(&self, params: &mut [f64]) {
        let n = self.cfg.n_spins;
        for w in &mut params[..n] {
            *w = w.clamp(self.cfg.omega_h_min, self.cfg.omega_h_max);
        }
        for t in &mut params[n..] {
            *t = t.clamp(0.0, PI);
        }
    }

    fn contains(&self, params: &[f64]) -> bool {
        let n = self.cfg.n_spins;
        params.len() == 2 * n
            && params[..n].iter().all(|w| (self.cfg.omega_h_min..=self.cfg.omega_h_max).contains(w))
            && params[n..].iter().all(|t| (0.0..=PI).contains(t))
    }

    /// Sorts spins by ascending hyperfine magnitude and folds angles into `[0, pi]`.
    fn canonicalize(&self, params: &mut [f64]) {
        let n = self.cfg.n_spins;
        for t in &mut params[n..] {
            *t = fold_angle(*t);
        }
        if n > 1 {
            let mut pairs: Vec<(f64, f64)> = (0..n).map(|q| (params[q], params[n + q])).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (q, (w, t)) in pairs.into_iter().enumerate() {
                params[q] = w;
                params[n + q] = t;
            }
        }
    }

    fn prior_cloud(&self, n_p: usize, seed: u64) -> Result<ParticleCloud> {
        ParticleCloud::init_uniform(&self.bounds(), n_p, seed)
    }

    fn probe_time(&self, tau: f64) -> f64 {
        XY8_4_DURATION * tau
    }

    fn sample_zero(&self, truth: &[f64], tau: f64, rng: &mut ChaCha8Rng) -> bool {
        rng.random::<f64>() < self.prob_zero(truth, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_params() -> NuclearSpinParams {
        NuclearSpinParams::new(
            vec![hz_to_rad_per_us(47.0e3), hz_to_rad_per_us(83.8e3)],
            vec![30f64.to_radians(), 21f64.to_radians()],
        )
        .unwrap()
    }

    fn ideal_cfg(n: usize) -> NuclearModelConfig {
        NuclearModelConfig { t2: f64::INFINITY, ..NuclearModelConfig::with_spins(n) }
    }

    /// Direct transcription through `phi = arccos(.)`, nudging `phi` off the
    /// removable singularity.
    fn spin_factor_via_angle(w: f64, theta: f64, wl: f64, tau: f64) -> f64 {
        let we = (w * w + wl * wl + 2.0 * w * wl * theta.cos()).sqrt();
        let cos_phi =
            (we * tau).cos() * (wl * tau).cos() - (w * theta.cos() + wl) / we * (we * tau).sin() * (wl * tau).sin();
        let mut phi = cos_phi.clamp(-1.0, 1.0).acos();
        if (PI - phi).abs() < 1e-9 {
            phi -= 1e-9;
        }
        let filter = (16.0 * phi).sin() / (phi / 2.0).cos();
        let coupling = w * theta.sin() * (we * tau / 2.0).sin() * (wl * tau / 2.0).sin() / we;
        1.0 - 2.0 * filter * filter * coupling * coupling
    }

    #[test]
    fn polynomial_filter_matches_angle_form() {
        let wl = hz_to_rad_per_us(429.4e3);
        for i in 0..500 {
            let tau = 1.0 + i as f64 * 0.018;
            for (w, t) in [(0.3, 0.5), (0.52, 0.37), (1.4, 2.9), (0.05, 1.57)] {
                let a = spin_m_factor(w, t, wl, tau);
                let b = spin_factor_via_angle(w, t, wl, tau);
                assert!((a - b).abs() < 1e-9, "tau={tau} w={w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn filter_limit_at_phi_pi() {
        // sin(16 phi)/cos(phi/2) -> -32 as phi -> pi
        assert!((pulse_filter_sq(-1.0) - 1024.0).abs() < 1e-9);
        assert_eq!(pulse_filter_sq(1.0), 0.0);
    }

    #[test]
    fn zero_angle_gives_pure_decay() {
        let cfg = NuclearModelConfig::with_spins(2);
        let p = NuclearSpinParams::new(vec![0.3, 0.5], vec![0.0, 0.0]).unwrap();
        for tau in [1.0, 2.5, 7.3, 10.0] {
            let expect = 1.0 / 3.0 + 2.0 / 3.0 * (-64.0 * tau / cfg.t2).exp();
            assert!((likelihood_nuclear(&p, &cfg, tau) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn short_tau_limit_is_one() {
        let cfg = NuclearModelConfig::with_spins(2);
        let p = likelihood_nuclear(&reference_params(), &cfg, 1e-9);
        assert!((p - 1.0).abs() < 1e-8, "{p}");
    }

    #[test]
    fn m_is_product_of_single_spin_factors() {
        let p = reference_params();
        let wl = hz_to_rad_per_us(429.4e3);
        for i in 0..200 {
            let tau = 1.0 + 0.045 * i as f64;
            let joint = m_factor(&p, wl, tau);
            let single: f64 = (0..2).map(|q| spin_m_factor(p.omega_h[q], p.theta[q], wl, tau)).product();
            assert!((joint - single).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_and_permutation_symmetry() {
        let model = NuclearModel::new(ideal_cfg(2)).unwrap();
        let x = reference_params().to_location();
        let mirrored = vec![x[0], x[1], TAU_2PI - x[2], TAU_2PI - x[3]];
        let swapped = vec![x[1], x[0], x[3], x[2]];
        for i in 0..100 {
            let tau = 1.0 + 0.09 * i as f64;
            let p = model.prob_zero(&x, tau);
            assert!((p - model.prob_zero(&mirrored, tau)).abs() < 1e-12);
            assert!((p - model.prob_zero(&swapped, tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_reference_particle() {
        let model = NuclearModel::new(NuclearModelConfig::with_spins(2)).unwrap();
        let mut x = vec![hz_to_rad_per_us(83.8e3), hz_to_rad_per_us(47.0e3), 21f64.to_radians(), 30f64.to_radians()];
        model.canonicalize(&mut x);
        assert_eq!(x[0], hz_to_rad_per_us(47.0e3));
        assert_eq!(x[1], hz_to_rad_per_us(83.8e3));
        assert_eq!(x[2], 30f64.to_radians());
        assert_eq!(x[3], 21f64.to_radians());
        let before = x.clone();
        model.canonicalize(&mut x);
        assert_eq!(x, before);
    }

    #[test]
    fn fold_350_degrees() {
        let folded = fold_angle(350f64.to_radians());
        assert!((folded - 10f64.to_radians()).abs() < 1e-12);
        let model = NuclearModel::new(NuclearModelConfig::with_spins(1)).unwrap();
        for tau in [1.3, 4.4, 8.8] {
            let a = model.prob_zero(&[0.3, 350f64.to_radians()], tau);
            let b = model.prob_zero(&[0.3, folded], tau);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_row_matches_scalar() {
        let model = NuclearModel::new(NuclearModelConfig::with_spins(2)).unwrap();
        let grid = ControlGrid::uniform(1.0, 10.0, 0.01).unwrap();
        let cache = model.grid_cache(&grid);
        let x = reference_params().to_location();
        let mut row = vec![0.0; grid.len()];
        model.prob_zero_row(&cache, &x, &mut row);
        for (j, &tau) in grid.taus().iter().enumerate() {
            assert!((row[j] - model.prob_zero(&x, tau)).abs() < 1e-11, "j={j}");
        }
        let irregular = ControlGrid::from_taus(vec![1.0, 1.5, 4.0, 9.99]).unwrap();
        let cache = model.grid_cache(&irregular);
        let mut row = vec![0.0; 4];
        model.prob_zero_row(&cache, &x, &mut row);
        for (j, &tau) in irregular.taus().iter().enumerate() {
            assert_eq!(row[j], model.prob_zero(&x, tau));
        }
    }

    #[test]
    fn batch_matches_scalar() {
        let model = NuclearModel::new(NuclearModelConfig::with_spins(2)).unwrap();
        let cloud = model.prior_cloud(64, 3).unwrap();
        let mut out = vec![0.0; 64];
        model.prob_zero_batch(cloud.locations(), 3.21, &mut out);
        for k in 0..64 {
            assert_eq!(out[k], model.prob_zero(cloud.location(k), 3.21));
        }
    }
}
