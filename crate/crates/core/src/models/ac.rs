//! Probe sensing an oscillating magnetic field through an XY8 sequence.
//!
//! The inference likelihood averages over the unknown field phase and
//! truncates `J0`; the shot simulator draws the phase per shot and uses the
//! exact fixed-phase probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bessel::{j0_sixth, j0_truncated, DEFAULT_ORDER};
use super::{
    apply_readout_noise, clamp_probability, hz_to_rad_per_us, LikelihoodModel, ParamGroup, ReadoutFidelity, TAU_2PI,
};
use crate::eig::ControlGrid;
use crate::error::{Error, Result};
use crate::smc::ParticleCloud;

/// Probe evolution of one XY8 shot, in units of `tau`.
pub const XY8_DURATION: f64 = 16.0;

const ROW_ANCHOR: usize = 32;

/// Electron gyromagnetic ratio, 28.03 MHz/mT, in rad/us/mT.
pub fn electron_gamma() -> f64 {
    TAU_2PI * 28.03
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcModelConfig {
    /// Gyromagnetic ratio, rad/us/mT.
    pub gamma: f64,
    /// Probe coherence time, us.
    pub t2: f64,
    pub fidelity: ReadoutFidelity,
    /// Truncation order of the `J0` series (even).
    pub bessel_order: usize,
    /// Prior bounds on the field angular frequency, rad/us.
    pub omega_min: f64,
    pub omega_max: f64,
    /// Prior bounds on the dimensionless ratio `B gamma / omega`.
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl Default for AcModelConfig {
    fn default() -> Self {
        AcModelConfig {
            gamma: electron_gamma(),
            t2: 170.0,
            fidelity: ReadoutFidelity::IDEAL,
            bessel_order: DEFAULT_ORDER,
            omega_min: hz_to_rad_per_us(79.6e3),
            omega_max: hz_to_rad_per_us(1.35e6),
            ratio_min: 0.013,
            ratio_max: 0.177,
        }
    }
}

impl AcModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.t2 > 0.0) {
            return Err(Error::config("gamma and T2 must be positive"));
        }
        if self.bessel_order % 2 != 0 {
            return Err(Error::config("Bessel truncation order must be even"));
        }
        if !(self.omega_min > 0.0 && self.omega_min < self.omega_max) {
            return Err(Error::config("field frequency bounds must satisfy 0 < min < max"));
        }
        if !(self.ratio_min >= 0.0 && self.ratio_min < self.ratio_max) {
            return Err(Error::config("field ratio bounds must satisfy 0 <= min < max"));
        }
        self.fidelity.validate()
    }
}

/// Field angular frequency (rad/us) and magnitude (mT).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcFieldParams {
    pub omega: f64,
    pub b: f64,
}

impl AcFieldParams {
    pub fn to_location(&self) -> Vec<f64> {
        vec![self.omega, self.b]
    }
}

/// Sum of `cos(k x)` over `k in {3, 5, 11, 13}` from `cos x` via Chebyshev `T_k`.
#[inline(always)]
fn harmonic_sum(cos_x: f64) -> f64 {
    let two_c = 2.0 * cos_x;
    let mut prev = 1.0;
    let mut cur = cos_x;
    let mut sum = 0.0;
    for k in 2..=13 {
        let next = two_c * cur - prev;
        prev = cur;
        cur = next;
        if matches!(k, 3 | 5 | 11 | 13) {
            sum += cur;
        }
    }
    sum
}

/// Accumulated phase amplitude `a` of the XY8 filter.
pub fn filter_amplitude(params: AcFieldParams, gamma: f64, tau: f64) -> f64 {
    let (s, c) = (0.5 * params.omega * tau).sin_cos();
    amplitude_from(16.0 * params.b * gamma / params.omega, s, c)
}

#[inline(always)]
fn amplitude_from(scale: f64, sin_x: f64, cos_x: f64) -> f64 {
    scale * sin_x * sin_x * sin_x * harmonic_sum(cos_x)
}

#[inline]
fn decay_factor(t2: f64, tau: f64) -> f64 {
    (-XY8_DURATION * tau / t2).exp()
}

/// `Pr(0 | (omega, B), tau)` with the truncated, phase-averaged likelihood.
pub fn likelihood_ac(params: AcFieldParams, cfg: &AcModelConfig, tau: f64) -> f64 {
    let a = filter_amplitude(params, cfg.gamma, tau);
    let j0 = if cfg.bessel_order == DEFAULT_ORDER { j0_sixth(a) } else { j0_truncated(a, cfg.bessel_order) };
    let ideal = 0.5 * (1.0 + j0 * decay_factor(cfg.t2, tau));
    clamp_probability(apply_readout_noise(ideal, cfg.fidelity))
}

/// Exact probability of reporting 0 at a fixed field phase `phase`.
pub fn fixed_phase_prob_zero(params: AcFieldParams, cfg: &AcModelConfig, tau: f64, phase: f64) -> f64 {
    let a = filter_amplitude(params, cfg.gamma, tau);
    let ideal = 0.5 + 0.5 * (a * (8.0 * params.omega * tau + phase).cos()).cos() * decay_factor(cfg.t2, tau);
    apply_readout_noise(ideal, cfg.fidelity)
}

#[derive(Debug, Clone)]
pub struct AcModel {
    cfg: AcModelConfig,
}

pub struct AcGridCache {
    taus: Vec<f64>,
    step: Option<f64>,
    decay: Vec<f64>,
}

impl AcModel {
    pub fn new(cfg: AcModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AcModel { cfg })
    }

    pub fn config(&self) -> &AcModelConfig {
        &self.cfg
    }

    pub fn likelihood(&self, params: AcFieldParams, tau: f64) -> f64 {
        likelihood_ac(params, &self.cfg, tau)
    }

    /// Allowed field range at frequency `omega`.
    pub fn field_bounds(&self, omega: f64) -> [f64; 2] {
        [self.cfg.ratio_min * omega / self.cfg.gamma, self.cfg.ratio_max * omega / self.cfg.gamma]
    }

    #[inline(always)]
    fn prob_from_amplitude(&self, a: f64, decay: f64) -> f64 {
        let j0 =
            if self.cfg.bessel_order == DEFAULT_ORDER { j0_sixth(a) } else { j0_truncated(a, self.cfg.bessel_order) };
        clamp_probability(apply_readout_noise(0.5 * (1.0 + j0 * decay), self.cfg.fidelity))
    }
}

impl LikelihoodModel for AcModel {
    type GridCache = AcGridCache;

    fn dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        vec!["omega".into(), "b".into()]
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        vec![ParamGroup { name: "omega".into(), indices: vec![0] }, ParamGroup { name: "b".into(), indices: vec![1] }]
    }

    fn prob_zero(&self, params: &[f64], tau: f64) -> f64 {
        likelihood_ac(AcFieldParams { omega: params[0], b: params[1] }, &self.cfg, tau)
    }

    fn grid_cache(&self, grid: &ControlGrid) -> AcGridCache {
        let taus = grid.taus().to_vec();
        AcGridCache { decay: taus.iter().map(|&t| decay_factor(self.cfg.t2, t)).collect(), step: grid.step(), taus }
    }

    fn prob_zero_row(&self, cache: &AcGridCache, params: &[f64], out: &mut [f64]) {
        let (omega, b) = (params[0], params[1]);
        let scale = 16.0 * b * self.cfg.gamma / omega;
        let half = 0.5 * omega;
        let n_tau = cache.taus.len();
        match cache.step {
            Some(h) => {
                let (sin_d, cos_d) = (half * h).sin_cos();
                for start in (0..n_tau).step_by(ROW_ANCHOR) {
                    let end = (start + ROW_ANCHOR).min(n_tau);
                    let (mut s, mut c) = (half * cache.taus[start]).sin_cos();
                    for j in start..end {
                        out[j] = self.prob_from_amplitude(amplitude_from(scale, s, c), cache.decay[j]);
                        let c_next = c * cos_d - s * sin_d;
                        s = s * cos_d + c * sin_d;
                        c = c_next;
                    }
                }
            }
            None => {
                for j in 0..n_tau {
                    let (s, c) = (half * cache.taus[j]).sin_cos();
                    out[j] = self.prob_from_amplitude(amplitude_from(scale, s, c), cache.decay[j]);
                }
            }
        }
    }

    fn clamp(&self, params: &mut [f64]) {
        params[0] = params[0].clamp(self.cfg.omega_min, self.cfg.omega_max);
        let [lo, hi] = self.field_bounds(params[0]);
        params[1] = params[1].clamp(lo, hi);
    }

    fn contains(&self, params: &[f64]) -> bool {
        if params.len() != 2 || !(self.cfg.omega_min..=self.cfg.omega_max).contains(&params[0]) {
            return false;
        }
        let [lo, hi] = self.field_bounds(params[0]);
        // relative slack for the omega-dependent field bound
        params[1] >= lo * (1.0 - 1e-12) && params[1] <= hi * (1.0 + 1e-12)
    }

    /// Uniform in frequency and in the ratio `B gamma / omega`.
    fn prior_cloud(&self, n_p: usize, seed: u64) -> Result<ParticleCloud> {
        let bounds = [[self.cfg.omega_min, self.cfg.omega_max], [self.cfg.ratio_min, self.cfg.ratio_max]];
        let mut cloud = ParticleCloud::init_uniform(&bounds, n_p, seed)?;
        let gamma = self.cfg.gamma;
        for row in cloud.locations_mut().chunks_exact_mut(2) {
            row[1] = row[1] * row[0] / gamma;
        }
        Ok(cloud)
    }

    fn probe_time(&self, tau: f64) -> f64 {
        XY8_DURATION * tau
    }

    fn sample_zero(&self, truth: &[f64], tau: f64, rng: &mut ChaCha8Rng) -> bool {
        let phase = rng.random::<f64>() * TAU_2PI;
        let p = fixed_phase_prob_zero(AcFieldParams { omega: truth[0], b: truth[1] }, &self.cfg, tau, phase);
        rng.random::<f64>() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(t2: f64) -> AcModelConfig {
        AcModelConfig { t2, ..AcModelConfig::default() }
    }

    #[test]
    fn zero_field_is_pure_decay() {
        let cfg = ideal(170.0);
        let p = AcFieldParams { omega: 3.0, b: 0.0 };
        for tau in [0.51, 2.0, 6.9] {
            let expect = 0.5 * (1.0 + (-16.0 * tau / 170.0f64).exp());
            assert!((likelihood_ac(p, &cfg, tau) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_zero_at_full_period() {
        let cfg = ideal(170.0);
        let omega = 2.0;
        let tau = TAU_2PI / omega;
        let p = AcFieldParams { omega, b: 0.01 };
        let b0 = AcFieldParams { omega, b: 0.0 };
        assert!((likelihood_ac(p, &cfg, tau) - likelihood_ac(b0, &cfg, tau)).abs() < 1e-12);
    }

    #[test]
    fn harmonic_sum_matches_cosines() {
        for i in 0..100 {
            let x = -3.0 + 0.06 * i as f64;
            let direct: f64 = [3.0, 5.0, 11.0, 13.0].iter().map(|k| (k * x).cos()).sum();
            assert!((harmonic_sum(x.cos()) - direct).abs() < 1e-11);
        }
    }

    #[test]
    fn amplitude_is_periodic_in_tau() {
        let p = AcFieldParams { omega: 2.7, b: 0.02 };
        let period = TAU_2PI / p.omega;
        for i in 0..50 {
            let tau = 0.5 + 0.1 * i as f64;
            let a0 = filter_amplitude(p, electron_gamma(), tau);
            let a1 = filter_amplitude(p, electron_gamma(), tau + period);
            assert!((a0 - a1).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_row_matches_scalar() {
        let model = AcModel::new(AcModelConfig::default()).unwrap();
        let grid = ControlGrid::uniform(0.51, 7.0, 0.01).unwrap();
        let cache = model.grid_cache(&grid);
        let cloud = model.prior_cloud(20, 9).unwrap();
        let mut row = vec![0.0; grid.len()];
        for k in 0..20 {
            let x = cloud.location(k);
            model.prob_zero_row(&cache, x, &mut row);
            for (j, &tau) in grid.taus().iter().enumerate() {
                assert!((row[j] - model.prob_zero(x, tau)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn prior_respects_ratio_bounds() {
        let model = AcModel::new(AcModelConfig::default()).unwrap();
        let cloud = model.prior_cloud(500, 1).unwrap();
        for k in 0..500 {
            assert!(model.contains(cloud.location(k)));
        }
    }
}
