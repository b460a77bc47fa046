//! Likelihood models for the probe's binary read-out.
//!
//! Every model maps `(parameters, tau)` to `Pr(0)`, the probability that the
//! read-out reports the initial state. Probabilities leaving a model are
//! clamped into `[PROB_EPS, 1 - PROB_EPS]` so that log-likelihoods stay
//! finite.

pub mod ac;
pub mod bessel;
pub mod nuclear;
pub mod oracle;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eig::ControlGrid;
use crate::error::{Error, Result};
use crate::smc::ParticleCloud;

pub use ac::{AcFieldParams, AcModel, AcModelConfig};
pub use nuclear::{NuclearModel, NuclearModelConfig, NuclearSpinParams};

/// Lower/upper guard applied to every model probability.
pub const PROB_EPS: f64 = 1e-9;

/// Two pi.
pub const TAU_2PI: f64 = 2.0 * std::f64::consts::PI;

/// Converts an ordinary frequency in Hz to an angular frequency in rad/us.
pub fn hz_to_rad_per_us(hz: f64) -> f64 {
    TAU_2PI * hz * 1e-6
}

pub fn rad_per_us_to_hz(w: f64) -> f64 {
    w / TAU_2PI * 1e6
}

#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Read-out fidelities: `p0 = Pr(report 0 | state 0)`, `p1 = Pr(report 1 | state 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutFidelity {
    pub p0: f64,
    pub p1: f64,
}

impl ReadoutFidelity {
    pub const IDEAL: ReadoutFidelity = ReadoutFidelity { p0: 1.0, p1: 1.0 };

    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        let f = ReadoutFidelity { p0, p1 };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.p0) || !in_unit(self.p1) {
            return Err(Error::config(format!(
                "read-out fidelities must lie in [0, 1], got p0={} p1={}",
                self.p0, self.p1
            )));
        }
        if self.p0 + self.p1 <= 1.0 {
            return Err(Error::config(format!(
                "uninformative read-out: p0 + p1 = {} must exceed 1",
                self.p0 + self.p1
            )));
        }
        Ok(())
    }

    /// Slope of the affine read-out map.
    #[inline]
    pub fn contrast(&self) -> f64 {
        self.p0 + self.p1 - 1.0
    }
}

impl Default for ReadoutFidelity {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// Maps the ideal probability of state `|0>` to the probability of reporting 0.
#[inline]
pub fn apply_readout_noise(p_ideal: f64, fidelity: ReadoutFidelity) -> f64 {
    fidelity.contrast() * p_ideal + (1.0 - fidelity.p1)
}

/// A named block of parameter indices whose relative uncertainties are
/// averaged together (e.g. all hyperfine magnitudes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

/// A parametric model of the binary read-out.
pub trait LikelihoodModel: Send + Sync {
    /// Per-grid data shared by every particle in a full-grid evaluation.
    type GridCache: Send + Sync;

    fn dim(&self) -> usize;

    fn param_names(&self) -> Vec<String>;

    fn param_groups(&self) -> Vec<ParamGroup>;

    /// `Pr(0 | params, tau)`, clamped.
    fn prob_zero(&self, params: &[f64], tau: f64) -> f64;

    /// Evaluates `Pr(0)` for every row of a row-major `n x dim` location array.
    fn prob_zero_batch(&self, locations: &[f64], tau: f64, out: &mut [f64]) {
        let d = self.dim();
        for (row, o) in locations.chunks_exact(d).zip(out.iter_mut()) {
            *o = self.prob_zero(row, tau);
        }
    }

    fn grid_cache(&self, grid: &ControlGrid) -> Self::GridCache;

    /// Evaluates `Pr(0)` of one particle at every control of the cached grid.
    fn prob_zero_row(&self, cache: &Self::GridCache, params: &[f64], out: &mut [f64]);

    /// Projects a location back into the parameter bounds.
    fn clamp(&self, params: &mut [f64]);

    fn contains(&self, params: &[f64]) -> bool;

    /// Maps a location to the canonical representative of its symmetry class.
    fn canonicalize(&self, _params: &mut [f64]) {}

    /// Draws the prior particle cloud.
    fn prior_cloud(&self, n_p: usize, seed: u64) -> Result<ParticleCloud>;

    /// Probe evolution time of one shot at control `tau`, in us.
    fn probe_time(&self, tau: f64) -> f64;

    /// Draws one simulated read-out at the given true parameters; `true` means "0".
    fn sample_zero(&self, truth: &[f64], tau: f64, rng: &mut ChaCha8Rng) -> bool;
}

/// The two sensing scenarios behind one type.
#[derive(Debug, Clone)]
pub enum SensingModel {
    Nuclear(NuclearModel),
    Ac(AcModel),
}

pub enum SensingGridCache {
    Nuclear(nuclear::NuclearGridCache),
    Ac(ac::AcGridCache),
}

impl SensingModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SensingModel::Nuclear(_) => ModelKind::Nuclear,
            SensingModel::Ac(_) => ModelKind::Ac,
        }
    }

    /// Number of nuclear spins, or 0 for the field model.
    pub fn n_spins(&self) -> usize {
        match self {
            SensingModel::Nuclear(m) => m.config().n_spins,
            SensingModel::Ac(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nuclear,
    Ac,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Nuclear => f.write_str("nuclear"),
            ModelKind::Ac => f.write_str("ac"),
        }
    }
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            SensingModel::Nuclear($m) => $body,
            SensingModel::Ac($m) => $body,
        }
    };
}

impl LikelihoodModel for SensingModel {
    type GridCache = SensingGridCache;

    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }

    fn param_names(&self) -> Vec<String> {
        dispatch!(self, m => m.param_names())
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        dispatch!(self, m => m.param_groups())
    }

    fn prob_zero(&self, params: &[f64], tau: f64) -> f64 {
        dispatch!(self, m => m.prob_zero(params, tau))
    }

    fn prob_zero_batch(&self, locations: &[f64], tau: f64, out: &mut [f64]) {
        dispatch!(self, m => m.prob_zero_batch(locations, tau, out))
    }

    fn grid_cache(&self, grid: &ControlGrid) -> SensingGridCache {
        match self {
            SensingModel::Nuclear(m) => SensingGridCache::Nuclear(m.grid_cache(grid)),
            SensingModel::Ac(m) => SensingGridCache::Ac(m.grid_cache(grid)),
        }
    }

    fn prob_zero_row(&self, cache: &SensingGridCache, params: &[f64], out: &mut [f64]) {
        match (self, cache) {
            (SensingModel::Nuclear(m), SensingGridCache::Nuclear(c)) => m.prob_zero_row(c, params, out),
            (SensingModel::Ac(m), SensingGridCache::Ac(c)) => m.prob_zero_row(c, params, out),
            _ => panic!("grid cache built for a different model"),
        }
    }

    fn clamp(&self, params: &mut [f64]) {
        dispatch!(self, m => m.clamp(params))
    }

    fn contains(&self, params: &[f64]) -> bool {
        dispatch!(self, m => m.contains(params))
    }

    fn canonicalize(&self, params: &mut [f64]) {
        dispatch!(self, m => m.canonicalize(params))
    }

    fn prior_cloud(&self, n_p: usize, seed: u64) -> Result<ParticleCloud> {
        dispatch!(self, m => m.prior_cloud(n_p, seed))
    }

    fn probe_time(&self, tau: f64) -> f64 {
        dispatch!(self, m => m.probe_time(tau))
    }

    fn sample_zero(&self, truth: &[f64], tau: f64, rng: &mut ChaCha8Rng) -> bool {
        dispatch!(self, m => m.sample_zero(truth, tau, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn readout_noise_examples() {
        let ideal = ReadoutFidelity::IDEAL;
        for p in [0.0, 0.25, 0.9, 1.0] {
            assert_eq!(apply_readout_noise(p, ideal), p);
        }
        let f = ReadoutFidelity::new(0.9, 0.95).unwrap();
        assert!((apply_readout_noise(1.0, f) - 0.9).abs() < 1e-15);
        assert!((apply_readout_noise(0.0, f) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn readout_noise_is_increasing() {
        let f = ReadoutFidelity::new(0.8, 0.7).unwrap();
        let mut prev = apply_readout_noise(0.0, f);
        for i in 1..=100 {
            let v = apply_readout_noise(i as f64 / 100.0, f);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn rejects_uninformative_readout() {
        assert!(ReadoutFidelity::new(0.5, 0.5).is_err());
        assert!(ReadoutFidelity::new(1.1, 0.5).is_err());
    }

    #[test]
    fn unit_conversion_roundtrip() {
        let w = hz_to_rad_per_us(429.4e3);
        assert!((w - 2.0 * std::f64::consts::PI * 0.4294).abs() < 1e-12);
        assert!((rad_per_us_to_hz(w) - 429.4e3).abs() < 1e-6);
    }
}
