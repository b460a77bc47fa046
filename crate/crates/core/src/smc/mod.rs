//! Weighted-particle representation of the posterior.

mod resample;
mod summary;

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::LikelihoodModel;
use crate::rng::rng_from_seed;

pub use resample::{resample_liu_west, Resampled, ResamplerConfig};
pub use summary::{summarize, PosteriorSummary};

/// Tolerance on `|sum(w) - 1|`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Where particle locations may live: clamping into bounds plus an optional
/// canonical relabeling.
pub trait Support {
    fn clamp(&self, x: &mut [f64]);

    fn canonicalize(&self, _x: &mut [f64]) {}
}

impl<M: LikelihoodModel> Support for M {
    fn clamp(&self, x: &mut [f64]) {
        LikelihoodModel::clamp(self, x)
    }

    fn canonicalize(&self, x: &mut [f64]) {
        LikelihoodModel::canonicalize(self, x)
    }
}

/// Axis-aligned box support.
#[derive(Debug, Clone)]
pub struct BoxSupport(pub Vec<[f64; 2]>);

impl Support for BoxSupport {
    fn clamp(&self, x: &mut [f64]) {
        for (v, [lo, hi]) in x.iter_mut().zip(&self.0) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// A fixed-size set of weighted particles. Locations are stored row-major,
/// one row of `dim` parameters per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleCloud {
    /// Draws `n_p` particles uniformly over `bounds` with equal weights.
    pub fn init_uniform(bounds: &[[f64; 2]], n_p: usize, seed: u64) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::config("parameter space has no dimensions"));
        }
        if let Some([lo, hi]) = bounds.iter().find(|[lo, hi]| !(lo < hi && lo.is_finite() && hi.is_finite())) {
            return Err(Error::config(format!("invalid bounds [{lo}, {hi}]")));
        }
        if n_p < 2 {
            return Err(Error::config("at least two particles are required"));
        }
        let mut rng = rng_from_seed(seed);
        let mut locations = Vec::with_capacity(n_p * bounds.len());
        for _ in 0..n_p {
            for [lo, hi] in bounds {
                locations.push(lo + (hi - lo) * rng.random::<f64>());
            }
        }
        Ok(ParticleCloud { dim: bounds.len(), locations, weights: vec![1.0 / n_p as f64; n_p] })
    }

    /// Builds a cloud from explicit parts, checking shapes and normalization.
    pub fn from_parts(dim: usize, locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || locations.len() != dim * weights.len() || weights.is_empty() {
            return Err(Error::contract("location array does not match weights x dim"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::contract("weights must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::contract(format!("weights sum to {sum}, not 1")));
        }
        Ok(ParticleCloud { dim, locations, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn locations_mut(&mut self) -> &mut [f64] {
        &mut self.locations
    }

    pub fn location(&self, k: usize) -> &[f64] {
        &self.locations[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Multiplies each weight by its likelihood and renormalizes.
    ///
    /// On a degenerate update the cloud is left untouched.
    pub fn bayes_update(&mut self, likelihoods: &[f64]) -> Result<()> {
        if likelihoods.len() != self.len() {
            return Err(Error::contract(format!("{} likelihoods for {} particles", likelihoods.len(), self.len())));
        }
        let mass: f64 = self.weights.iter().zip(likelihoods).map(|(w, l)| w * l).sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::DegenerateUpdate { mass });
        }
        let inv = 1.0 / mass;
        for (w, l) in self.weights.iter_mut().zip(likelihoods) {
            *w *= l * inv;
        }
        Ok(())
    }

    /// `1 / sum(w^2)`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted mean of the locations.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (row, w) in self.locations.chunks_exact(self.dim).zip(&self.weights) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += w * x;
            }
        }
        mean
    }

    /// Weighted covariance about the weighted mean, row-major `dim x dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        let mut centered = vec![0.0; d];
        for (row, w) in self.locations.chunks_exact(d).zip(&self.weights) {
            for (c, (x, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = x - m;
            }
            for i in 0..d {
                let wi = w * centered[i];
                for j in i..d {
                    cov[i * d + j] += wi * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[i * d + j] = cov[j * d + i];
            }
        }
        cov
    }

    /// Applies the model's canonical relabeling to every particle.
    pub fn remap_labels(&mut self, support: &impl Support) {
        for row in self.locations.chunks_exact_mut(self.dim) {
            support.canonicalize(row);
        }
    }
}
