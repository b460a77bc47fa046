use log::warn;
use nalgebra::{Cholesky, DMatrix};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ParticleCloud, Support};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Liu-West resampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplerConfig {
    /// Contraction toward the mean, in `(0, 1]`.
    pub a: f64,
    /// Resample once the effective sample size drops below this fraction of `n_p`.
    pub ess_threshold_fraction: f64,
    /// Relabel particles into the model's canonical form after resampling.
    pub remap: bool,
}

impl Default for ResamplerConfig {
    fn default() -> Self {
        ResamplerConfig { a: 0.98, ess_threshold_fraction: 0.5, remap: true }
    }
}

impl ResamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::config(format!("Liu-West a must lie in (0, 1], got {}", self.a)));
        }
        if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction < 1.0) {
            return Err(Error::config("ESS threshold fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn should_resample(&self, cloud: &ParticleCloud) -> bool {
        cloud.effective_sample_size() < self.ess_threshold_fraction * cloud.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Resampled {
    pub cloud: ParticleCloud,
    /// The jitter covariance was not positive definite and no noise was added.
    pub jitter_skipped: bool,
}

/// Liu-West resampling: multinomial ancestor selection, contraction by `a`
/// toward the weighted mean and Gaussian jitter with covariance
/// `(1 - a^2) Sigma`, so the first two moments are preserved in expectation.
///
/// New locations are clamped into the support; weights are reset to `1/n_p`.
pub fn resample_liu_west(
    cloud: &ParticleCloud,
    support: &impl Support,
    cfg: &ResamplerConfig,
    seed: u64,
) -> Result<Resampled> {
    cfg.validate()?;
    let d = cloud.dim();
    let n = cloud.len();
    let mean = cloud.mean();
    let cov = cloud.covariance();
    if cov.iter().any(|c| !c.is_finite()) {
        return Err(Error::contract("posterior covariance is not finite"));
    }

    let spread = 1.0 - cfg.a * cfg.a;
    let mut jitter_skipped = false;
    let chol = if spread > 0.0 {
        let m = DMatrix::from_row_slice(d, d, &cov) * spread;
        let c = Cholesky::new(m).map(|c| c.l());
        if c.is_none() {
            warn!("Liu-West covariance is singular; resampling without jitter");
            jitter_skipped = true;
        }
        c
    } else {
        None
    };

    let mut rng = rng_from_seed(seed);
    let ancestors =
        WeightedIndex::new(cloud.weights()).map_err(|e| Error::contract(format!("cannot resample weights: {e}")))?;

    let mut locations = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    let mut row = vec![0.0; d];
    for _ in 0..n {
        let parent = cloud.location(ancestors.sample(&mut rng));
        for ((r, &x), &m) in row.iter_mut().zip(parent).zip(&mean) {
            *r = cfg.a * x + (1.0 - cfg.a) * m;
        }
        if let Some(l) = &chol {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let mut eta = 0.0;
                for j in 0..=i {
                    eta += l[(i, j)] * z[j];
                }
                row[i] += eta;
            }
        }
        support.clamp(&mut row);
        if cfg.remap {
            support.canonicalize(&mut row);
        }
        locations.extend_from_slice(&row);
    }

    Ok(Resampled { cloud: ParticleCloud { dim: d, locations, weights: vec![1.0 / n as f64; n] }, jitter_skipped })
}
