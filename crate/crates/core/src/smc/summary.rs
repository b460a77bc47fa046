use nalgebra::DMatrix;

use super::ParticleCloud;
use crate::models::ParamGroup;

/// Posterior moments and uncertainties of a particle cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Posterior standard deviations.
    pub abs_uncertainty: Vec<f64>,
    /// `abs_uncertainty / |mean|`; `+inf` where the mean is zero.
    pub rel_uncertainty: Vec<f64>,
    /// Root-mean-square relative uncertainty of each parameter group.
    pub group_rel_uncertainty: Vec<(String, f64)>,
}

impl PosteriorSummary {
    pub fn group(&self, name: &str) -> Option<f64> {
        self.group_rel_uncertainty.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Largest grouped relative uncertainty.
    pub fn max_group_rel(&self) -> f64 {
        self.group_rel_uncertainty.iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }
}

pub fn summarize(cloud: &ParticleCloud, groups: &[ParamGroup]) -> PosteriorSummary {
    let d = cloud.dim();
    let mean = cloud.mean();
    let covariance = DMatrix::from_row_slice(d, d, &cloud.covariance());
    let abs_uncertainty: Vec<f64> = (0..d).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    let rel_uncertainty: Vec<f64> =
        abs_uncertainty.iter().zip(&mean).map(|(s, m)| if *m == 0.0 { f64::INFINITY } else { s / m.abs() }).collect();
    let group_rel_uncertainty = groups
        .iter()
        .map(|g| {
            let ms = g.indices.iter().map(|&j| rel_uncertainty[j].powi(2)).sum::<f64>() / g.indices.len() as f64;
            (g.name.clone(), ms.sqrt())
        })
        .collect();
    PosteriorSummary { mean, covariance, abs_uncertainty, rel_uncertainty, group_rel_uncertainty }
}
