//! Wall-clock measurement of the utility kernel.

use std::time::{Duration, Instant};

use crate::eig::{ControlGrid, EigEngine, Utility};
use crate::models::LikelihoodModel;
use crate::smc::ParticleCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    pub n_p: usize,
    pub grid_size: usize,
    pub precision: &'static str,
    /// Full utility tables computed.
    pub iterations: usize,
    pub evaluations: u64,
    pub seconds: f64,
    pub evals_per_s: f64,
    /// Mean time for one full table, us.
    pub latency_us: f64,
    /// Likelihood evaluations attributable to one measurement.
    pub evals_per_measurement: f64,
    /// Shot rate the kernel alone could sustain, Hz.
    pub max_shot_rate_hz: f64,
}

/// Evaluates full utility tables until `min_duration` has elapsed (at least one).
pub fn throughput_bench<M: LikelihoodModel>(
    model: &M,
    cloud: &ParticleCloud,
    grid: &ControlGrid,
    n_batch: usize,
    min_duration: Duration,
) -> ThroughputReport {
    let engine = EigEngine::new(model, grid);
    let per_table = engine.evaluations(cloud);
    let start = Instant::now();
    let mut iterations = 0;
    loop {
        std::hint::black_box(engine.table(cloud, Utility::default()));
        iterations += 1;
        if start.elapsed() >= min_duration {
            break;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let evaluations = (iterations * per_table) as u64;
    let latency_us = seconds * 1e6 / iterations as f64;
    ThroughputReport {
        n_p: cloud.len(),
        grid_size: grid.len(),
        precision: "f64",
        iterations,
        evaluations,
        seconds,
        evals_per_s: evaluations as f64 / seconds,
        latency_us,
        evals_per_measurement: per_table as f64 / n_batch as f64,
        max_shot_rate_hz: n_batch as f64 / (latency_us * 1e-6),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{NuclearModel, NuclearModelConfig};

    #[test]
    fn counts_every_iteration() {
        let model = NuclearModel::new(NuclearModelConfig::with_spins(2)).unwrap();
        let cloud = model.prior_cloud(64, 1).unwrap();
        let grid = ControlGrid::uniform(1.0, 2.0, 0.1).unwrap();
        let r = throughput_bench(&model, &cloud, &grid, 15, Duration::ZERO);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.evaluations, 64 * 11);
        assert!((r.evals_per_measurement - 64.0 * 11.0 / 15.0).abs() < 1e-12);
    }
}
