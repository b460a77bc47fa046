//! Simulated instrument: single shots against hidden true parameters with
//! probe-time accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eig::ControlGrid;
use crate::error::{Error, Result};
use crate::models::{AcFieldParams, LikelihoodModel, ModelKind, NuclearSpinParams};
use crate::rng::{rng_for, Stream};

/// One executed shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot_index: usize,
    pub batch_id: usize,
    pub tau_us: f64,
    pub outcome: u8,
    pub probe_time_us: f64,
    pub wall_time_us: f64,
    /// Outcomes folded into the cloud that produced this shot's batch.
    /// `None` for controls that were not optimized.
    pub watermark: Option<usize>,
}

/// Hidden parameters of one simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: ModelKind,
    /// Parameters in the model's location layout.
    pub params: Vec<f64>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn nuclear(params: &NuclearSpinParams, seed: u64) -> Self {
        GroundTruth { kind: ModelKind::Nuclear, params: params.to_location(), seed }
    }

    pub fn ac(params: AcFieldParams, seed: u64) -> Self {
        GroundTruth { kind: ModelKind::Ac, params: params.to_location(), seed }
    }
}

/// Result of one submitted control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub outcome: u8,
    pub probe_time_us: f64,
    /// Probe time plus per-shot overhead.
    pub wall_time_us: f64,
}

/// Anything that turns a control into a single binary outcome.
pub trait Instrument {
    fn measure(&mut self, tau: f64) -> Result<Measurement>;
}

/// Instrument backed by a likelihood model and a ground truth.
///
/// The outcome of shot `i` depends only on the truth, its seed, `i` and `tau`.
pub struct Simulator<'a, M: LikelihoodModel> {
    model: &'a M,
    truth: &'a GroundTruth,
    grid: &'a ControlGrid,
    overhead_us: f64,
    shots: usize,
}

impl<'a, M: LikelihoodModel> Simulator<'a, M> {
    pub fn new(model: &'a M, truth: &'a GroundTruth, grid: &'a ControlGrid, overhead_us: f64) -> Result<Self> {
        if truth.params.len() != model.dim() {
            return Err(Error::config("ground truth does not match the model dimension"));
        }
        if !(overhead_us >= 0.0) {
            return Err(Error::config("per-shot overhead must be non-negative"));
        }
        Ok(Simulator { model, truth, grid, overhead_us, shots: 0 })
    }

    pub fn shots_taken(&self) -> usize {
        self.shots
    }
}

impl<M: LikelihoodModel> Instrument for Simulator<'_, M> {
    fn measure(&mut self, tau: f64) -> Result<Measurement> {
        let m = run_shot(self.model, self.truth, self.grid, tau, self.shots, self.overhead_us)?;
        self.shots += 1;
        Ok(m)
    }
}

/// Executes shot number `shot_index` at control `tau`.
pub fn run_shot<M: LikelihoodModel>(
    model: &M,
    truth: &GroundTruth,
    grid: &ControlGrid,
    tau: f64,
    shot_index: usize,
    overhead_us: f64,
) -> Result<Measurement> {
    if grid.index_of(tau).is_none() {
        return Err(Error::contract(format!("control {tau} us is not on the grid")));
    }
    let mut rng = rng_for(truth.seed, Stream::Shot, shot_index as u64);
    let outcome = if model.sample_zero(&truth.params, tau, &mut rng) { 0 } else { 1 };
    let probe_time_us = model.probe_time(tau);
    Ok(Measurement { outcome, probe_time_us, wall_time_us: probe_time_us + overhead_us })
}

/// Shots and mean outcome at one control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub tau_us: f64,
    pub count: usize,
    pub mean_outcome: f64,
}

/// Per-control shot counts and mean outcomes. Controls never measured are absent.
pub fn shot_histogram(records: &[ShotRecord], grid: &ControlGrid) -> Result<Vec<HistogramBin>> {
    let mut bins: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let j = grid
            .index_of(r.tau_us)
            .ok_or_else(|| Error::contract(format!("record control {} us is not on the grid", r.tau_us)))?;
        let e = bins.entry(j).or_default();
        e.0 += 1;
        e.1 += r.outcome as usize;
    }
    Ok(bins
        .into_iter()
        .map(|(j, (n, ones))| HistogramBin { tau_us: grid.taus()[j], count: n, mean_outcome: ones as f64 / n as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AcModel, AcModelConfig, NuclearModel, NuclearModelConfig};

    fn nuclear() -> (NuclearModel, GroundTruth, ControlGrid) {
        let model = NuclearModel::new(NuclearModelConfig::with_spins(1)).unwrap();
        let p = NuclearSpinParams::new(vec![0.3], vec![0.5]).unwrap();
        (model, GroundTruth::nuclear(&p, 9), ControlGrid::uniform(1.0, 10.0, 0.01).unwrap())
    }

    fn record(tau: f64, outcome: u8) -> ShotRecord {
        ShotRecord {
            shot_index: 0,
            batch_id: 0,
            tau_us: tau,
            outcome,
            probe_time_us: 0.0,
            wall_time_us: 0.0,
            watermark: None,
        }
    }

    #[test]
    fn probe_time_accounting() {
        let (model, truth, grid) = nuclear();
        let m = run_shot(&model, &truth, &grid, 5.0, 0, 0.0).unwrap();
        assert_eq!(m.probe_time_us, 320.0);
        let m = run_shot(&model, &truth, &grid, 5.0, 0, 12.5).unwrap();
        assert_eq!(m.wall_time_us, 332.5);

        let ac = AcModel::new(AcModelConfig::default()).unwrap();
        let truth = GroundTruth::ac(AcFieldParams { omega: 2.0, b: 0.005 }, 1);
        let grid = ControlGrid::uniform(0.51, 7.0, 0.01).unwrap();
        assert_eq!(run_shot(&ac, &truth, &grid, 5.0, 0, 0.0).unwrap().probe_time_us, 80.0);
    }

    #[test]
    fn off_grid_control_rejected() {
        let (model, truth, grid) = nuclear();
        assert!(matches!(run_shot(&model, &truth, &grid, 0.5, 0, 0.0), Err(Error::Contract(_))));
        assert!(run_shot(&model, &truth, &grid, 5.005, 0, 0.0).is_err());
    }

    #[test]
    fn deterministic_stream() {
        let (model, truth, grid) = nuclear();
        let run = || {
            let mut sim = Simulator::new(&model, &truth, &grid, 0.0).unwrap();
            (0..200).map(|i| sim.measure(1.0 + 0.01 * (i % 900) as f64).unwrap().outcome).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn outcome_frequency_matches_model() {
        let (model, truth, grid) = nuclear();
        let tau = 4.2;
        let n = 100_000;
        let zeros = (0..n).filter(|&i| run_shot(&model, &truth, &grid, tau, i, 0.0).unwrap().outcome == 0).count();
        let p = model.prob_zero(&truth.params, tau);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn histogram_examples() {
        let grid = ControlGrid::uniform(1.0, 3.0, 1.0).unwrap();
        let recs = vec![record(2.0, 0), record(2.0, 1), record(2.0, 1)];
        let h = shot_histogram(&recs, &grid).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 3);
        assert!((h[0].mean_outcome - 2.0 / 3.0).abs() < 1e-15);
        assert!(h.iter().all(|b| b.tau_us != 1.0));
    }
}
