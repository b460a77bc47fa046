//! Benchmark campaigns: ground-truth sweeps, one run per combination and mode,
//! and median curves over runs.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eig::ControlGrid;
use crate::error::{Error, Result};
use crate::models::{
    hz_to_rad_per_us, nuclear::fold_angle, AcFieldParams, LikelihoodModel, ModelKind, SensingModel, TAU_2PI,
};
use crate::orchestrator::{run, Mode, RunConfig, RunTrace};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::sim::GroundTruth;

/// Parameter sweep of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: ModelKind,
    /// Nuclear spins per combination (nuclear only).
    pub n_spins: usize,
    /// Swept frequency range: hyperfine strength (nuclear) or field frequency (AC), Hz.
    pub freq_range_hz: [f64; 2],
    pub freq_points: usize,
    /// Field strength range as a fraction of `omega / gamma` (AC only).
    pub ratio_range: [f64; 2],
    pub ratio_points: usize,
    /// Combinations to generate.
    pub n_bench: usize,
}

impl SweepSpec {
    pub fn nuclear(n_spins: usize) -> Self {
        let n_bench = if n_spins == 3 { 1140 } else { 30usize.pow(n_spins as u32) };
        SweepSpec {
            kind: ModelKind::Nuclear,
            n_spins,
            freq_range_hz: [19.0e3, 83.4e3],
            freq_points: 30,
            ratio_range: [0.0, 0.0],
            ratio_points: 0,
            n_bench,
        }
    }

    pub fn ac() -> Self {
        SweepSpec {
            kind: ModelKind::Ac,
            n_spins: 0,
            freq_range_hz: [111.0e3, 1.27e6],
            freq_points: 20,
            ratio_range: [0.031, 0.169],
            ratio_points: 20,
            n_bench: 400,
        }
    }

    /// Size of the deterministic grid before subsetting.
    pub fn grid_size(&self) -> Result<usize> {
        let n = match self.kind {
            ModelKind::Nuclear => u32::try_from(self.n_spins).ok().and_then(|s| self.freq_points.checked_pow(s)),
            ModelKind::Ac => self.freq_points.checked_mul(self.ratio_points),
        };
        n.ok_or_else(|| Error::config("sweep grid is too large"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ModelKind::Nuclear && self.n_spins == 0 {
            return Err(Error::config("nuclear sweep needs at least one spin"));
        }
        if !(self.freq_range_hz[0] > 0.0 && self.freq_range_hz[1] >= self.freq_range_hz[0]) {
            return Err(Error::config("invalid sweep frequency range"));
        }
        if self.kind == ModelKind::Ac && !(self.ratio_range[0] > 0.0 && self.ratio_range[1] >= self.ratio_range[0]) {
            return Err(Error::config("invalid sweep field-ratio range"));
        }
        let grid = self.grid_size()?;
        if self.n_bench == 0 || self.n_bench > grid {
            return Err(Error::config(format!(
                "sweep asks for {} combinations but its grid holds {grid}",
                self.n_bench
            )));
        }
        Ok(())
    }
}

fn linspace(range: [f64; 2], n: usize, i: usize) -> f64 {
    if n <= 1 {
        range[0]
    } else {
        range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
    }
}

/// Ground truths for a sweep: a deterministic grid over the swept
/// parameters (a seeded subset when `n_bench` is smaller), crossed with seeded
/// draws for the randomized ones. Nuclear angles are drawn on `[0, 2 pi)` and
/// folded.
pub fn generate_sweep(spec: &SweepSpec, model: &SensingModel, seed: u64) -> Result<Vec<GroundTruth>> {
    spec.validate()?;
    if spec.kind != model.kind() {
        return Err(Error::config("sweep and model kinds differ"));
    }
    let grid = spec.grid_size()?;
    let mut cells: Vec<usize> = if spec.n_bench == grid {
        (0..grid).collect()
    } else {
        sample(&mut rng_for(seed, Stream::Sweep, u64::MAX), grid, spec.n_bench).into_vec()
    };
    cells.sort_unstable();

    let mut truths = Vec::with_capacity(cells.len());
    for (i, cell) in cells.into_iter().enumerate() {
        let shot_seed = derive_seed(seed, Stream::Shot, i as u64);
        let mut params = match spec.kind {
            ModelKind::Nuclear => {
                let mut rng = rng_for(seed, Stream::Sweep, i as u64);
                let mut rest = cell;
                let mut omega = Vec::with_capacity(spec.n_spins);
                for _ in 0..spec.n_spins {
                    omega.push(hz_to_rad_per_us(linspace(
                        spec.freq_range_hz,
                        spec.freq_points,
                        rest % spec.freq_points,
                    )));
                    rest /= spec.freq_points;
                }
                let theta: Vec<f64> = (0..spec.n_spins).map(|_| fold_angle(rng.random::<f64>() * TAU_2PI)).collect();
                omega.extend(theta);
                omega
            }
            ModelKind::Ac => {
                let SensingModel::Ac(ac) = model else { unreachable!() };
                let omega = hz_to_rad_per_us(linspace(spec.freq_range_hz, spec.freq_points, cell / spec.ratio_points));
                let ratio = linspace(spec.ratio_range, spec.ratio_points, cell % spec.ratio_points);
                AcFieldParams { omega, b: ratio * omega / ac.config().gamma }.to_location()
            }
        };
        model.canonicalize(&mut params);
        truths.push(GroundTruth { kind: spec.kind, params, seed: shot_seed });
    }
    Ok(truths)
}

/// `n` repetitions of one truth with independent shot seeds.
pub fn repeat_truth(truth: &GroundTruth, n: usize, seed: u64) -> Vec<GroundTruth> {
    (0..n).map(|i| GroundTruth { seed: derive_seed(seed, Stream::Shot, i as u64), ..truth.clone() }).collect()
}

/// Outcome of one run reduced to what the report needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub run_id: usize,
    pub n_shot: usize,
    /// Per checkpoint: metric name to value.
    pub checkpoints: Vec<(usize, BTreeMap<String, f64>)>,
    pub probe_time_us: f64,
    pub shot_wall_time_us: f64,
    pub compute_time_us: f64,
    pub elapsed_us: f64,
    pub stall_count: usize,
    pub failure: Option<String>,
}

/// Report metric holding the largest grouped median relative uncertainty.
pub const DELTA_RMS: &str = "delta_rms";

/// Reported metrics of a trace at each checkpoint: grouped relative
/// uncertainty (`<group>_rel`) and grouped ground-truth error
/// (`<group>_truth_err`).
pub fn summarize_run(trace: &RunTrace, run_id: usize) -> RunSummary {
    let checkpoints = trace
        .checkpoints
        .iter()
        .map(|c| {
            let mut m = BTreeMap::new();
            for (g, (name, rel)) in trace.groups.iter().zip(&c.summary.group_rel_uncertainty) {
                m.insert(format!("{name}_rel"), *rel);
                m.insert(format!("{name}_truth_err"), c.group_truth_err(g));
            }
            (c.n_shot, m)
        })
        .collect();
    RunSummary {
        mode: trace.mode,
        run_id,
        n_shot: trace.n_shot(),
        checkpoints,
        probe_time_us: trace.probe_time_us,
        shot_wall_time_us: trace.shot_wall_time_us,
        compute_time_us: trace.compute_time_us,
        elapsed_us: trace.elapsed_us(),
        stall_count: trace.stall_count,
        failure: trace.failure.clone(),
    }
}

/// Lower median: the `floor((n - 1) / 2)`-th smallest value. `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mode: Mode,
    pub n_shot: usize,
    pub metric: String,
    pub median: f64,
    /// Runs that contributed.
    pub n_runs: usize,
}

/// Componentwise lower medians over runs, per mode, checkpoint and metric.
/// [`BenchmarkReport::from_runs`] adds a `delta_rms` row per checkpoint: the
/// largest median among the `<group>_rel` metrics.
/// Failed runs are left out; a checkpoint only counts runs that reached it.
pub fn aggregate_medians(runs: &[RunSummary]) -> Vec<ReportRow> {
    let mut pooled: BTreeMap<(Mode, usize, String), Vec<f64>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.failure.is_none()) {
        for (n, metrics) in &r.checkpoints {
            for (name, v) in metrics {
                pooled.entry((r.mode, *n, name.clone())).or_default().push(*v);
            }
        }
    }
    pooled
        .into_iter()
        .map(|((mode, n_shot, metric), v)| ReportRow {
            mode,
            n_shot,
            metric,
            median: lower_median(&v).expect("pooled lists are non-empty"),
            n_runs: v.len(),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModeTotals {
    pub runs: usize,
    pub failed: usize,
    pub probe_time_us: f64,
    pub shot_wall_time_us: f64,
    pub compute_time_us: f64,
    pub elapsed_us: f64,
    pub stall_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunSummary>,
    pub totals: BTreeMap<Mode, ModeTotals>,
}

impl BenchmarkReport {
    pub fn from_runs(mut runs: Vec<RunSummary>) -> Self {
        runs.sort_by_key(|r| (r.mode, r.run_id));
        let mut totals: BTreeMap<Mode, ModeTotals> = BTreeMap::new();
        for r in &runs {
            let t = totals.entry(r.mode).or_default();
            t.runs += 1;
            t.failed += r.failure.is_some() as usize;
            t.probe_time_us += r.probe_time_us;
            t.shot_wall_time_us += r.shot_wall_time_us;
            t.compute_time_us += r.compute_time_us;
            t.elapsed_us += r.elapsed_us;
            t.stall_count += r.stall_count;
        }
        let mut rows = aggregate_medians(&runs);
        let mut delta: BTreeMap<(Mode, usize), (f64, usize)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.metric.ends_with("_rel")) {
            let e = delta.entry((r.mode, r.n_shot)).or_insert((f64::NEG_INFINITY, r.n_runs));
            e.0 = e.0.max(r.median);
        }
        rows.extend(delta.into_iter().map(|((mode, n_shot), (median, n_runs))| ReportRow {
            mode,
            n_shot,
            metric: DELTA_RMS.to_string(),
            median,
            n_runs,
        }));
        rows.sort_by(|a, b| (a.mode, a.n_shot, &a.metric).cmp(&(b.mode, b.n_shot, &b.metric)));
        BenchmarkReport { rows, runs, totals }
    }

    pub fn median(&self, mode: Mode, n_shot: usize, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.mode == mode && r.n_shot == n_shot && r.metric == metric).map(|r| r.median)
    }

    /// Median curve of one metric, sorted by checkpoint.
    pub fn curve(&self, mode: Mode, metric: &str) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.mode == mode && r.metric == metric).map(|r| (r.n_shot, r.median)).collect()
    }

    pub fn modes(&self) -> Vec<Mode> {
        self.totals.keys().copied().collect()
    }
}

/// Seed of the run for combination `i`, shared by all modes.
pub fn run_seed(campaign_seed: u64, i: usize) -> u64 {
    derive_seed(campaign_seed, Stream::Run, i as u64)
}

/// One run per truth and per configuration on a pool of `workers` threads.
/// Each configuration's seed is replaced by the per-combination run seed.
pub fn run_campaign<M: LikelihoodModel>(
    model: &M,
    grid: &ControlGrid,
    truths: &[GroundTruth],
    configs: &[RunConfig],
    campaign_seed: u64,
    workers: usize,
) -> Result<BenchmarkReport> {
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, &RunConfig)> = configs.iter().flat_map(|c| (0..truths.len()).map(move |i| (i, c))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, base)| {
                let cfg = RunConfig { seed: run_seed(campaign_seed, i), ..base.clone() };
                let trace = run(model, grid, &truths[i], &cfg)?;
                log::debug!("{} run {i} done after {} shots", cfg.mode, trace.n_shot());
                Ok(summarize_run(&trace, i))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchmarkReport::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AcModel, AcModelConfig, NuclearModel, NuclearModelConfig};

    fn nuclear(n: usize) -> SensingModel {
        SensingModel::Nuclear(NuclearModel::new(NuclearModelConfig::with_spins(n)).unwrap())
    }

    #[test]
    fn default_sweep_sizes() {
        assert_eq!(generate_sweep(&SweepSpec::nuclear(2), &nuclear(2), 1).unwrap().len(), 900);
        assert_eq!(generate_sweep(&SweepSpec::nuclear(3), &nuclear(3), 1).unwrap().len(), 1140);
        let ac = SensingModel::Ac(AcModel::new(AcModelConfig::default()).unwrap());
        let truths = generate_sweep(&SweepSpec::ac(), &ac, 1).unwrap();
        assert_eq!(truths.len(), 400);
        for t in &truths {
            assert!(ac.contains(&t.params), "{:?}", t.params);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_canonical() {
        let m = nuclear(2);
        let mut spec = SweepSpec::nuclear(2);
        spec.n_bench = 50;
        let a = generate_sweep(&spec, &m, 4).unwrap();
        assert_eq!(a, generate_sweep(&spec, &m, 4).unwrap());
        for t in &a {
            assert!(t.params[0] <= t.params[1]);
            assert!(t.params[2..].iter().all(|th| (0.0..=std::f64::consts::PI).contains(th)));
        }
        spec.n_bench = 901;
        assert!(generate_sweep(&spec, &m, 4).is_err());
    }

    #[test]
    fn median_convention() {
        assert_eq!(lower_median(&[0.01, 0.02, 0.03]), Some(0.02));
        assert_eq!(lower_median(&[0.04, 0.01, 0.03, 0.02]), Some(0.02));
        assert_eq!(lower_median(&[]), None);
    }

    fn summary(mode: Mode, run_id: usize, v: f64) -> RunSummary {
        RunSummary {
            mode,
            run_id,
            n_shot: 10,
            checkpoints: vec![(10, BTreeMap::from([("x_rel".to_string(), v), ("y_rel".to_string(), v / 2.0)]))],
            probe_time_us: 0.0,
            shot_wall_time_us: 0.0,
            compute_time_us: 0.0,
            elapsed_us: 0.0,
            stall_count: 0,
            failure: None,
        }
    }

    #[test]
    fn single_run_report_is_identity() {
        let r = BenchmarkReport::from_runs(vec![summary(Mode::Sync, 0, 0.25)]);
        assert_eq!(r.median(Mode::Sync, 10, "x_rel"), Some(0.25));
        assert_eq!(r.median(Mode::Sync, 10, DELTA_RMS), Some(0.25));
    }

    #[test]
    fn failed_runs_are_excluded() {
        let mut bad = summary(Mode::Sync, 1, 100.0);
        bad.failure = Some("degenerate".into());
        let r = BenchmarkReport::from_runs(vec![summary(Mode::Sync, 0, 0.25), bad]);
        assert_eq!(r.median(Mode::Sync, 10, "x_rel"), Some(0.25));
        assert_eq!(r.totals[&Mode::Sync].failed, 1);
    }
}
