//! Measurement loop: synchronous adaptive, asynchronous adaptive with delayed
//! data, and the non-adaptive baseline.

use std::fmt;
use std::str::FromStr;
use std::sync::mpsc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eig::{sample_batch, BatchPolicy, ControlGrid, EigEngine, Utility};
use crate::error::{Error, Result};
use crate::models::{LikelihoodModel, ParamGroup};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::sim::{GroundTruth, Instrument, ShotRecord, Simulator};
use crate::smc::{resample_liu_west, summarize, ParticleCloud, PosteriorSummary, ResamplerConfig};

/// Default checkpoint schedule (shots).
pub const DEFAULT_CHECKPOINTS: [usize; 12] = [15, 30, 75, 150, 300, 600, 1050, 1350, 2400, 4800, 9975, 18000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
    Nonadaptive,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sync, Mode::Async, Mode::Nonadaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
            Mode::Nonadaptive => "nonadaptive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown mode `{s}` (expected sync, async or nonadaptive)")))
    }
}

/// Simulated optimizer latency per utility table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    /// Likelihood evaluations per second assumed for the optimizer.
    pub evals_per_s: f64,
    /// Fixed cost per table, us.
    pub fixed_us: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        ComputeModel { evals_per_s: 7.18e9, fixed_us: 0.0 }
    }
}

impl ComputeModel {
    pub fn latency_us(&self, evaluations: usize) -> f64 {
        self.fixed_us + evaluations as f64 / self.evals_per_s * 1e6
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.evals_per_s > 0.0 && self.fixed_us >= 0.0) {
            return Err(Error::config("compute model needs a positive rate and non-negative fixed cost"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub n_shot_max: usize,
    pub n_p: usize,
    pub batch: BatchPolicy,
    /// Most recent outcomes hidden from the optimizer (async mode).
    pub delay_t: usize,
    pub utility: Utility,
    pub resampler: ResamplerConfig,
    /// Stop once every grouped relative uncertainty is below this value.
    pub stop_rel_uncertainty: Option<f64>,
    pub checkpoints: Vec<usize>,
    /// Initialization and readout time added to each shot, us.
    pub overhead_us: f64,
    pub compute: ComputeModel,
    /// Seeds the prior, batch sampling, resampling and random controls.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(mode: Mode, n_shot_max: usize, n_p: usize, n_batch: usize, seed: u64) -> Self {
        RunConfig {
            mode,
            n_shot_max,
            n_p,
            batch: BatchPolicy::new(n_batch),
            delay_t: n_batch,
            utility: Utility::default(),
            resampler: ResamplerConfig::default(),
            stop_rel_uncertainty: None,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            overhead_us: 0.0,
            compute: ComputeModel::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        self.resampler.validate()?;
        self.compute.validate()?;
        if self.n_p == 0 {
            return Err(Error::config("particle count must be at least 1"));
        }
        if !(self.overhead_us >= 0.0) {
            return Err(Error::config("per-shot overhead must be non-negative"));
        }
        if let Some(t) = self.stop_rel_uncertainty {
            if !(t > 0.0) {
                return Err(Error::config("stopping threshold must be positive"));
            }
        }
        Ok(())
    }

    /// Sorted, de-duplicated checkpoints within the run, always including
    /// zero and `n_shot_max`.
    pub fn checkpoint_schedule(&self) -> Vec<usize> {
        let mut cps: Vec<usize> = self.checkpoints.iter().copied().filter(|&c| c <= self.n_shot_max).collect();
        cps.push(0);
        cps.push(self.n_shot_max);
        cps.sort_unstable();
        cps.dedup();
        cps
    }

    /// Outcomes the optimizer may use for batch `b`.
    pub fn watermark(&self, b: usize) -> usize {
        let start = b * self.batch.n_batch;
        match self.mode {
            Mode::Async => start.saturating_sub(self.delay_t),
            _ => start,
        }
    }

    fn batch_count(&self) -> usize {
        self.n_shot_max.div_ceil(self.batch.n_batch)
    }
}

/// Posterior summary after `n_shot` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n_shot: usize,
    pub summary: PosteriorSummary,
    /// `|mean - truth| / |truth|` per parameter.
    pub truth_rel_err: Vec<f64>,
}

impl Checkpoint {
    /// Root-mean-square truth error over a parameter group.
    pub fn group_truth_err(&self, group: &ParamGroup) -> f64 {
        let ms = group.indices.iter().map(|&j| self.truth_rel_err[j].powi(2)).sum::<f64>() / group.indices.len() as f64;
        ms.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub mode: Mode,
    pub param_names: Vec<String>,
    pub groups: Vec<ParamGroup>,
    pub records: Vec<ShotRecord>,
    pub checkpoints: Vec<Checkpoint>,
    /// Simulated completion time of each shot on the run timeline, us.
    pub timeline_us: Vec<f64>,
    pub probe_time_us: f64,
    pub shot_wall_time_us: f64,
    /// Simulated optimizer time spent on batches that were used, us.
    pub compute_time_us: f64,
    /// Async batches that were not ready when the instrument needed them.
    pub stall_count: usize,
    pub resample_count: usize,
    pub jitter_skipped: usize,
    /// Set when the run ended on an estimator failure.
    pub failure: Option<String>,
    pub final_cloud: ParticleCloud,
}

impl RunTrace {
    pub fn n_shot(&self) -> usize {
        self.records.len()
    }

    pub fn elapsed_us(&self) -> f64 {
        self.timeline_us.last().copied().unwrap_or(0.0)
    }

    pub fn checkpoint(&self, n_shot: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.n_shot == n_shot)
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("every trace has the prior checkpoint")
    }
}

struct Batch {
    controls: Vec<f64>,
    watermark: Option<usize>,
    compute_us: f64,
}

enum Flow {
    Continue,
    Stop,
}

/// Owns the estimator cloud and everything that follows from applied outcomes.
struct Estimator<'a, M: LikelihoodModel> {
    model: &'a M,
    cfg: &'a RunConfig,
    sim: Simulator<'a, M>,
    truth: Vec<f64>,
    cloud: ParticleCloud,
    likelihood: Vec<f64>,
    schedule: Vec<usize>,
    next_checkpoint: usize,
    clock_us: f64,
    optimizer_free_us: f64,
    trace: RunTrace,
}

impl<'a, M: LikelihoodModel> Estimator<'a, M> {
    fn new(model: &'a M, grid: &'a ControlGrid, truth: &'a GroundTruth, cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sim = Simulator::new(model, truth, grid, cfg.overhead_us)?;
        let cloud = model.prior_cloud(cfg.n_p, derive_seed(cfg.seed, Stream::Prior, 0))?;
        let mut canonical = truth.params.clone();
        model.canonicalize(&mut canonical);
        let trace = RunTrace {
            mode: cfg.mode,
            param_names: model.param_names(),
            groups: model.param_groups(),
            records: Vec::with_capacity(cfg.n_shot_max),
            checkpoints: Vec::new(),
            timeline_us: Vec::with_capacity(cfg.n_shot_max),
            probe_time_us: 0.0,
            shot_wall_time_us: 0.0,
            compute_time_us: 0.0,
            stall_count: 0,
            resample_count: 0,
            jitter_skipped: 0,
            failure: None,
            final_cloud: cloud.clone(),
        };
        let mut est = Estimator {
            model,
            cfg,
            sim,
            truth: canonical,
            likelihood: vec![0.0; cloud.len()],
            cloud,
            schedule: cfg.checkpoint_schedule(),
            next_checkpoint: 0,
            clock_us: 0.0,
            optimizer_free_us: 0.0,
            trace,
        };
        est.checkpoint_if_due();
        Ok(est)
    }

    fn applied(&self) -> usize {
        self.trace.records.len()
    }

    fn checkpoint_if_due(&mut self) {
        let n = self.applied();
        if self.schedule.get(self.next_checkpoint) == Some(&n) {
            self.push_checkpoint();
            self.next_checkpoint += 1;
        }
    }

    fn push_checkpoint(&mut self) {
        let summary = summarize(&self.cloud, &self.trace.groups);
        let truth_rel_err = summary
            .mean
            .iter()
            .zip(&self.truth)
            .map(|(m, t)| if *t == 0.0 { f64::INFINITY } else { (m - t).abs() / t.abs() })
            .collect();
        self.trace.checkpoints.push(Checkpoint { n_shot: self.applied(), summary, truth_rel_err });
    }

    /// Places a batch on the simulated timeline; returns when its first shot may start.
    fn schedule_batch(&mut self, b: usize, batch: &Batch) -> f64 {
        let Some(w) = batch.watermark else {
            return self.clock_us;
        };
        let data_ready = if w == 0 { 0.0 } else { self.trace.timeline_us[w - 1] };
        let ready = data_ready.max(self.optimizer_free_us) + batch.compute_us;
        self.optimizer_free_us = ready;
        self.trace.compute_time_us += batch.compute_us;
        if self.cfg.mode == Mode::Async && b > 0 && ready > self.clock_us {
            self.trace.stall_count += 1;
        }
        ready
    }

    fn run_batch(&mut self, b: usize, batch: Batch, mut after_shot: impl FnMut(&Self) -> Result<()>) -> Result<Flow> {
        let mut start = self.clock_us.max(self.schedule_batch(b, &batch));
        for tau in batch.controls {
            if self.applied() >= self.cfg.n_shot_max {
                break;
            }
            let m = self.sim.measure(tau)?;
            let shot = self.applied();
            self.trace.records.push(ShotRecord {
                shot_index: shot,
                batch_id: b,
                tau_us: tau,
                outcome: m.outcome,
                probe_time_us: m.probe_time_us,
                wall_time_us: m.wall_time_us,
                watermark: batch.watermark,
            });
            self.trace.probe_time_us += m.probe_time_us;
            self.trace.shot_wall_time_us += m.wall_time_us;
            self.clock_us = start + m.wall_time_us;
            start = self.clock_us;
            self.trace.timeline_us.push(self.clock_us);

            if let Flow::Stop = self.update(tau, m.outcome, shot)? {
                return Ok(Flow::Stop);
            }
            after_shot(self)?;
        }
        Ok(if self.applied() >= self.cfg.n_shot_max { Flow::Stop } else { Flow::Continue })
    }

    fn update(&mut self, tau: f64, outcome: u8, shot: usize) -> Result<Flow> {
        self.model.prob_zero_batch(self.cloud.locations(), tau, &mut self.likelihood);
        if outcome == 1 {
            for l in &mut self.likelihood {
                *l = 1.0 - *l;
            }
        }
        match self.cloud.bayes_update(&self.likelihood) {
            Ok(()) => {}
            Err(e @ Error::DegenerateUpdate { .. }) => {
                log::warn!("run stopped after {} shots: {e}", self.applied());
                self.trace.failure = Some(e.to_string());
                return Ok(Flow::Stop);
            }
            Err(e) => return Err(e),
        }
        if self.cfg.resampler.should_resample(&self.cloud) {
            let r = resample_liu_west(
                &self.cloud,
                self.model,
                &self.cfg.resampler,
                derive_seed(self.cfg.seed, Stream::Resample, shot as u64),
            )?;
            self.cloud = r.cloud;
            self.trace.resample_count += 1;
            self.trace.jitter_skipped += r.jitter_skipped as usize;
        }
        self.checkpoint_if_due();
        if let Some(threshold) = self.cfg.stop_rel_uncertainty {
            if summarize(&self.cloud, &self.trace.groups).max_group_rel() < threshold {
                return Ok(Flow::Stop);
            }
        }
        Ok(Flow::Continue)
    }

    fn finish(mut self) -> RunTrace {
        if self.trace.checkpoints.last().map(|c| c.n_shot) != Some(self.applied()) {
            self.push_checkpoint();
        }
        self.trace.final_cloud = self.cloud;
        self.trace
    }
}

fn batch_seed(cfg: &RunConfig, b: usize) -> u64 {
    derive_seed(cfg.seed, Stream::Batch, b as u64)
}

/// Runs a full trace in `cfg.mode`.
pub fn run<M: LikelihoodModel>(
    model: &M,
    grid: &ControlGrid,
    truth: &GroundTruth,
    cfg: &RunConfig,
) -> Result<RunTrace> {
    match cfg.mode {
        Mode::Sync => run_sync(model, grid, truth, cfg),
        Mode::Async => run_async(model, grid, truth, cfg),
        Mode::Nonadaptive => run_nonadaptive(model, grid, truth, cfg),
    }
}

/// Adaptive loop where every batch is optimized on all data taken so far.
pub fn run_sync<M: LikelihoodModel>(
    model: &M,
    grid: &ControlGrid,
    truth: &GroundTruth,
    cfg: &RunConfig,
) -> Result<RunTrace> {
    let mut est = Estimator::new(model, grid, truth, cfg)?;
    let engine = EigEngine::new(model, grid);
    for b in 0..cfg.batch_count() {
        let table = engine.table(&est.cloud, cfg.utility);
        let batch = Batch {
            controls: sample_batch(&table, grid, &cfg.batch, batch_seed(cfg, b))?,
            watermark: Some(est.applied()),
            compute_us: cfg.compute.latency_us(engine.evaluations(&est.cloud)),
        };
        if let Flow::Stop = est.run_batch(b, batch, |_| Ok(()))? {
            break;
        }
    }
    Ok(est.finish())
}

/// Baseline with controls drawn uniformly from the grid.
pub fn run_nonadaptive<M: LikelihoodModel>(
    model: &M,
    grid: &ControlGrid,
    truth: &GroundTruth,
    cfg: &RunConfig,
) -> Result<RunTrace> {
    let mut est = Estimator::new(model, grid, truth, cfg)?;
    for b in 0..cfg.batch_count() {
        let mut rng = rng_for(cfg.seed, Stream::Control, b as u64);
        let controls = (0..cfg.batch.n_batch).map(|_| grid.taus()[rng.random_range(0..grid.len())]).collect();
        let batch = Batch { controls, watermark: None, compute_us: 0.0 };
        if let Flow::Stop = est.run_batch(b, batch, |_| Ok(()))? {
            break;
        }
    }
    Ok(est.finish())
}

struct Snapshot {
    batch_id: usize,
    watermark: usize,
    cloud: ParticleCloud,
}

/// Adaptive loop where the optimizer runs on its own thread and sees the
/// cloud without the latest `delay_t` outcomes. Outcomes are applied to the
/// estimator as they arrive.
pub fn run_async<M: LikelihoodModel>(
    model: &M,
    grid: &ControlGrid,
    truth: &GroundTruth,
    cfg: &RunConfig,
) -> Result<RunTrace> {
    let mut est = Estimator::new(model, grid, truth, cfg)?;
    let n_batches = cfg.batch_count();
    std::thread::scope(|s| {
        let (snap_tx, snap_rx) = mpsc::channel::<Snapshot>();
        let (batch_tx, batch_rx) = mpsc::channel::<Result<(Snapshot, Vec<f64>)>>();
        s.spawn(move || {
            let engine = EigEngine::new(model, grid);
            for snap in snap_rx {
                let table = engine.table(&snap.cloud, cfg.utility);
                let controls = sample_batch(&table, grid, &cfg.batch, batch_seed(cfg, snap.batch_id));
                if batch_tx.send(controls.map(|c| (snap, c))).is_err() {
                    break;
                }
            }
        });

        let mut requested = 0;
        let mut request = |est: &Estimator<'_, M>| -> Result<()> {
            while requested < n_batches && cfg.watermark(requested) <= est.applied() {
                debug_assert_eq!(cfg.watermark(requested), est.applied());
                let snap = Snapshot { batch_id: requested, watermark: est.applied(), cloud: est.cloud.clone() };
                snap_tx.send(snap).map_err(|_| Error::contract("optimizer thread exited early"))?;
                requested += 1;
            }
            Ok(())
        };
        request(&est)?;
        for b in 0..n_batches {
            let (snap, controls) = batch_rx.recv().map_err(|_| Error::contract("optimizer thread exited early"))??;
            if snap.batch_id != b {
                return Err(Error::contract("optimizer returned batches out of order"));
            }
            let batch = Batch {
                controls,
                watermark: Some(snap.watermark),
                compute_us: cfg.compute.latency_us(snap.cloud.len() * grid.len()),
            };
            if let Flow::Stop = est.run_batch(b, batch, &mut request)? {
                break;
            }
        }
        Ok::<(), Error>(())
    })?;
    Ok(est.finish())
}
